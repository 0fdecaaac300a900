"""Mutual information neural estimation with a dense batch-normalized network.

The statistics network is P blocks of (dense, batch norm, ELU) followed by a
scalar dense output.  Training maximizes the Donsker-Varadhan bound

    I_N = mean(T(x, z)) - log mean(exp(T(x, z_pi)))

where ``z_pi`` is the measurement batch under a random permutation.  Joint
and shuffled rows go through a single forward pass so that both terms see
the same batch-norm statistics.  Forward, backward and Adam are written out
in numpy, with the batch-norm/ELU blocks fused into numba kernels;
everything runs in float64.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import rng
from .env import ReferencePlacement, Scene
from .measure import NoiseModel, sample_realization

PRESETS = {"small": (32, 2), "medium": (128, 3), "large": (256, 4)}
CHECKPOINT_FORMAT = "mineloc-mine/1"


class DivergenceError(FloatingPointError):
    """Training produced a non-finite estimate; ``trace`` holds the epochs before it."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


class StatisticsNetwork:
    """Parameters of T_theta stored in one flat vector with named views.

    Hidden dense layers carry no bias: the batch-norm shift that follows
    makes it redundant.
    """

    def __init__(self, n_inputs: int, width: int, depth: int, seed: int = 0, bn_eps: float = 1e-8):
        if depth < 1 or width < 1 or n_inputs < 1:
            raise ValueError("n_inputs, width and depth must be positive")
        self.n_inputs, self.width, self.depth, self.bn_eps = n_inputs, width, depth, bn_eps
        shapes = []
        fan_in = n_inputs
        for k in range(depth):
            shapes += [(f"W{k}", (fan_in, width)), (f"gamma{k}", (width,)), (f"beta{k}", (width,))]
            fan_in = width
        shapes += [("w_out", (width,)), ("b_out", (1,))]
        self._shapes = shapes
        self.theta = np.zeros(sum(int(np.prod(s)) for _, s in shapes))
        self._slices = []
        off = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self._slices.append((name, slice(off, off + size), shape))
            off += size
        self.params = _views(self, self.theta)
        self.init(seed)

    @classmethod
    def from_preset(cls, preset: str, n_inputs: int, seed: int = 0, **kw) -> "StatisticsNetwork":
        try:
            width, depth = PRESETS[preset]
        except KeyError:
            raise ValueError(f"unknown model preset {preset!r}; choose from {sorted(PRESETS)}") from None
        return cls(n_inputs, width, depth, seed, **kw)

    def init(self, seed: int):
        """Uniform fan-in scaling for dense weights, unit BN scale, zero shifts and output bias."""
        gen = rng.stream(seed, "mine-init")
        for name, shape in self._shapes:
            p = self.params[name]
            if name.startswith("W") or name == "w_out":
                bound = 1.0 / math.sqrt(shape[0])
                p[...] = gen.uniform(-bound, bound, size=shape)
            elif name.startswith("gamma"):
                p[...] = 1.0
            else:
                p[...] = 0.0

    @property
    def arch(self) -> dict:
        return {"n_inputs": self.n_inputs, "width": self.width, "depth": self.depth, "bn_eps": self.bn_eps}

    def copy(self) -> "StatisticsNetwork":
        net = StatisticsNetwork(self.n_inputs, self.width, self.depth, 0, self.bn_eps)
        net.theta[:] = self.theta
        return net

    def __call__(self, batch) -> np.ndarray:
        return forward(self, batch)[0]


@njit(cache=True)
def _bn_forward(a, gamma, beta, eps):
    """Train-mode batch norm with column statistics over rows; returns (y, xhat, inv_std)."""
    n, q = a.shape
    mean = np.zeros(q)
    var = np.zeros(q)
    for i in range(n):
        for j in range(q):
            mean[j] += a[i, j]
    mean /= n
    for i in range(n):
        for j in range(q):
            d = a[i, j] - mean[j]
            var[j] += d * d
    inv = 1.0 / np.sqrt(var / n + eps)
    xhat = np.empty_like(a)
    y = np.empty_like(a)
    for i in range(n):
        for j in range(q):
            xh = (a[i, j] - mean[j]) * inv[j]
            xhat[i, j] = xh
            y[i, j] = gamma[j] * xh + beta[j]
    return y, xhat, inv


@njit(cache=True)
def _bn_elu_backward(dh, xhat, inv, dact, gamma):
    """Gradients w.r.t. the pre-normalization activations, gamma and beta."""
    n, q = dh.shape
    ggamma = np.zeros(q)
    gbeta = np.zeros(q)
    dy = np.empty_like(dh)
    for i in range(n):
        for j in range(q):
            v = dh[i, j] * dact[i, j]
            dy[i, j] = v
            gbeta[j] += v
            ggamma[j] += v * xhat[i, j]
    da = np.empty_like(dh)
    for i in range(n):
        for j in range(q):
            da[i, j] = gamma[j] * inv[j] * (dy[i, j] - gbeta[j] / n - xhat[i, j] * ggamma[j] / n)
    return da, ggamma, gbeta


def forward(net: StatisticsNetwork, batch):
    """Scores for each row of ``batch`` using the batch's own BN statistics.

    Returns ``(scores, cache)``; the cache feeds :func:`backward`.
    """
    h = np.asarray(batch, dtype=float)
    if h.ndim != 2 or h.shape[1] != net.n_inputs:
        raise ValueError(f"batch must have shape (n, {net.n_inputs})")
    p = net.params
    cache = []
    for k in range(net.depth):
        a = h @ p[f"W{k}"]
        y, xhat, inv = _bn_forward(a, p[f"gamma{k}"], p[f"beta{k}"], net.bn_eps)
        # ELU; exp runs vectorized in numpy, much faster than scalar exp in numba.
        e = np.expm1(np.minimum(y, 0.0))
        out = np.maximum(y, 0.0) + e
        dact = e + 1.0
        if not np.isfinite(out.sum()):
            raise FloatingPointError(f"non-finite activation in hidden layer {k}")
        cache.append((h, xhat, inv, dact))
        h = out
    scores = h @ p["w_out"] + p["b_out"][0]
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError(f"non-finite activation in output layer {net.depth}")
    cache.append(h)
    return scores, cache


def logsumexp(v) -> float:
    v = np.asarray(v, dtype=float)
    m = np.max(v)
    return float(m + np.log(np.sum(np.exp(v - m))))


def dv_objective(scores_joint, scores_marginal) -> float:
    """Donsker-Varadhan estimate in nats, stabilized by log-sum-exp."""
    sj = np.asarray(scores_joint, dtype=float)
    sm = np.asarray(scores_marginal, dtype=float)
    if sj.size == 0 or sm.size == 0:
        raise ValueError("score vectors must be non-empty")
    return float(np.mean(sj) - (logsumexp(sm) - math.log(sm.size)))


def dv_score_grad(scores_joint, scores_marginal):
    """Gradient of the DV estimate w.r.t. the scores: 1/N per joint row, -softmax per marginal row."""
    sj = np.asarray(scores_joint, dtype=float)
    sm = np.asarray(scores_marginal, dtype=float)
    e = np.exp(sm - sm.max())
    return np.full(sj.size, 1.0 / sj.size), -e / e.sum()


def backward(net: StatisticsNetwork, cache, scores_joint, scores_marginal) -> np.ndarray:
    """Flat gradient of the loss -I_N w.r.t. ``net.theta``.

    ``cache`` must come from a forward pass over the joint rows stacked on
    top of the marginal rows.
    """
    gj, gm = dv_score_grad(scores_joint, scores_marginal)
    ds = -np.concatenate([gj, gm])
    h_last = cache[-1]
    if ds.shape[0] != h_last.shape[0]:
        raise ValueError(f"{ds.shape[0]} scores do not match a cached batch of {h_last.shape[0]} rows")
    return backprop(net, cache, ds)


def backprop(net: StatisticsNetwork, cache, dscores) -> np.ndarray:
    """Flat gradient of sum(dscores * scores) w.r.t. ``net.theta``."""
    p = net.params
    grad = np.zeros_like(net.theta)
    gp = _views(net, grad)
    h_last = cache[-1]
    gp["w_out"][...] = h_last.T @ dscores
    gp["b_out"][0] = dscores.sum()
    dh = dscores[:, None] * p["w_out"]
    for k in range(net.depth - 1, -1, -1):
        h_in, xhat, inv, dact = cache[k]
        da, gp[f"gamma{k}"][...], gp[f"beta{k}"][...] = _bn_elu_backward(dh, xhat, inv, dact, p[f"gamma{k}"])
        gp[f"W{k}"][...] = h_in.T @ da
        if k:
            dh = da @ p[f"W{k}"].T
    return grad


def _views(net, flat):
    return {name: flat[sl].reshape(shape) for name, sl, shape in net._slices}


class Adam:
    """Adam with bias correction, updating a flat parameter vector in place."""

    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        self.v += (1 - b2) * grad * grad
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        theta -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 500_000
    batch_size: int | None = None   # None: one row per grid cell
    lr0: float = 1e-3
    decay: float = 0.98
    decay_epochs: float = 2000.0
    window: int = 20_000
    seed: int = 0
    preset: str = "small"
    ema: bool = False
    early_stop_std: float | None = None

    def __post_init__(self):
        if self.ema:
            raise ValueError("EMA smoothing of the exp-term denominator is not supported: "
                             "it destabilizes training; the log-sum-exp form is used instead")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size is not None and self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.window < 1 or (self.epochs and self.window > self.epochs):
            raise ValueError("averaging window must lie in [1, epochs]")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown model preset {self.preset!r}")

    def lr(self, epoch) -> float:
        return self.lr0 * self.decay ** (epoch / self.decay_epochs)


def lr_schedule(epoch, lr0=1e-3, decay=0.98, every=2000.0):
    return lr0 * decay ** (np.asarray(epoch) / every)


@dataclass
class MineTrace:
    values: np.ndarray
    lr: np.ndarray
    start_epoch: int = 0

    def __len__(self):
        return len(self.values)

    def estimate(self, window: int) -> float:
        return estimate(self, window)

    def extend(self, other: "MineTrace") -> "MineTrace":
        return MineTrace(np.concatenate([self.values, other.values]),
                         np.concatenate([self.lr, other.lr]), self.start_epoch)


def estimate(trace, window: int) -> float:
    """Mean of the trailing ``window`` per-epoch estimates."""
    values = np.asarray(getattr(trace, "values", trace), dtype=float)
    if window < 1 or len(values) == 0:
        raise ValueError("empty averaging window")
    if window > len(values):
        raise ValueError(f"window {window} exceeds trace length {len(values)}")
    return float(np.mean(values[-window:]))


# -- data sources ---------------------------------------------------------
# A source returns the joint batch (x, z) for an epoch index, deterministically.

@dataclass
class SceneSource:
    """One fresh measurement realization per grid cell and epoch."""

    scene: Scene
    noise: NoiseModel
    seed: int = 0
    batch_size: int | None = None

    @property
    def n_inputs(self) -> int:
        return 2 + self.scene.L

    def batch(self, epoch: int):
        m = sample_realization(self.scene, self.noise, self.seed, epoch, stream="mine-data")
        x = self.scene.grid.xy
        if self.batch_size is not None and self.batch_size < len(x):
            idx = rng.block(self.seed, "mine-cells", epoch).choice(len(x), self.batch_size, replace=False)
            return x[idx], m[idx]
        return x, m


@dataclass
class GaussianChannelSource:
    """Scalar x ~ N(0, 1) and z = rho x + sqrt(1 - rho^2) eps; MI = -log(1 - rho^2) / 2."""

    rho: float
    batch_size: int = 512
    seed: int = 0
    n_inputs: int = field(default=2, init=False)

    def batch(self, epoch: int):
        g = rng.block(self.seed, "mine-data", epoch)
        x = g.standard_normal((self.batch_size, 1))
        z = self.rho * x + math.sqrt(1 - self.rho ** 2) * g.standard_normal((self.batch_size, 1))
        return x, z

    @property
    def true_mi(self) -> float:
        return -0.5 * math.log(1 - self.rho ** 2)


@dataclass
class IndependentSource:
    """Positions and measurements drawn independently, so the true MI is zero."""

    dim_x: int = 2
    dim_z: int = 4
    batch_size: int = 400
    seed: int = 0

    @property
    def n_inputs(self) -> int:
        return self.dim_x + self.dim_z

    def batch(self, epoch: int):
        g = rng.block(self.seed, "mine-data", epoch)
        return g.uniform(0, 4, (self.batch_size, self.dim_x)), g.normal(3, 1, (self.batch_size, self.dim_z))


def shuffle_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return rng.block(seed, "mine-shuffle", epoch).permutation(n)


def joint_and_marginal(x, z, perm) -> np.ndarray:
    """Stack [x, z] on top of [x, z[perm]]; only measurement columns are permuted."""
    n = len(x)
    out = np.empty((2 * n, x.shape[1] + z.shape[1]))
    out[:n, :x.shape[1]] = x
    out[n:, :x.shape[1]] = x
    out[:n, x.shape[1]:] = z
    out[n:, x.shape[1]:] = z[perm]
    return out


def train(source, cfg: TrainConfig, net: StatisticsNetwork | None = None, *,
          optimizer: Adam | None = None, start_epoch: int = 0, lr_offset: int = 0):
    """Run ``cfg.epochs`` epochs of gradient ascent on the DV bound.

    Epoch ``e`` (counted from ``start_epoch``) uses data block ``e`` of the
    source, shuffle block ``e`` of ``cfg.seed`` and learning rate
    ``cfg.lr(e - lr_offset)``.  Passing the returned optimizer back in with
    ``start_epoch`` set to the epochs already done continues a run exactly.

    Returns ``(net, trace, optimizer)``.
    """
    if net is None:
        net = StatisticsNetwork.from_preset(cfg.preset, source.n_inputs, cfg.seed)
    if net.n_inputs != source.n_inputs:
        raise ValueError(f"network expects {net.n_inputs} inputs, source provides {source.n_inputs}")
    opt = optimizer or Adam(net.theta.size)
    values = np.empty(cfg.epochs)
    lrs = np.empty(cfg.epochs)
    for t in range(cfg.epochs):
        e = start_epoch + t
        x, z = source.batch(e)
        n = len(x)
        perm = shuffle_permutation(cfg.seed, e, n)
        scores, cache = forward(net, joint_and_marginal(x, z, perm))
        sj, sm = scores[:n], scores[n:]
        est = dv_objective(sj, sm)
        if not math.isfinite(est):
            raise DivergenceError(f"non-finite estimate at epoch {e}",
                                  MineTrace(values[:t].copy(), lrs[:t].copy(), start_epoch))
        lr = cfg.lr(e - lr_offset)
        opt.step(net.theta, backward(net, cache, sj, sm), lr)
        values[t], lrs[t] = est, lr
        if (cfg.early_stop_std is not None and t + 1 >= cfg.window and (t + 1) % 1000 == 0
                and np.std(values[t + 1 - cfg.window:t + 1]) <= cfg.early_stop_std):
            values, lrs = values[:t + 1], lrs[:t + 1]
            break
    return net, MineTrace(values, lrs, start_epoch), opt


def fine_tune(parent: StatisticsNetwork, source, cfg: TrainConfig):
    """Train a copy of ``parent`` on ``source`` with a fresh optimizer, schedule restarted at 0."""
    width, depth = PRESETS[cfg.preset]
    if (parent.width, parent.depth, parent.n_inputs) != (width, depth, source.n_inputs):
        raise ValueError(f"parent architecture {parent.arch} does not match preset {cfg.preset!r} "
                         f"with {source.n_inputs} inputs")
    return train(source, cfg, parent.copy())


def select_parent(child: ReferencePlacement, parents) -> str:
    """Id of the parent whose same-index anchors are closest on average.

    ``parents`` maps ids to placements (or is a sequence of (id, placement)).
    A parent with exactly the child's anchors is never chosen.
    """
    items = list(parents.items()) if isinstance(parents, dict) else list(parents)
    best, best_d = None, math.inf
    for pid, pl in items:
        if pl.L != child.L:
            raise ValueError(f"parent {pid!r} has {pl.L} references, child has {child.L}")
        if np.array_equal(pl.refs, child.refs):
            continue
        d = float(np.mean(np.linalg.norm(pl.refs - child.refs, axis=1)))
        if d < best_d:
            best, best_d = pid, d
    if best is None:
        raise ValueError("no eligible parent placement")
    return best


# -- persistence ----------------------------------------------------------

def save_checkpoint(path, net: StatisticsNetwork, optimizer: Adam | None = None,
                    epoch: int = 0, meta: dict | None = None) -> Path:
    """Write parameters (and optionally Adam state) as JSON; floats round-trip exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "arch": net.arch,
        "params": {name: {"shape": list(shape), "data": net.params[name].ravel().tolist()}
                   for name, shape in net._shapes},
        "epoch": int(epoch),
        "meta": meta or {},
    }
    if optimizer is not None:
        doc["adam"] = {"t": optimizer.t, "beta1": optimizer.beta1, "beta2": optimizer.beta2,
                       "eps": optimizer.eps, "m": optimizer.m.tolist(), "v": optimizer.v.tolist()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, separators=(",", ":")))
    net2, *_ = load_checkpoint(path)
    if not np.array_equal(net2.theta, net.theta):
        raise IOError(f"checkpoint {path} failed its round-trip check")
    return path


def load_checkpoint(path):
    """Return ``(net, optimizer_or_None, epoch, meta)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    a = doc["arch"]
    net = StatisticsNetwork(a["n_inputs"], a["width"], a["depth"], 0, a["bn_eps"])
    for name, shape in net._shapes:
        entry = doc["params"][name]
        if tuple(entry["shape"]) != tuple(shape):
            raise ValueError(f"{path}: parameter {name} has shape {entry['shape']}, expected {shape}")
        net.params[name][...] = np.array(entry["data"], dtype=float).reshape(shape)
    opt = None
    if "adam" in doc:
        s = doc["adam"]
        opt = Adam(net.theta.size, s["beta1"], s["beta2"], s["eps"])
        opt.t = s["t"]
        opt.m[:] = s["m"]
        opt.v[:] = s["v"]
    return net, opt, doc["epoch"], doc["meta"]


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
