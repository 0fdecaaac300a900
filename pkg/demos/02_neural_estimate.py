"""
Training a neural MI estimator and checking it against Monte Carlo
===================================================================

The statistics network sees (position, measurement) pairs and learns to
tell real pairs from shuffled ones.  The Donsker-Varadhan bound it
maximizes is a lower bound on MI, so the training trace should climb
towards the Monte Carlo value.  Pass an epoch count to train longer:

    python demos/02_neural_estimate.py 50000
"""
import sys
import time

from mineloc import NoiseModel, ReferencePlacement, Scene, TrainConfig, mc_mi, square_room, train
from mineloc.mine import SceneSource

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
room = square_room()
scene = Scene.build(room, ReferencePlacement.from_xy([[0.5, 0.5], [3.5, 0.5], [0.5, 3.5], [3.5, 3.5]], 2.5))
noise = NoiseModel("gaussian", 0.2)

ref = mc_mi(scene, noise, D=1000, seed=0).value
print(f"Monte Carlo reference: {ref:.4f} nats")

cfg = TrainConfig(epochs=epochs, window=max(1, epochs // 10), preset="small", seed=0)
t = time.perf_counter()
net, trace, _ = train(SceneSource(scene, noise, seed=0), cfg)
print(f"trained {epochs} epochs in {time.perf_counter() - t:.0f} s")

# Per-epoch estimates are noisy; the trailing-window mean is the estimate.
for e in range(0, epochs, max(1, epochs // 10)):
    print(f"  epoch {e:6d}  I_N {trace.values[e]:.3f}  lr {trace.lr[e]:.2e}")
est = trace.estimate(cfg.window)
print(f"trailing-{cfg.window} estimate {est:.4f} nats, {100 * (est - ref) / ref:+.1f}% vs Monte Carlo")
