"""Room geometry, grid discretization, anchor placements and visibility."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import shapely
from shapely.geometry import Polygon


class GeometryError(ValueError):
    """Invalid room, empty grid or malformed placement."""


@dataclass(frozen=True, eq=False)
class Room:
    """Polygonal floor plan with fixed UE and reference heights (meters)."""

    boundary: np.ndarray
    height: float = 3.0
    ue_height: float = 0.1
    ref_height: float = 2.5
    name: str = "room"

    def __post_init__(self):
        b = np.asarray(self.boundary, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or len(b) < 3:
            raise GeometryError("boundary must be a list of at least three (x, y) vertices")
        if np.allclose(b[0], b[-1]) and len(b) > 3:
            b = b[:-1]
        object.__setattr__(self, "boundary", b)
        poly = Polygon(b)
        if not poly.is_valid or poly.area <= 0:
            raise GeometryError("boundary is not a simple polygon")
        if not 0 < self.ue_height < self.ref_height <= self.height:
            raise GeometryError("heights must satisfy 0 < ue_height < ref_height <= height")

    @cached_property
    def polygon(self) -> Polygon:
        p = Polygon(self.boundary)
        shapely.prepare(p)
        return p

    @cached_property
    def ring(self):
        r = self.polygon.exterior
        shapely.prepare(r)
        return r

    def contains(self, xy) -> np.ndarray:
        """Strict interior test; boundary points are outside."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return shapely.contains_xy(self.polygon, xy[:, 0], xy[:, 1])

    def wall_distance(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return shapely.distance(shapely.points(xy), self.ring)

    @property
    def is_convex(self) -> bool:
        p = self.polygon
        return bool(np.isclose(p.area, p.convex_hull.area))


def square_room(side: float = 4.0, **kw) -> Room:
    kw.setdefault("name", f"square{side:g}")
    return Room(np.array([[0, 0], [side, 0], [side, side], [0, side]], dtype=float), **kw)


def l_room(side: float = 10.0, notch: float = 5.0, **kw) -> Room:
    """Square of ``side`` with the ``notch`` x ``notch`` corner at max x, max y removed."""
    s, c = side, side - notch
    kw.setdefault("name", f"L{side:g}")
    verts = [[0, 0], [s, 0], [s, c], [c, c], [c, s], [0, s]]
    return Room(np.array(verts, dtype=float), **kw)


@dataclass(frozen=True, eq=False)
class GridMap:
    """Feasible UE positions: centers of square cells strictly inside the room."""

    cell_size: float
    xy: np.ndarray
    z0: float

    @property
    def K(self) -> int:
        return len(self.xy)

    @property
    def cells(self) -> np.ndarray:
        """Cell centers as (K, 3) points at the UE height."""
        return np.column_stack([self.xy, np.full(self.K, self.z0)])

    @cached_property
    def index(self) -> dict:
        return {(round(x, 9), round(y, 9)): i for i, (x, y) in enumerate(self.xy)}

    def lookup(self, x: float, y: float) -> int:
        return self.index[(round(x, 9), round(y, 9))]


def _axis_centers(lo: float, hi: float, size: float) -> np.ndarray:
    n = int(np.floor((hi - lo) / size - 0.5 + 1e-9)) + 1
    return lo + size * (np.arange(max(n, 0)) + 0.5)


def build_grid(room: Room, cell_size: float = 0.2) -> GridMap:
    """Discretize ``room`` into cells; order is row-major (y outer, x inner)."""
    if not cell_size > 0:
        raise GeometryError("cell_size must be positive")
    minx, miny, maxx, maxy = room.polygon.bounds
    xs = _axis_centers(minx, maxx, cell_size)
    ys = _axis_centers(miny, maxy, cell_size)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[room.contains(pts)] if len(pts) else pts
    if len(pts) == 0:
        raise GeometryError(f"room {room.name!r} contains no cell of size {cell_size}")
    return GridMap(cell_size=float(cell_size), xy=pts, z0=room.ue_height)


@dataclass(frozen=True, eq=False)
class ReferencePlacement:
    """L anchor positions (L, 3) with a common 2D sensing radius."""

    refs: np.ndarray
    sensing_range: float = 7.4
    placement_id: str = "p0"

    def __post_init__(self):
        r = np.asarray(self.refs, dtype=float)
        if r.ndim != 2 or r.shape[1] != 3 or len(r) == 0:
            raise GeometryError("refs must be an (L, 3) array")
        object.__setattr__(self, "refs", r)
        if self.sensing_range < 0:
            raise GeometryError("sensing_range must be non-negative")

    @classmethod
    def from_xy(cls, xy, z1: float, sensing_range: float = 7.4, placement_id: str = "p0"):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return cls(np.column_stack([xy, np.full(len(xy), z1)]), sensing_range, placement_id)

    @property
    def L(self) -> int:
        return len(self.refs)

    @property
    def xy(self) -> np.ndarray:
        return self.refs[:, :2]


def line_of_sight(room: Room, a, b) -> bool:
    """True iff the segment a-b stays off the room boundary.

    Touching the boundary, e.g. grazing a reflex corner, counts as blocked.
    """
    return bool(_los_many(room, np.asarray(a, float)[None, :2], np.asarray(b, float)[None, :2])[0])


def _los_many(room: Room, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if room.is_convex:
        # Interior points of a convex polygon always see each other.
        return np.ones(len(a), dtype=bool)
    lines = shapely.linestrings(np.stack([a, b], axis=1))
    return ~shapely.intersects(lines, room.ring)


@dataclass(frozen=True, eq=False)
class VisibilityTable:
    """``mask[i, j]`` is True when reference j is detectable from cell i."""

    mask: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def visible(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.mask[i])

    def bitmasks(self) -> np.ndarray:
        weights = 1 << np.arange(self.mask.shape[1], dtype=np.int64)
        return self.mask.astype(np.int64) @ weights


def visibility(room: Room, grid: GridMap, placement: ReferencePlacement) -> VisibilityTable:
    """Disk model in the xy-plane combined with 2D line of sight."""
    K, L = grid.K, placement.L
    d2 = np.linalg.norm(grid.xy[:, None, :] - placement.xy[None, :, :], axis=-1)
    in_range = d2 <= placement.sensing_range
    mask = np.zeros((K, L), dtype=bool)
    ii, jj = np.nonzero(in_range)
    if len(ii):
        mask[ii, jj] = _los_many(room, grid.xy[ii], placement.xy[jj])
    return VisibilityTable(mask)


@dataclass(frozen=True)
class Violation:
    kind: str  # "spacing" | "wall" | "outside" | "coverage"
    detail: str
    index: tuple = ()


def validate_placement(room: Room, grid: GridMap, placement: ReferencePlacement,
                       min_visible: int = 4, min_spacing: float = 0.5,
                       min_wall: float = 0.5) -> list[Violation]:
    """List every constraint the placement breaks; an empty list means valid."""
    out = []
    xy = placement.xy
    inside = room.contains(xy)
    for j in np.flatnonzero(~inside):
        out.append(Violation("outside", f"reference {j} at {tuple(xy[j])} is not inside the room", (int(j),)))
    walls = room.wall_distance(xy)
    for j in np.flatnonzero(inside & (walls < min_wall - 1e-12)):
        out.append(Violation("wall", f"reference {j} is {walls[j]:.3f} m from the nearest wall", (int(j),)))
    d = np.linalg.norm(xy[:, None] - xy[None, :], axis=-1)
    for j, k in zip(*np.triu_indices(placement.L, 1)):
        if d[j, k] < min_spacing - 1e-12:
            out.append(Violation("spacing", f"references {j} and {k} are {d[j, k]:.3f} m apart",
                                 (int(j), int(k))))
    if min_visible > 0:
        counts = visibility(room, grid, placement).counts
        for i in np.flatnonzero(counts < min_visible):
            out.append(Violation("coverage", f"cell {i} at {tuple(grid.xy[i])} sees {counts[i]} references",
                                 (int(i),)))
    return out


@dataclass
class Scene:
    """A room, its grid, one placement and the derived visibility table."""

    room: Room
    grid: GridMap
    placement: ReferencePlacement
    vis: VisibilityTable = field(default=None)

    def __post_init__(self):
        if self.vis is None:
            self.vis = visibility(self.room, self.grid, self.placement)

    @classmethod
    def build(cls, room: Room, placement: ReferencePlacement, cell_size: float = 0.2) -> "Scene":
        return cls(room, build_grid(room, cell_size), placement)

    @cached_property
    def ranges(self) -> np.ndarray:
        """True 3D distances, shape (K, L)."""
        return np.linalg.norm(self.grid.cells[:, None, :] - self.placement.refs[None, :, :], axis=-1)

    def groups(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(cell indices, visible reference indices) for each distinct visibility pattern."""
        _, inverse = np.unique(self.vis.bitmasks(), return_inverse=True)
        out = []
        for g in range(inverse.max() + 1):
            cells = np.flatnonzero(inverse == g)
            out.append((cells, self.vis.visible(cells[0])))
        return out

    @property
    def K(self) -> int:
        return self.grid.K

    @property
    def L(self) -> int:
        return self.placement.L
