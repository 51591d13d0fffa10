"""Tri-state occupancy grids, simulated 2D lidar, belief fusion, and the
procedural world generators used for training and evaluation.

Grids are stored row-major as uint8 with codes FREE=0, OCCUPIED=1, UNKNOWN=2;
cell (ix, iy) covers ``origin + [ix, iy]*res .. origin + [ix+1, iy+1]*res``.
Ground-truth worlds contain no UNKNOWN cells; belief maps start all-UNKNOWN.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import PoseInObstacle

FREE = _kernels.FREE
OCCUPIED = _kernels.OCCUPIED
UNKNOWN = _kernels.UNKNOWN

DEFAULT_RESOLUTION = 0.1
DEFAULT_FOV = np.deg2rad(270.0)
DEFAULT_N_BEAMS = 540
DEFAULT_MAX_RANGE = 10.0

# PGM gray levels (world <-> file round trip must be exact)
_PGM_LEVEL = {FREE: 254, OCCUPIED: 0, UNKNOWN: 205}
_PGM_CODE = {v: k for k, v in _PGM_LEVEL.items()}


@dataclass
class OccupancyGrid:
    resolution: float
    origin: np.ndarray
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def empty(cls, width_m: float, height_m: float, resolution: float = DEFAULT_RESOLUTION,
              fill: int = FREE, origin=(0.0, 0.0)) -> "OccupancyGrid":
        w = int(round(width_m / resolution))
        h = int(round(height_m / resolution))
        return cls(resolution, np.asarray(origin, float),
                   np.full((h, w), fill, dtype=np.uint8))

    def copy(self) -> "OccupancyGrid":
        meta = {k: v for k, v in self.meta.items() if not k.startswith("_")}
        return OccupancyGrid(self.resolution, self.origin.copy(),
                             self.data.copy(), meta)

    def blank_belief(self) -> "OccupancyGrid":
        """All-unknown belief grid aligned with this world."""
        return OccupancyGrid(self.resolution, self.origin.copy(),
                             np.full_like(self.data, UNKNOWN))

    def world_to_cell(self, p) -> tuple[int, int]:
        ix = int(np.floor((p[0] - self.origin[0]) / self.resolution))
        iy = int(np.floor((p[1] - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return self.origin + (np.array([ix, iy], dtype=float) + 0.5) * self.resolution

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def value_at(self, p) -> int:
        """Cell state at a world point; out-of-bounds reads as OCCUPIED."""
        ix, iy = self.world_to_cell(p)
        if not self.in_bounds(ix, iy):
            return OCCUPIED
        return int(self.data[iy, ix])

    def occupied_mask(self) -> np.ndarray:
        return self.data == OCCUPIED


@dataclass
class LidarScan:
    pose: np.ndarray          # x, y, heading
    angles: np.ndarray        # beam angles relative to heading
    ranges: np.ndarray
    hits: np.ndarray
    max_range: float


def raycast(world: OccupancyGrid, pose, fov: float = DEFAULT_FOV,
            n_beams: int = DEFAULT_N_BEAMS, max_range: float = DEFAULT_MAX_RANGE) -> LidarScan:
    """Simulate one lidar sweep; each beam stops at the first occupied cell."""
    pose = np.asarray(pose, dtype=float)
    if world.value_at(pose[:2]) == OCCUPIED:
        raise PoseInObstacle(f"sensor pose {pose[:2]} inside an obstacle")
    rel = np.linspace(-fov / 2.0, fov / 2.0, n_beams)
    absolute = rel + pose[2]
    ranges, hits = _kernels.raycast_rays(
        world.data, world.resolution, float(world.origin[0]), float(world.origin[1]),
        float(pose[0]), float(pose[1]), absolute, float(max_range))
    return LidarScan(pose=pose, angles=rel, ranges=ranges, hits=hits, max_range=max_range)


def fuse_scan(belief: OccupancyGrid, scan: LidarScan) -> OccupancyGrid:
    """Fold a scan into a belief grid (returns a new grid).

    Cells traversed ahead of each beam's endpoint become FREE, endpoint cells
    of returning beams become OCCUPIED; hits win over free marks within the
    same scan.
    """
    out = belief.copy()
    fuse_scan_inplace(out, scan)
    return out


def fuse_scan_inplace(belief: OccupancyGrid, scan: LidarScan) -> None:
    ix, iy = belief.world_to_cell(scan.pose[:2])
    if not belief.in_bounds(ix, iy):
        raise PoseInObstacle(f"scan pose {scan.pose[:2]} outside belief grid")
    belief.meta.pop("_occ_integral", None)  # cached derived data goes stale
    _kernels.fuse_rays(
        belief.data, belief.resolution, float(belief.origin[0]), float(belief.origin[1]),
        float(scan.pose[0]), float(scan.pose[1]),
        scan.angles + scan.pose[2], scan.ranges, scan.hits)


def inflate(grid: OccupancyGrid, radius: float) -> OccupancyGrid:
    """Grow every occupied cell by ``radius`` (center-to-center metric)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    out = grid.copy()
    if radius == 0.0:
        return out
    r_cells = int(np.floor(radius / grid.resolution + 1e-9))
    occ = grid.occupied_mask()
    grown = occ.copy()
    res2 = grid.resolution ** 2
    for di in range(-r_cells, r_cells + 1):
        for dj in range(-r_cells, r_cells + 1):
            if (di * di + dj * dj) * res2 > radius ** 2 + 1e-12 or (di == 0 and dj == 0):
                continue
            shifted = np.zeros_like(occ)
            src_y = slice(max(0, -di), occ.shape[0] - max(0, di))
            dst_y = slice(max(0, di), occ.shape[0] - max(0, -di))
            src_x = slice(max(0, -dj), occ.shape[1] - max(0, dj))
            dst_x = slice(max(0, dj), occ.shape[1] - max(0, -dj))
            shifted[dst_y, dst_x] = occ[src_y, src_x]
            grown |= shifted
    out.data[grown] = OCCUPIED
    return out


# ---------------------------------------------------------------------------
# world generators


def gen_forest(width: float, height: float, density: float, tree_radius: float,
               rng: np.random.Generator, resolution: float = DEFAULT_RESOLUTION,
               keepout: tuple = ()) -> OccupancyGrid:
    """Poisson forest: a Poisson-count set of circular obstacles placed
    uniformly; keepout entries are (center, radius) disks forced free.
    """
    if density < 0:
        raise ValueError("density must be >= 0")
    grid = OccupancyGrid.empty(width, height, resolution)
    lam = density * width * height
    n = int(rng.poisson(lam)) if lam > 0 else 0
    centers = np.column_stack([rng.uniform(0, width, n), rng.uniform(0, height, n)]) \
        if n else np.zeros((0, 2))
    for c in centers:
        _stamp_disk(grid, c, tree_radius, OCCUPIED)
    for c, r in keepout:
        _stamp_disk(grid, np.asarray(c, float), r, FREE)
    grid.meta = {"kind": "forest", "n_trees": n, "tree_radius": tree_radius,
                 "tree_centers": centers.tolist(), "density": density}
    return grid


def _stamp_disk(grid: OccupancyGrid, center: np.ndarray, radius: float, value: int):
    res = grid.resolution
    ix0, iy0 = grid.world_to_cell(center - radius - res)
    ix1, iy1 = grid.world_to_cell(center + radius + res)
    for iy in range(max(0, iy0), min(grid.height, iy1 + 1)):
        for ix in range(max(0, ix0), min(grid.width, ix1 + 1)):
            if np.linalg.norm(grid.cell_center(ix, iy) - center) <= radius:
                grid.data[iy, ix] = value


def _stamp_rect(grid: OccupancyGrid, x0: float, y0: float, x1: float, y1: float, value: int):
    ix0 = max(0, int(np.floor((x0 - grid.origin[0]) / grid.resolution)))
    iy0 = max(0, int(np.floor((y0 - grid.origin[1]) / grid.resolution)))
    ix1 = min(grid.width, int(np.ceil((x1 - grid.origin[0]) / grid.resolution)))
    iy1 = min(grid.height, int(np.ceil((y1 - grid.origin[1]) / grid.resolution)))
    grid.data[iy0:iy1, ix0:ix1] = value


ROOMS_SIZE = 20.0
_WALL = 0.2


def gen_rooms(door_width: float, obstacle_density: str, rng: np.random.Generator,
              resolution: float = DEFAULT_RESOLUTION) -> tuple[OccupancyGrid, np.ndarray, list]:
    """Connected-rooms world with occluding obstacles near the doorways.

    Returns (grid, start, [goal0, goal1, goal2]).  The layout is a 20x20 m
    area split into four rooms; doorways sit in the internal walls and each
    has a slab obstacle offset in front of it on the far side, hiding the
    wall behind it from a robot approaching the door.  The dense variant
    keeps the sparse layout and adds more clutter, so at equal seed its
    occupied set is a strict superset of the sparse one.
    """
    if door_width not in (1.0, 2.0):
        raise ValueError("door_width must be 1.0 or 2.0")
    if obstacle_density not in ("sparse", "dense"):
        raise ValueError("obstacle_density must be 'sparse' or 'dense'")
    s = ROOMS_SIZE
    grid = OccupancyGrid.empty(s, s, resolution)
    # outer shell
    _stamp_rect(grid, 0, 0, s, _WALL, OCCUPIED)
    _stamp_rect(grid, 0, s - _WALL, s, s, OCCUPIED)
    _stamp_rect(grid, 0, 0, _WALL, s, OCCUPIED)
    _stamp_rect(grid, s - _WALL, 0, s, s, OCCUPIED)
    mid = s / 2.0
    # internal walls with one doorway per segment; door centers fixed
    doors = {
        "sw_se": (mid, 5.0, "v"),   # vertical wall x=mid, door at y=5
        "sw_nw": (5.0, mid, "h"),   # horizontal wall y=mid, door at x=5
        "se_ne": (15.0, mid, "h"),  # horizontal wall y=mid, door at x=15
        "nw_ne": (mid, 15.0, "v"),  # vertical wall x=mid, door at y=15
    }
    half = door_width / 2.0
    # vertical internal wall
    _stamp_rect(grid, mid - _WALL / 2, 0, mid + _WALL / 2, s, OCCUPIED)
    # horizontal internal wall
    _stamp_rect(grid, 0, mid - _WALL / 2, s, mid + _WALL / 2, OCCUPIED)
    for _, (dx, dy, orient) in doors.items():
        if orient == "v":
            _stamp_rect(grid, mid - _WALL / 2 - resolution, dy - half,
                        mid + _WALL / 2 + resolution, dy + half, FREE)
        else:
            _stamp_rect(grid, dx - half, mid - _WALL / 2 - resolution,
                        dx + half, mid + _WALL / 2 + resolution, FREE)

    # occluders: slabs on the far side of each door, laterally offset so the
    # passage stays open but the wall behind is hidden on approach
    occluders = [
        (mid + 1.6, 5.0 + door_width * 0.9, 1.4, 0.3),
        (5.0 + door_width * 0.9, mid + 1.6, 0.3, 1.4),
        (15.0 - door_width * 0.9, mid + 1.6, 0.3, 1.4),
        (mid - 1.6, 15.0 - door_width * 0.9, 1.4, 0.3),
    ]
    for cx, cy, hx, hy in occluders:
        _stamp_rect(grid, cx - hx, cy - hy, cx + hx, cy + hy, OCCUPIED)

    # room clutter: pillars away from doors; dense adds extra ones on top of
    # the exact sparse set (same rng draws), keeping the superset property
    base_pillars = _sample_pillars(rng, 4, s)
    extra_pillars = _sample_pillars(rng, 8, s)
    pillars = list(base_pillars)
    if obstacle_density == "dense":
        # fixed pillar guarantees dense strictly exceeds sparse at any seed
        pillars += [(np.array([7.5, 7.5]), 0.4)] + list(extra_pillars)
    protected = [np.array([2.0, 2.0]), np.array([3.0, 17.0]),
                 np.array([17.0, 17.0]), np.array([17.0, 3.0])]
    door_pts = [np.array([mid, 5.0]), np.array([5.0, mid]),
                np.array([15.0, mid]), np.array([mid, 15.0])]
    for c, r in pillars:
        if any(np.linalg.norm(c - q) < 2.2 for q in protected + door_pts):
            continue
        _stamp_disk(grid, c, r, OCCUPIED)

    start = np.array([2.0, 2.0])
    goals = [np.array([3.0, 17.0]), np.array([17.0, 17.0]), np.array([17.0, 3.0])]
    for p in [start] + goals:
        _stamp_disk(grid, p, 0.6, FREE)
    grid.meta = {"kind": "rooms", "door_width": door_width,
                 "obstacle_density": obstacle_density,
                 "start": start.tolist(), "goals": [g.tolist() for g in goals]}
    return grid, start, goals


def _sample_pillars(rng: np.random.Generator, n: int, size: float) -> list:
    out = []
    for _ in range(n):
        c = rng.uniform(1.5, size - 1.5, 2)
        r = rng.uniform(0.25, 0.45)
        out.append((c, r))
    return out


# ---------------------------------------------------------------------------
# PGM (P5) + JSON sidecar IO


def save_pgm(grid: OccupancyGrid, path) -> None:
    path = Path(path)
    levels = np.full_like(grid.data, _PGM_LEVEL[UNKNOWN])
    for code, level in _PGM_LEVEL.items():
        levels[grid.data == code] = level
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.width} {grid.height}\n255\n".encode())
        f.write(levels.tobytes())
    sidecar = {"resolution": grid.resolution, "origin": grid.origin.tolist()}
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(sidecar, f, indent=1)


def load_pgm(path) -> OccupancyGrid:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        dims = f.readline().split()
        while dims and dims[0].startswith(b"#"):
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        f.readline()  # maxval
        levels = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    data = np.full((h, w), UNKNOWN, dtype=np.uint8)
    for level, code in _PGM_CODE.items():
        data[levels == level] = code
    with open(path.with_suffix(".json")) as f:
        sidecar = json.load(f)
    return OccupancyGrid(sidecar["resolution"], np.asarray(sidecar["origin"], float), data)
