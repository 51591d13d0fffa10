"""Planner front-end: JPS grid search, safe-corridor construction, and the
fast front-end failure check.

Search treats FREE and UNKNOWN cells as traversable and only OCCUPIED as
blocked; movement is 8-connected with unit/sqrt(2) step costs and a diagonal
step requires both adjacent orthogonal cells to be traversable (no corner
cutting; a body with finite footprint cannot squeeze between two blocked
corners, and it guarantees every path step can be covered by axis-aligned
free rectangles).  Corridors are greedy free rectangles grown around
contiguous spans of the path; consecutive rectangles share the span's
junction waypoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappop, heappush

import numpy as np

from . import _kernels
from .geometry import Corridor, HPolytope
from .gridmap import OCCUPIED, OccupancyGrid, inflate

SQRT2 = math.sqrt(2.0)


@dataclass
class FrontendConfig:
    horizon_dist: float = 4.0       # receding-horizon goal distance, m
    max_cells: int = 6              # corridor length cap |C|
    robot_radius: float = 0.2       # inflation radius, m
    rect_cap: float = 8.0           # rectangle size cap per side, m


@dataclass
class GridPath:
    cells: list                     # [(ix, iy), ...] 8-adjacent, non-occupied
    length: float                   # metric length, m

    @staticmethod
    def from_cells(cells, resolution: float) -> "GridPath":
        straight, diag = count_steps(cells)
        return GridPath(cells, (straight + diag * SQRT2) * resolution)


def count_steps(cells) -> tuple[int, int]:
    """(straight, diagonal) step counts; exact integers for cost checks."""
    straight = diag = 0
    for (x0, y0), (x1, y1) in zip(cells[:-1], cells[1:]):
        if x0 != x1 and y0 != y1:
            diag += 1
        else:
            straight += 1
    return straight, diag


@dataclass
class FrontEndResult:
    z_f: int
    corridor: Corridor | None = None
    path: GridPath | None = None
    local_goal: np.ndarray | None = None
    reason: str = ""


# ---------------------------------------------------------------------------
# Jump point search


def jps(grid: OccupancyGrid, start, goal) -> GridPath | None:
    """Octile-optimal path over non-occupied cells, or None.

    None covers a blocked start, a blocked goal, and disconnected queries;
    the caller distinguishes those by inspecting the grid.  Out-of-bounds
    endpoints are a usage error.
    """
    w, h = grid.width, grid.height
    sx, sy = int(start[0]), int(start[1])
    gx, gy = int(goal[0]), int(goal[1])
    if not (0 <= sx < w and 0 <= sy < h and 0 <= gx < w and 0 <= gy < h):
        raise ValueError("start/goal out of grid bounds")
    walk2d = np.ascontiguousarray((grid.data != OCCUPIED).astype(np.uint8))
    walk = walk2d.reshape(-1).tobytes()
    if not walk[sy * w + sx] or not walk[gy * w + gx]:
        return None
    if (sx, sy) == (gx, gy):
        return GridPath([(sx, sy)], 0.0)

    def free(x, y):
        return 0 <= x < w and 0 <= y < h and walk[y * w + x]

    def jump(x, y, dx, dy):
        if dx != 0 and dy != 0:
            packed = _kernels.jump_diag(walk2d, x, y, dx, dy, gx, gy)
        else:
            packed = _kernels.jump_line(walk2d, x, y, dx, dy, gx, gy)
        if packed < 0:
            return None
        return (packed % w, packed // w)

    def neighbors(x, y, px, py):
        if px is None:
            dirs = []
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    if dx == 0 and dy == 0 or not free(x + dx, y + dy):
                        continue
                    if dx != 0 and dy != 0 and not (free(x + dx, y) and free(x, y + dy)):
                        continue
                    dirs.append((dx, dy))
            return dirs
        dx = (x > px) - (x < px)
        dy = (y > py) - (y < py)
        dirs = []
        if dx != 0 and dy != 0:
            fx = free(x + dx, y)
            fy = free(x, y + dy)
            if fx:
                dirs.append((dx, 0))
            if fy:
                dirs.append((0, dy))
            if fx and fy and free(x + dx, y + dy):
                dirs.append((dx, dy))
        elif dx != 0:
            if free(x + dx, y):
                dirs.append((dx, 0))
                if free(x, y + 1) and free(x + dx, y + 1):
                    dirs.append((dx, 1))
                if free(x, y - 1) and free(x + dx, y - 1):
                    dirs.append((dx, -1))
            if free(x, y + 1) and not free(x - dx, y + 1):
                dirs.append((0, 1))
            if free(x, y - 1) and not free(x - dx, y - 1):
                dirs.append((0, -1))
        else:
            if free(x, y + dy):
                dirs.append((0, dy))
                if free(x + 1, y) and free(x + 1, y + dy):
                    dirs.append((1, dy))
                if free(x - 1, y) and free(x - 1, y + dy):
                    dirs.append((-1, dy))
            if free(x + 1, y) and not free(x + 1, y - dy):
                dirs.append((1, 0))
            if free(x - 1, y) and not free(x - 1, y - dy):
                dirs.append((-1, 0))
        return dirs

    def octile(x, y):
        ax, ay = abs(x - gx), abs(y - gy)
        return max(ax, ay) + (SQRT2 - 1.0) * min(ax, ay)

    start_node = (sx, sy)
    g = {start_node: 0.0}
    parent = {start_node: None}
    open_heap = [(octile(sx, sy), 0, start_node)]
    tie = 1
    closed = set()
    while open_heap:
        _, _, node = heappop(open_heap)
        if node in closed:
            continue
        closed.add(node)
        if node == (gx, gy):
            return _reconstruct(parent, node, grid.resolution)
        x, y = node
        p = parent[node]
        px, py = (p if p is not None else (None, None))
        for dx, dy in neighbors(x, y, px, py):
            jp = jump(x, y, dx, dy)
            if jp is None:
                continue
            cost = g[node] + _octile_dist(node, jp)
            if jp not in g or cost < g[jp] - 1e-12:
                g[jp] = cost
                parent[jp] = node
                heappush(open_heap, (cost + octile(*jp), tie, jp))
                tie += 1
    return None


def _octile_dist(a, b) -> float:
    ax, ay = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(ax, ay) + (SQRT2 - 1.0) * min(ax, ay)


def _reconstruct(parent, node, resolution: float) -> GridPath:
    # expand jump-point chain into the full cell sequence
    chain = []
    while node is not None:
        chain.append(node)
        node = parent[node]
    chain.reverse()
    cells = [chain[0]]
    for a, b in zip(chain[:-1], chain[1:]):
        x, y = a
        dx = (b[0] > x) - (b[0] < x)
        dy = (b[1] > y) - (b[1] < y)
        while (x, y) != b:
            x += dx
            y += dy
            cells.append((x, y))
    return GridPath.from_cells(cells, resolution)


# ---------------------------------------------------------------------------
# Corridor construction


class CorridorFailure(Exception):
    """Raised when the path cannot be covered by admissible free rectangles."""


_SEED_BACKS = (0, 2, 5, 9)


def build_corridor(grid: OccupancyGrid, path: GridPath, max_cells: int = 6,
                   robot_diameter: float = 0.4, rect_cap: float = 8.0) -> Corridor:
    """Cover the path with ordered free axis-aligned rectangles.

    Each rectangle is grown along the path to cover a maximal contiguous
    span, then fattened on all sides until an occupied cell or the size cap
    stops it.  The next rectangle is grown from several seeds at and behind
    the current span end and the farthest-reaching candidate wins, which
    avoids chains of near-duplicate slivers along hugging paths; consecutive
    rectangles always share at least the span-end waypoint.
    """
    res = grid.resolution
    occ = grid.meta.get("_occ_integral")
    if occ is None:
        occ = _occupancy_integral(grid)
        grid.meta["_occ_integral"] = occ  # caller must not mutate grid.data
    cap_cells = max(1, int(round(rect_cap / res)))
    min_cells = int(math.ceil(robot_diameter / res - 1e-9))
    cells = path.cells
    cell_arr = np.asarray(cells, dtype=np.int64).reshape(-1, 2)

    def grown(seed_idx: int) -> tuple:
        i0, i1, j0, j1, end = _kernels.grow_rect(occ, cell_arr, seed_idx, cap_cells)
        return _Rect(i0, i1, j0, j1), end

    rects = []
    rect, end = grown(0)
    if rect.min_extent() < min_cells:
        raise CorridorFailure(
            f"waypoint {cells[0]} cannot be enclosed by a free rectangle "
            f">= robot diameter")
    rects.append(rect)
    while end < len(cells) - 1:
        best = None
        for back in _SEED_BACKS:
            seed_idx = max(0, end - back)
            cand, cand_end = grown(seed_idx)
            if cand_end > end and cand.covers(cells[end]) \
                    and cand.min_extent() >= min_cells:
                if best is None or cand_end > best[1]:
                    best = (cand, cand_end)
        if best is None:
            # the immediate junction seed decides which error to report
            cand, cand_end = grown(end)
            if cand.min_extent() < min_cells:
                raise CorridorFailure(
                    f"waypoint {cells[end]} cannot be enclosed by a free "
                    f"rectangle >= robot diameter")
            raise CorridorFailure(
                f"no free rectangle advances past waypoint {cells[end]}")
        rects.append(best[0])
        end = best[1]
        if len(rects) > max_cells:
            raise CorridorFailure(f"corridor exceeds {max_cells} cells")
    return Corridor(tuple(r.to_polytope(grid) for r in rects))


def _occupancy_integral(grid: OccupancyGrid) -> np.ndarray:
    """2-D prefix sums of the occupied mask for O(1) rectangle queries."""
    occ = (grid.data == OCCUPIED).astype(np.int32)
    S = np.zeros((occ.shape[0] + 1, occ.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(occ, axis=0), axis=1, out=S[1:, 1:])
    return S


class _Rect:
    __slots__ = ("i0", "i1", "j0", "j1")

    def __init__(self, i0, i1, j0, j1):
        self.i0, self.i1, self.j0, self.j1 = i0, i1, j0, j1

    def covers(self, cell) -> bool:
        return self.i0 <= cell[0] <= self.i1 and self.j0 <= cell[1] <= self.j1

    def min_extent(self) -> int:
        return min(self.i1 - self.i0 + 1, self.j1 - self.j0 + 1)

    def to_polytope(self, grid: OccupancyGrid) -> HPolytope:
        res = grid.resolution
        x0 = grid.origin[0] + self.i0 * res
        x1 = grid.origin[0] + (self.i1 + 1) * res
        y0 = grid.origin[1] + self.j0 * res
        y1 = grid.origin[1] + (self.j1 + 1) * res
        A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        b = np.array([x1, -x0, y1, -y0])
        return HPolytope(A, b)


# ---------------------------------------------------------------------------
# Front end


def front_end(belief: OccupancyGrid, x0, xg, cfg: FrontendConfig | None = None,
              inflated: OccupancyGrid | None = None) -> FrontEndResult:
    """JPS to the goal (or the horizon frontier), then corridor construction.

    Any sub-failure is encoded as z_f=1.  ``inflated`` lets a caller reuse an
    already-inflated belief grid across many queries on the same map.
    """
    cfg = cfg or FrontendConfig()
    grid = inflated if inflated is not None else inflate(belief, cfg.robot_radius)
    p0 = np.asarray(x0.p if hasattr(x0, "p") else x0, dtype=float)
    xg = np.asarray(xg, dtype=float)
    start = grid.world_to_cell(p0)
    goal = grid.world_to_cell(xg)
    if not grid.in_bounds(*start) or grid.data[start[1], start[0]] == OCCUPIED:
        return FrontEndResult(z_f=1, reason="start_occupied")
    if not grid.in_bounds(*goal) or grid.data[goal[1], goal[0]] == OCCUPIED:
        return FrontEndResult(z_f=1, reason="goal_occupied")
    path = jps(grid, start, goal)
    if path is None:
        return FrontEndResult(z_f=1, reason="no_path")
    path = _truncate(path, cfg.horizon_dist, grid.resolution)
    try:
        corridor = build_corridor(grid, path, cfg.max_cells,
                                  2.0 * cfg.robot_radius, cfg.rect_cap)
    except CorridorFailure as e:
        return FrontEndResult(z_f=1, reason=f"corridor: {e}")
    last = corridor[len(corridor) - 1]
    if path.cells[-1] == goal:
        target = xg
    else:
        target = grid.cell_center(*path.cells[-1])
    local_goal = _project_into(last, target)
    return FrontEndResult(z_f=0, corridor=corridor, path=path, local_goal=local_goal)


def _truncate(path: GridPath, horizon_dist: float, resolution: float) -> GridPath:
    if path.length <= horizon_dist or len(path.cells) < 2:
        return path
    acc = 0.0
    out = [path.cells[0]]
    for a, b in zip(path.cells[:-1], path.cells[1:]):
        step = resolution * (SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0)
        if acc + step > horizon_dist:
            break
        acc += step
        out.append(b)
    return GridPath.from_cells(out, resolution)


def corridor_blocked(corridor: Corridor, grid: OccupancyGrid) -> bool:
    """True when newly mapped occupied cells intrude into any corridor cell
    (cells are axis-aligned boxes, so a rasterized window check suffices)."""
    res = grid.resolution
    for cell in corridor:
        xmin = ymin = -np.inf
        xmax = ymax = np.inf
        for r, b in zip(cell.A, cell.b):
            if r[0] > 0.5:
                xmax = b
            elif r[0] < -0.5:
                xmin = -b
            elif r[1] > 0.5:
                ymax = b
            else:
                ymin = -b
        ix0 = max(0, int(np.floor((xmin - grid.origin[0]) / res + 0.5)))
        iy0 = max(0, int(np.floor((ymin - grid.origin[1]) / res + 0.5)))
        ix1 = min(grid.width, int(np.ceil((xmax - grid.origin[0]) / res - 0.5)))
        iy1 = min(grid.height, int(np.ceil((ymax - grid.origin[1]) / res - 0.5)))
        if ix1 > ix0 and iy1 > iy0 \
                and (grid.data[iy0:iy1, ix0:ix1] == OCCUPIED).any():
            return True
    return False


def _project_into(poly: HPolytope, p: np.ndarray, margin: float = 1e-6) -> np.ndarray:
    """Clamp a point into an axis-aligned cell (used for the local goal)."""
    x = p.copy()
    for r, b in zip(poly.A, poly.b):
        v = float(r @ x) - b
        if v > -margin:
            x = x - (v + margin) * r / float(r @ r)
    return x
