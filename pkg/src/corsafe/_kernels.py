"""Numba-compiled inner loops for grid sensing.

Cell codes match gridmap: 0 free, 1 occupied, 2 unknown.  Rays walk the grid
with the Amanatides-Woo traversal; distances are measured at cell-boundary
crossings so a reported range is exact to within one cell.
"""
import numba
import numpy as np

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

_BIG = 1e30


@numba.njit(cache=True)
def raycast_rays(data, res, ox, oy, px, py, angles, max_range):
    n = angles.shape[0]
    h, w = data.shape
    ranges = np.empty(n, dtype=np.float64)
    hits = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        dx = np.cos(angles[k])
        dy = np.sin(angles[k])
        ix = int(np.floor((px - ox) / res))
        iy = int(np.floor((py - oy) / res))
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        if dx != 0.0:
            t_delta_x = res / abs(dx)
            nx = ox + (ix + (1 if dx > 0 else 0)) * res
            t_max_x = (nx - px) / dx
        else:
            t_delta_x = _BIG
            t_max_x = _BIG
        if dy != 0.0:
            t_delta_y = res / abs(dy)
            ny = oy + (iy + (1 if dy > 0 else 0)) * res
            t_max_y = (ny - py) / dy
        else:
            t_delta_y = _BIG
            t_max_y = _BIG
        r = max_range
        hit = False
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_delta_x
                ix += step_x
            else:
                t = t_max_y
                t_max_y += t_delta_y
                iy += step_y
            if t >= max_range:
                break
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            if data[iy, ix] == OCCUPIED:
                r = t
                hit = True
                break
        ranges[k] = r
        hits[k] = hit
    return ranges, hits


@numba.njit(cache=True)
def jump_line(walk, x, y, dx, dy, gx, gy):
    """Straight jump scan (no corner cutting); returns packed index or -1.

    A cell is a jump point when a perpendicular neighbor is free while the
    cell diagonally behind it is blocked, so the neighbor is only reachable
    through this cell.
    """
    h, w = walk.shape
    while True:
        x += dx
        y += dy
        if x < 0 or x >= w or y < 0 or y >= h or not walk[y, x]:
            return -1
        if x == gx and y == gy:
            return y * w + x
        if dx != 0:
            if y + 1 < h and walk[y + 1, x] and \
                    (x - dx < 0 or x - dx >= w or not walk[y + 1, x - dx]):
                return y * w + x
            if y - 1 >= 0 and walk[y - 1, x] and \
                    (x - dx < 0 or x - dx >= w or not walk[y - 1, x - dx]):
                return y * w + x
        else:
            if x + 1 < w and walk[y, x + 1] and \
                    (y - dy < 0 or y - dy >= h or not walk[y - dy, x + 1]):
                return y * w + x
            if x - 1 >= 0 and walk[y, x - 1] and \
                    (y - dy < 0 or y - dy >= h or not walk[y - dy, x - 1]):
                return y * w + x


@numba.njit(cache=True)
def jump_diag(walk, x, y, dx, dy, gx, gy):
    """Diagonal jump scan; a step requires both orthogonal cells free."""
    h, w = walk.shape
    while True:
        if x + dx < 0 or x + dx >= w or y + dy < 0 or y + dy >= h:
            return -1
        if not walk[y, x + dx] or not walk[y + dy, x]:
            return -1
        x += dx
        y += dy
        if not walk[y, x]:
            return -1
        if x == gx and y == gy:
            return y * w + x
        if jump_line(walk, x, y, dx, 0, gx, gy) >= 0:
            return y * w + x
        if jump_line(walk, x, y, 0, dy, gx, gy) >= 0:
            return y * w + x


@numba.njit(cache=True, inline="always")
def _blocked(S, i0, i1, j0, j1):
    return (S[j1 + 1, i1 + 1] - S[j0, i1 + 1] - S[j1 + 1, i0] + S[j0, i0]) > 0


@numba.njit(cache=True)
def grow_rect(S, cells, seed_idx, cap):
    """Grow a free rectangle from a path cell: cover the longest contiguous
    path span, then fatten all sides.  S is the occupancy integral image.
    Returns (i0, i1, j0, j1, last_covered_path_index)."""
    h = S.shape[0] - 1
    w = S.shape[1] - 1
    i0 = i1 = cells[seed_idx, 0]
    j0 = j1 = cells[seed_idx, 1]
    n = cells.shape[0]
    j = seed_idx + 1
    while j < n:
        tx = cells[j, 0]
        ty = cells[j, 1]
        ok = True
        while ok and not (i0 <= tx <= i1 and j0 <= ty <= j1):
            if tx > i1:
                if i1 + 1 < w and i1 - i0 + 2 <= cap and not _blocked(S, i1 + 1, i1 + 1, j0, j1):
                    i1 += 1
                else:
                    ok = False
            elif tx < i0:
                if i0 - 1 >= 0 and i1 - i0 + 2 <= cap and not _blocked(S, i0 - 1, i0 - 1, j0, j1):
                    i0 -= 1
                else:
                    ok = False
            elif ty > j1:
                if j1 + 1 < h and j1 - j0 + 2 <= cap and not _blocked(S, i0, i1, j1 + 1, j1 + 1):
                    j1 += 1
                else:
                    ok = False
            else:
                if j0 - 1 >= 0 and j1 - j0 + 2 <= cap and not _blocked(S, i0, i1, j0 - 1, j0 - 1):
                    j0 -= 1
                else:
                    ok = False
        if not ok:
            break
        j += 1
    grew = True
    while grew:
        grew = False
        if i1 + 1 < w and i1 - i0 + 2 <= cap and not _blocked(S, i1 + 1, i1 + 1, j0, j1):
            i1 += 1
            grew = True
        if i0 - 1 >= 0 and i1 - i0 + 2 <= cap and not _blocked(S, i0 - 1, i0 - 1, j0, j1):
            i0 -= 1
            grew = True
        if j1 + 1 < h and j1 - j0 + 2 <= cap and not _blocked(S, i0, i1, j1 + 1, j1 + 1):
            j1 += 1
            grew = True
        if j0 - 1 >= 0 and j1 - j0 + 2 <= cap and not _blocked(S, i0, i1, j0 - 1, j0 - 1):
            j0 -= 1
            grew = True
    return i0, i1, j0, j1, j - 1


@numba.njit(cache=True)
def fuse_rays(belief, res, ox, oy, px, py, angles, ranges, hits):
    """Mark traversed cells free, then stamp hit cells occupied (hits win)."""
    n = angles.shape[0]
    h, w = belief.shape
    hit_ix = np.empty(n, dtype=np.int64)
    hit_iy = np.empty(n, dtype=np.int64)
    n_hits = 0
    for k in range(n):
        dx = np.cos(angles[k])
        dy = np.sin(angles[k])
        ix = int(np.floor((px - ox) / res))
        iy = int(np.floor((py - oy) / res))
        if 0 <= ix < w and 0 <= iy < h:
            belief[iy, ix] = FREE
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        if dx != 0.0:
            t_delta_x = res / abs(dx)
            nx = ox + (ix + (1 if dx > 0 else 0)) * res
            t_max_x = (nx - px) / dx
        else:
            t_delta_x = _BIG
            t_max_x = _BIG
        if dy != 0.0:
            t_delta_y = res / abs(dy)
            ny = oy + (iy + (1 if dy > 0 else 0)) * res
            t_max_y = (ny - py) / dy
        else:
            t_delta_y = _BIG
            t_max_y = _BIG
        beam_range = ranges[k]
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_delta_x
                ix += step_x
            else:
                t = t_max_y
                t_max_y += t_delta_y
                iy += step_y
            if t >= beam_range:
                break
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            belief[iy, ix] = FREE
        if hits[k] and 0 <= ix < w and 0 <= iy < h:
            hit_ix[n_hits] = ix
            hit_iy[n_hits] = iy
            n_hits += 1
    for k in range(n_hits):
        belief[hit_iy[k], hit_ix[k]] = OCCUPIED
