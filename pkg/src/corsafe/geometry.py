"""H-polytope algebra, time-to-intersect kinematics, and hit-and-run sampling.

Conventions: a halfspace is ``r . p <= b`` with ``r`` a 2-vector normal and
``b`` a scalar offset in meters.  Polytopes built by the helpers in this
module carry unit normals, so tolerances are in meters.  All values are
immutable after construction; the RNG handed to the sampler is the only
mutable object.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSeed, PointOutsidePolytope, UnboundedPolytope

CONTAINS_TOL = 1e-9
DEFAULT_GAMMA_T = 10.0


@dataclass(frozen=True)
class Hyperplane:
    """One halfspace ``r . p <= b``."""

    r: np.ndarray
    b: float

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if np.linalg.norm(r) == 0.0:
            raise ValueError("hyperplane normal must be nonzero")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True)
class HPolytope:
    """Convex region ``{p | A p <= b}`` stored row-major."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] == 0 or A.shape[0] != b.shape[0] or A.shape[1] != 2:
            raise ValueError(f"bad polytope shape A{A.shape} b{b.shape}")
        if np.any(np.linalg.norm(A, axis=1) == 0.0):
            raise ValueError("zero row in polytope")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def rows(self) -> list[Hyperplane]:
        return [Hyperplane(self.A[i], self.b[i]) for i in range(len(self.b))]

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HPolytope":
        return cls(np.asarray(d["A"], dtype=float), np.asarray(d["b"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "HPolytope":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class Corridor:
    """Ordered sequence of pairwise-intersecting convex cells."""

    cells: tuple = field(default_factory=tuple)

    def __post_init__(self):
        cells = tuple(self.cells)
        if not cells:
            raise ValueError("corridor must hold at least one cell")
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def __getitem__(self, i):
        return self.cells[i]

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.cells]

    @classmethod
    def from_list(cls, items) -> "Corridor":
        return cls(tuple(HPolytope.from_dict(d) for d in items))


def contains(poly: HPolytope, p, tol: float = CONTAINS_TOL) -> bool:
    """True iff every row satisfies ``r . p <= b + tol``."""
    p = np.asarray(p, dtype=float)
    return bool(np.all(poly.A @ p - poly.b <= tol))


def halfspace_tti(h: Hyperplane, p, v, gamma_t: float = DEFAULT_GAMMA_T) -> float:
    """Time for a point moving at constant velocity to reach the halfspace
    boundary: ``(b - r.p) / (r.v)`` when approaching, else ``gamma_t``.
    Clamped to ``[0, gamma_t]`` so a point already past the boundary reads 0.
    """
    if gamma_t <= 0:
        raise ValueError("gamma_t must be positive")
    rv = float(h.r @ np.asarray(v, dtype=float))
    if rv > 0.0:
        t = (h.b - float(h.r @ np.asarray(p, dtype=float))) / rv
        return min(max(t, 0.0), gamma_t)
    return gamma_t


def polytope_tti(poly: HPolytope, p, v, gamma_t: float = DEFAULT_GAMMA_T) -> float:
    """Minimum time-to-intersect over all faces of the containing polytope."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if not contains(poly, p):
        raise PointOutsidePolytope(f"point {p} outside polytope")
    rv = poly.A @ v
    t = np.full(len(poly.b), gamma_t)
    approaching = rv > 0.0
    if np.any(approaching):
        raw = (poly.b[approaching] - poly.A[approaching] @ p) / rv[approaching]
        t[approaching] = np.clip(raw, 0.0, gamma_t)
    return float(t.min())


def box_polytope(center, half_extents) -> HPolytope:
    """Axis-aligned box as a 4-row H-polytope with unit normals."""
    cx, cy = np.asarray(center, dtype=float)
    hx, hy = np.asarray(half_extents, dtype=float)
    if hx <= 0 or hy <= 0:
        raise ValueError("half extents must be positive")
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([cx + hx, -(cx - hx), cy + hy, -(cy - hy)])
    return HPolytope(A, b)


def _chord(poly: HPolytope, x: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    """Parameter interval of ``{x + t d}`` inside the polytope.

    Raises UnboundedPolytope when the chord is open on either side.
    """
    rd = poly.A @ d
    slack = poly.b - poly.A @ x
    t_max = np.inf
    t_min = -np.inf
    pos = rd > 1e-14
    neg = rd < -1e-14
    if np.any(pos):
        t_max = np.min(slack[pos] / rd[pos])
    if np.any(neg):
        t_min = np.max(slack[neg] / rd[neg])
    if not np.isfinite(t_max) or not np.isfinite(t_min):
        raise UnboundedPolytope("chord does not terminate; polytope unbounded")
    return t_min, t_max


def hit_and_run(poly: HPolytope, seed, count: int, burn_in: int = 100,
                rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Asymptotically uniform samples inside a bounded polytope.

    Chain step: draw a uniform direction, intersect the line with every face
    to get the chord, then jump to a uniform point on the chord.  The first
    ``burn_in`` states are discarded.  Every returned point satisfies
    ``contains`` by construction of the chord.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if rng is None:
        rng = np.random.default_rng()
    x = np.asarray(seed, dtype=float).copy()
    if not contains(poly, x):
        raise InvalidSeed(f"seed {x} outside polytope")
    # Boundedness probe: finite chords along both axes from the seed.
    for axis in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        _chord(poly, x, axis)
    if count == 0:
        return []
    out = []
    total = burn_in + count
    for i in range(total):
        theta = rng.uniform(0.0, 2.0 * np.pi)
        d = np.array([np.cos(theta), np.sin(theta)])
        t_min, t_max = _chord(poly, x, d)
        if t_max < t_min:  # degenerate (x on a vertex); stay put
            t_min = t_max = 0.0
        x = x + rng.uniform(t_min, t_max) * d
        if i >= burn_in:
            out.append(x.copy())
    return out


def intersection_point(a: HPolytope, b: HPolytope, max_iter: int = 200,
                       tol: float = CONTAINS_TOL) -> np.ndarray | None:
    """A point in ``a ∩ b`` found by alternating projections, or None.

    Certifies corridor-cell intersection; the projection onto one polytope
    is computed by cyclic projection onto its violated halfspaces.
    """
    x = _cheb_center_seed(a)
    for _ in range(max_iter):
        x = _project(a, x)
        x = _project(b, x)
        if contains(a, x, tol) and contains(b, x, tol):
            return x
    return None


def _project(poly: HPolytope, x: np.ndarray, inner: int = 50) -> np.ndarray:
    norms2 = np.sum(poly.A ** 2, axis=1)
    for _ in range(inner):
        viol = poly.A @ x - poly.b
        k = int(np.argmax(viol))
        if viol[k] <= CONTAINS_TOL:
            return x
        x = x - (viol[k] / norms2[k]) * poly.A[k]
    return x


def _cheb_center_seed(poly: HPolytope) -> np.ndarray:
    # Cheap interior guess: average of per-face foot points.
    norms = np.linalg.norm(poly.A, axis=1)
    feet = (poly.b / norms ** 2)[:, None] * poly.A
    return feet.mean(axis=0)
