"""Planner back-end: hard-constrained cubic trajectory optimization inside a
corridor, with explicit infeasibility as a first-class outcome.

The trajectory is N cubic Bezier segments joined with C2 continuity.  The QP
minimizes integrated squared jerk subject to endpoint states, per-cell
containment of the tight-basis (MINVO) control points, and per-axis
velocity/acceleration bounds on the derivative control points.  Any failure
of the dual active-set solver (certified inconsistency, iteration cap, or a
numerical breakdown) is reported as an infeasible solve, which is exactly
the event the failure model is trained to predict.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import _minvo
from ._qp import QPResult, solve_qp
from .errors import TimeOutOfRange
from .frontend import FrontendConfig, front_end
from .geometry import Corridor, intersection_point

MIN_SEGMENT_TIME = 0.1
MAX_SEGMENTS = 6
MIN_SEGMENTS = 6
QP_MAX_ITER = 200
# Headroom between the trapezoid allocation and the hodograph bounds.  The
# rest-to-rest C2 spline family peaks at ~2x its mean speed (velocity control
# points plateau at twice the average) and ~8L/T^2 acceleration, so allocating
# against the raw limits leaves the QP without any feasible profile.
V_HEADROOM = 2.0
A_HEADROOM = 2.0


@dataclass
class Limits:
    v_max: float = 2.0
    a_max: float = 3.0


@dataclass
class BezierSegment:
    q: np.ndarray          # 4 control points, shape (4, 2)
    duration: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(4, 2)
        if self.duration <= 0:
            raise ValueError("segment duration must be positive")


def bezier_eval(seg: BezierSegment, t: float):
    """Position, velocity, acceleration of a cubic segment at local time t."""
    if t < -1e-12 or t > seg.duration + 1e-12:
        raise TimeOutOfRange(f"t={t} outside [0, {seg.duration}]")
    u = min(max(t / seg.duration, 0.0), 1.0)
    q = seg.q
    b = np.array([(1 - u) ** 3, 3 * u * (1 - u) ** 2, 3 * u ** 2 * (1 - u), u ** 3])
    p = b @ q
    dv = 3.0 * (q[1:] - q[:-1]) / seg.duration
    bv = np.array([(1 - u) ** 2, 2 * u * (1 - u), u ** 2])
    v = bv @ dv
    da = 2.0 * (dv[1:] - dv[:-1]) / seg.duration
    ba = np.array([1 - u, u])
    a = ba @ da
    return p, v, a


def bezier_to_minvo(q, dt: float) -> np.ndarray:
    """Control points of the tight enclosing basis for the same curve."""
    q = np.asarray(q, dtype=float).reshape(4, 2)
    return (_minvo.conversion(dt).T @ q)


@dataclass
class Trajectory:
    segments: list
    t0: float = 0.0

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @property
    def end_time(self) -> float:
        return self.t0 + self.duration

    def sample(self, t: float):
        """State at absolute time t; clamped to the ends (rest at the goal)."""
        tau = t - self.t0
        for seg in self.segments:
            if tau <= seg.duration:
                return bezier_eval(seg, min(max(tau, 0.0), seg.duration))
            tau -= seg.duration
        last = self.segments[-1]
        p, _, _ = bezier_eval(last, last.duration)
        return p, np.zeros(2), np.zeros(2)

    def junction_mismatch(self) -> float:
        """Largest position/velocity/acceleration gap at the segment joints."""
        worst = 0.0
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            pa, va, aa = bezier_eval(a, a.duration)
            pb, vb, ab = bezier_eval(b, 0.0)
            worst = max(worst, np.abs(pa - pb).max(), np.abs(va - vb).max(),
                        np.abs(aa - ab).max())
        return worst

    def to_dict(self) -> dict:
        return {"segments": [{"q": s.q.tolist(), "dt": s.duration}
                             for s in self.segments],
                "t0": self.t0}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls([BezierSegment(np.asarray(s["q"]), s["dt"])
                    for s in d["segments"]], d["t0"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def allocate_times(lengths, v_max: float, a_max: float) -> list[float]:
    """Trapezoidal-profile duration per path length, floored at 0.1 s."""
    out = []
    for length in lengths:
        if length <= 0:
            raise ValueError("lengths must be positive")
        if a_max > 0 and np.isfinite(a_max) and length <= v_max ** 2 / a_max:
            t = 2.0 * np.sqrt(length / a_max)
        else:
            t = length / v_max + (v_max / a_max if np.isfinite(a_max) else 0.0)
        out.append(max(t, MIN_SEGMENT_TIME))
    return out


@dataclass
class BackendResult:
    trajectory: Trajectory | None
    status: str                     # feasible | infeasible | iteration_limit | numerical | bad_corridor
    qp: QPResult | None = None
    solve_ms: float = 0.0
    cell_of_segment: list = field(default_factory=list)


def solve_backend(corridor: Corridor, x0, xg_local, limits: Limits | None = None,
                  t0: float | None = None) -> BackendResult:
    """Solve the corridor-constrained minimum-jerk QP.

    Segment count is ``|C|+1`` floored at 4 and capped at 6: the endpoint
    states plus C2 joints consume ``6N+6`` of the ``8N`` degrees of freedom,
    so fewer than 4 segments leaves the boundary-value problem over- or
    exactly-determined and structurally infeasible.
    """
    limits = limits or Limits()
    m = len(corridor)
    if m > MAX_SEGMENTS:
        return BackendResult(None, "bad_corridor")
    n_seg = min(max(m + 1, MIN_SEGMENTS), MAX_SEGMENTS)
    start = time.perf_counter()

    p0 = np.asarray(x0.p, dtype=float)
    v0 = np.asarray(x0.v, dtype=float)
    a0 = np.asarray(x0.a, dtype=float)
    goal = np.asarray(xg_local, dtype=float)

    waypoints = [p0]
    for i in range(m - 1):
        pt = _junction(corridor[i], corridor[i + 1])
        if pt is None:
            return BackendResult(None, "bad_corridor")
        waypoints.append(pt)
    waypoints.append(goal)
    lengths = [max(float(np.linalg.norm(b - a)), 0.05)
               for a, b in zip(waypoints[:-1], waypoints[1:])]

    cell_times = allocate_times(lengths, limits.v_max / V_HEADROOM,
                                limits.a_max / A_HEADROOM)
    per_cell = _apportion(n_seg, lengths)
    durations = []
    cell_of_segment = []
    for i, n_i in enumerate(per_cell):
        dt = max(cell_times[i] / n_i, MIN_SEGMENT_TIME)
        durations.extend([dt] * n_i)
        cell_of_segment.extend([i] * n_i)
    if per_cell[0] >= 2:
        # short entry segment: the start state is pinned, and a brief first
        # piece keeps its enclosing hull tight around the start when the
        # first cell's face sits right behind the robot
        entry = max(MIN_SEGMENT_TIME, 0.15 * cell_times[0])
        rest = max(cell_times[0] - entry, MIN_SEGMENT_TIME * (per_cell[0] - 1))
        durations[0] = entry
        for j in range(1, per_cell[0]):
            durations[j] = rest / (per_cell[0] - 1)

    H, c = _objective(durations)
    A_eq, b_eq = _equalities(durations, p0, v0, a0, goal)
    A_in, b_in = _inequalities(durations, cell_of_segment, corridor, limits)
    qp = solve_qp(H, c, A_eq, b_eq, A_in, b_in, max_iter=QP_MAX_ITER)
    ms = (time.perf_counter() - start) * 1e3

    if qp.status != "optimal":
        status = "infeasible" if qp.status == "infeasible" else qp.status
        return BackendResult(None, status, qp=qp, solve_ms=ms,
                             cell_of_segment=cell_of_segment)
    segs = []
    for j, dt in enumerate(durations):
        q = qp.x[8 * j: 8 * (j + 1)].reshape(4, 2)
        segs.append(BezierSegment(q, dt))
    traj = Trajectory(segs, t0=float(t0 if t0 is not None else getattr(x0, "t", 0.0)))
    return BackendResult(traj, "feasible", qp=qp, solve_ms=ms,
                         cell_of_segment=cell_of_segment)


def _box_bounds(poly) -> tuple | None:
    """(xmin, xmax, ymin, ymax) when the polytope is an axis-aligned box."""
    lo = [-np.inf, -np.inf]
    hi = [np.inf, np.inf]
    for r, b in zip(poly.A, poly.b):
        if abs(r[0]) > 1e-12 and abs(r[1]) > 1e-12:
            return None
        d = 0 if abs(r[0]) > 1e-12 else 1
        v = b / r[d]
        if r[d] > 0:
            hi[d] = min(hi[d], v)
        else:
            lo[d] = max(lo[d], v)
    if not all(np.isfinite([lo[0], lo[1], hi[0], hi[1]])):
        return None
    return lo[0], hi[0], lo[1], hi[1]


def _junction(a, b) -> np.ndarray | None:
    """Representative point of a cell intersection (center for box pairs)."""
    ba = _box_bounds(a)
    bb = _box_bounds(b)
    if ba is not None and bb is not None:
        x0 = max(ba[0], bb[0]); x1 = min(ba[1], bb[1])
        y0 = max(ba[2], bb[2]); y1 = min(ba[3], bb[3])
        if x0 <= x1 + 1e-9 and y0 <= y1 + 1e-9:
            return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
        return None
    return intersection_point(a, b)


def _apportion(n_seg: int, lengths) -> list[int]:
    """Split n_seg segments over the cells, one minimum each, remainder by
    largest length fraction (stable tie-break on index)."""
    m = len(lengths)
    base = [1] * m
    extra = n_seg - m
    if extra > 0:
        total = sum(lengths)
        quota = [extra * l / total for l in lengths]
        take = [int(np.floor(q)) for q in quota]
        left = extra - sum(take)
        order = sorted(range(m), key=lambda i: (-(quota[i] - take[i]), i))
        for i in order[:left]:
            take[i] += 1
        base = [b + t for b, t in zip(base, take)]
    return base


def _objective(durations) -> tuple[np.ndarray, np.ndarray]:
    n = 8 * len(durations)
    H = np.zeros((n, n))
    w = np.array([-1.0, 3.0, -3.0, 1.0])
    for j, dt in enumerate(durations):
        block = (72.0 / dt ** 5) * np.outer(w, w)
        for d in range(2):
            idx = [8 * j + 2 * k + d for k in range(4)]
            H[np.ix_(idx, idx)] += block
    H /= H.diagonal().max()
    # the jerk form is rank-deficient (one direction per axis per segment);
    # the ridge keeps H safely positive definite for the active-set solver
    H += 1e-6 * np.eye(n)
    return H, np.zeros(n)


def _row(n, entries) -> np.ndarray:
    r = np.zeros(n)
    for i, v in entries:
        r[i] += v
    return r


def _equalities(durations, p0, v0, a0, goal):
    n_seg = len(durations)
    n = 8 * n_seg
    rows, rhs = [], []

    def cp(j, k, d):
        return 8 * j + 2 * k + d

    for d in range(2):
        dt0 = durations[0]
        rows.append(_row(n, [(cp(0, 0, d), 1.0)])); rhs.append(p0[d])
        rows.append(_row(n, [(cp(0, 1, d), 3.0 / dt0), (cp(0, 0, d), -3.0 / dt0)]))
        rhs.append(v0[d])
        rows.append(_row(n, [(cp(0, 2, d), 6.0 / dt0 ** 2), (cp(0, 1, d), -12.0 / dt0 ** 2),
                             (cp(0, 0, d), 6.0 / dt0 ** 2)]))
        rhs.append(a0[d])
        dtN = durations[-1]
        last = n_seg - 1
        rows.append(_row(n, [(cp(last, 3, d), 1.0)])); rhs.append(goal[d])
        rows.append(_row(n, [(cp(last, 3, d), 3.0 / dtN), (cp(last, 2, d), -3.0 / dtN)]))
        rhs.append(0.0)
        rows.append(_row(n, [(cp(last, 3, d), 6.0 / dtN ** 2), (cp(last, 2, d), -12.0 / dtN ** 2),
                             (cp(last, 1, d), 6.0 / dtN ** 2)]))
        rhs.append(0.0)
    for j in range(n_seg - 1):
        da, db = durations[j], durations[j + 1]
        for d in range(2):
            rows.append(_row(n, [(cp(j, 3, d), 1.0), (cp(j + 1, 0, d), -1.0)]))
            rhs.append(0.0)
            rows.append(_row(n, [(cp(j, 3, d), 3.0 / da), (cp(j, 2, d), -3.0 / da),
                                 (cp(j + 1, 1, d), -3.0 / db), (cp(j + 1, 0, d), 3.0 / db)]))
            rhs.append(0.0)
            rows.append(_row(n, [(cp(j, 3, d), 6.0 / da ** 2), (cp(j, 2, d), -12.0 / da ** 2),
                                 (cp(j, 1, d), 6.0 / da ** 2),
                                 (cp(j + 1, 2, d), -6.0 / db ** 2), (cp(j + 1, 1, d), 12.0 / db ** 2),
                                 (cp(j + 1, 0, d), -6.0 / db ** 2)]))
            rhs.append(0.0)
    return _normalize_rows(np.vstack(rows), np.asarray(rhs))


def _inequalities(durations, cell_of_segment, corridor, limits: Limits):
    n_seg = len(durations)
    n = 8 * n_seg
    rows, rhs = [], []

    for j, dt in enumerate(durations):
        W = _minvo.conversion(dt)  # Q_tight = Q_bezier @ W, shape (4,4)
        cell = corridor[cell_of_segment[j]]
        for k in range(4):           # tight-basis control point k
            for r, b in zip(cell.A, cell.b):
                # r . sum_l W[l,k] q_l <= b
                entries = []
                for l in range(4):
                    for d in range(2):
                        entries.append((8 * j + 2 * l + d, W[l, k] * r[d]))
                rows.append(_row(n, entries)); rhs.append(b)
        for k in range(3):           # velocity hodograph points
            for d in range(2):
                for sgn in (1.0, -1.0):
                    rows.append(_row(n, [(8 * j + 2 * (k + 1) + d, sgn * 3.0 / dt),
                                         (8 * j + 2 * k + d, -sgn * 3.0 / dt)]))
                    rhs.append(limits.v_max)
        for k in range(2):           # acceleration hodograph points
            for d in range(2):
                for sgn in (1.0, -1.0):
                    rows.append(_row(n, [(8 * j + 2 * (k + 2) + d, sgn * 6.0 / dt ** 2),
                                         (8 * j + 2 * (k + 1) + d, -sgn * 12.0 / dt ** 2),
                                         (8 * j + 2 * k + d, sgn * 6.0 / dt ** 2)]))
                    rhs.append(limits.a_max)
    return _normalize_rows(np.vstack(rows), np.asarray(rhs))


def _normalize_rows(A, b):
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    return A / norms[:, None], b / norms


# ---------------------------------------------------------------------------
# full pipeline step


@dataclass
class PlanConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    limits: Limits = field(default_factory=Limits)
    gamma_t: float = 10.0


@dataclass
class PlanResult:
    z_f: int
    z_b: int
    trajectory: Trajectory | None = None
    corridor: Corridor | None = None
    features: "FeatureVector | None" = None
    local_goal: np.ndarray | None = None
    reason: str = ""
    solve_ms: float = 0.0
    backend_status: str = ""


def plan(belief, x0, xg, config: PlanConfig | None = None,
         inflated=None) -> PlanResult:
    """Front end then back end; every failure is encoded, never raised.

    A front-end failure is also a back-end failure (the solver never runs),
    so z_f=1 forces z_b=1.  On front-end success the features of the fresh
    corridor are recorded so the caller can log one training tuple per solve.
    """
    from .failure_model import extract_features

    config = config or PlanConfig()
    fe = front_end(belief, x0, xg, config.frontend, inflated=inflated)
    if fe.z_f:
        return PlanResult(z_f=1, z_b=1, reason=fe.reason)
    features = extract_features(x0, fe.corridor, config.gamma_t)
    be = solve_backend(fe.corridor, x0, fe.local_goal, config.limits)
    return PlanResult(
        z_f=0,
        z_b=0 if be.status == "feasible" else 1,
        trajectory=be.trajectory,
        corridor=fe.corridor,
        features=features,
        local_goal=fe.local_goal,
        reason="" if be.status == "feasible" else f"backend: {be.status}",
        solve_ms=be.solve_ms,
        backend_status=be.status,
    )
