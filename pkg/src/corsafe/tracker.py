"""Vehicle model, trajectory tracking, horizon prediction, and the
corridor-constrained go-to-goal regulator used during recovery.

The vehicle is a planar double integrator with acceleration input.  The
discrete step is the exact zero-order-hold solution ``v+ = v + u dt``,
``p+ = p + v dt + u dt^2 / 2`` with the feedforward acceleration sampled at
the interval midpoint, so a state already on the reference stays on it to
O(dt^3) per step.  Feedback is PD with saturation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._qp import solve_qp
from .errors import LeftCorridor, TrajectoryExpired
from .geometry import HPolytope, contains


@dataclass(frozen=True)
class RobotState:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("p", "v", "a"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def at_rest(cls, p, t: float = 0.0) -> "RobotState":
        return cls(np.asarray(p, float), np.zeros(2), np.zeros(2), t)

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v))


@dataclass
class TrackerConfig:
    dt: float = 0.05
    horizon: float = 2.0            # T_F, s
    v_max: float = 2.0
    a_max: float = 3.0
    kp: float = 4.0
    kv: float = 3.0
    expire_after: float = 30.0      # tracking past the trajectory end, s


@dataclass
class Horizon:
    states: list

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)


def _clamp_norm(x: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(x))
    if n > limit:
        return x * (limit / n)
    return x


def track_step(state: RobotState, traj, dt: float,
               cfg: TrackerConfig | None = None, _expire: bool = True) -> RobotState:
    """One closed-loop step tracking the reference trajectory."""
    cfg = cfg or TrackerConfig()
    if _expire and state.t > traj.end_time + cfg.expire_after:
        raise TrajectoryExpired(f"reference ended at t={traj.end_time}")
    p_ref, v_ref, _ = traj.sample(state.t)
    _, _, a_mid = traj.sample(state.t + dt / 2.0)
    u = a_mid + cfg.kp * (p_ref - state.p) + cfg.kv * (v_ref - state.v)
    u = _clamp_norm(u, cfg.a_max)
    v_next = state.v + u * dt
    n = float(np.linalg.norm(v_next))
    if n > cfg.v_max:
        v_next = v_next * (cfg.v_max / n)
        u = (v_next - state.v) / dt
    p_next = state.p + state.v * dt + 0.5 * u * dt * dt
    return RobotState(p_next, v_next, u, state.t + dt)


def predict_horizon(state: RobotState, traj, t_f: float, dt: float,
                    cfg: TrackerConfig | None = None) -> Horizon:
    """Forward-simulate the tracking loop; pure function of its inputs."""
    cfg = cfg or TrackerConfig()
    n = int(round(t_f / dt)) if t_f > 0 else 0
    states = [state]
    for _ in range(n):
        states.append(track_step(states[-1], traj, dt, cfg, _expire=False))
    return Horizon(states)


def brake_step(state: RobotState, dt: float, a_max: float) -> RobotState:
    """Decelerate straight toward rest at the acceleration limit."""
    speed = state.speed
    if speed <= a_max * dt:
        u = -state.v / dt if dt > 0 else np.zeros(2)
    else:
        u = -state.v / speed * a_max
    v_next = state.v + u * dt
    p_next = state.p + state.v * dt + 0.5 * u * dt * dt
    return RobotState(p_next, v_next, u, state.t + dt)


# ---------------------------------------------------------------------------
# constrained go-to-goal step

_GTG_KAPPA = 0.8        # safety factor on approach-speed caps
_GTG_BRAKE = 0.6        # fraction of a_max assumed available for braking


def gtg_step(state: RobotState, goal, cr: HPolytope, dt: float,
             cfg: TrackerConfig | None = None) -> RobotState:
    """One step toward the goal, constrained to stay inside ``cr``.

    The acceleration is the solution of a one-step constrained least squares:
    minimize the next position's distance to the goal plus a small velocity
    penalty (without it the optimum near the goal is a circular orbit that
    never comes to rest), subject to the next position satisfying the
    polytope rows, per-axis accel/velocity bounds, and face/goal
    approach-speed caps (the caps damp velocity near faces so the hard
    position constraint stays feasible step after step).
    """
    cfg = cfg or TrackerConfig()
    goal = np.asarray(goal, dtype=float)
    if not contains(cr, state.p, tol=1e-6):
        raise LeftCorridor(f"state {state.p} outside recovery region")
    base = state.p + state.v * dt
    g = base - goal
    # objective |B - goal + u dt^2/2|^2 + dt^2 |v + u dt|^2, scaled to H = 2I
    w = dt * dt
    a = dt ** 4 / 4.0 + w * dt * dt
    H = 2.0 * np.eye(2)
    c = (dt * dt * g + 2.0 * w * dt * state.v) / a

    rows, rhs = [], []
    # containment of the next position against margin-shrunk faces; the
    # margin absorbs one step of braking drift so a boundary state never
    # leaves the true region even when this QP turns infeasible
    margin = cfg.a_max * dt * dt
    for r, b in zip(cr.A, cr.b):
        rn = float(np.linalg.norm(r))
        rows.append(0.5 * dt * dt * r)
        rhs.append(b - margin * rn - float(r @ base))
    # per-axis accel and velocity boxes
    for d in range(2):
        e = np.zeros(2); e[d] = 1.0
        rows.append(e); rhs.append(cfg.a_max)
        rows.append(-e); rhs.append(cfg.a_max)
        rows.append(dt * e); rhs.append(cfg.v_max - state.v[d])
        rows.append(-dt * e); rhs.append(cfg.v_max + state.v[d])
    damp_rows, damp_rhs = [], []
    a_br = _GTG_BRAKE * cfg.a_max
    k2 = 2.0 * a_br * _GTG_KAPPA ** 2
    for r, b in zip(cr.A, cr.b):
        rn = float(np.linalg.norm(r))
        dist = max(0.0, (b - float(r @ state.p)) / rn - margin)
        # self-consistent cap: v <= kappa*sqrt(2 a_br (dist - v dt)), i.e.
        # the approach speed must remain brakeable after this step's advance
        cap = 0.5 * (-k2 * dt + np.sqrt(k2 * k2 * dt * dt + 4.0 * k2 * dist))
        damp_rows.append(dt * r / rn)
        damp_rhs.append(cap - float(r @ state.v) / rn)
    d_goal = float(np.linalg.norm(goal - state.p))
    if d_goal > 1e-9:
        ghat = (goal - state.p) / d_goal
        cap = 0.5 * (-k2 * dt + np.sqrt(k2 * k2 * dt * dt + 4.0 * k2 * d_goal))
        damp_rows.append(dt * ghat)
        damp_rhs.append(cap - float(ghat @ state.v))

    res = solve_qp(H, c, None, None,
                   np.vstack(rows + damp_rows), np.asarray(rhs + damp_rhs))
    if res.status != "optimal":
        res = solve_qp(H, c, None, None, np.vstack(rows), np.asarray(rhs))
    if res.status == "optimal":
        u = res.x
    else:
        u = _clamp_norm(-state.v / max(dt, 1e-9), cfg.a_max)
    v_next = state.v + u * dt
    p_next = state.p + state.v * dt + 0.5 * u * dt * dt
    if not contains(cr, p_next, tol=1e-6):
        raise LeftCorridor(f"go-to-goal step left the recovery region at {p_next}")
    return RobotState(p_next, v_next, u, state.t + dt)
