"""Autonomous recovery: sample candidate at-rest states inside a free box
around the stop point, score their expected planner-failure probability with
the same model used for monitoring, pick the safest, and drive to it with
the corridor-constrained go-to-goal controller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import PlanConfig
from .errors import CorsafeError, NoFreeSpace
from .failure_model import GPFailureModel, extract_features, gp_predict, pipeline_failure_prob
from .frontend import front_end
from .geometry import HPolytope, contains, hit_and_run
from .gridmap import OCCUPIED, OccupancyGrid, inflate
from .tracker import RobotState, TrackerConfig, brake_step, gtg_step

BOX_CAP = 4.0                  # recovery box side cap, m
NEIGHBOR_OFFSET = 0.2          # probe offsets around each candidate, m
ARRIVE_DIST = 0.05
ARRIVE_SPEED = 0.05
RECOVERY_TIMEOUT = 30.0


class RecoveryExhausted(CorsafeError):
    """All sampling rounds produced only candidates above the risk gate."""


class RecoveryTimeout(CorsafeError):
    pass


@dataclass
class RecoveryPlan:
    x_r: RobotState
    c_r: HPolytope
    candidates_considered: int
    rounds: int
    score: float


def recovery_region(belief: OccupancyGrid, p0, robot_radius: float = 0.2,
                    cap: float = BOX_CAP) -> HPolytope:
    """Largest free axis-aligned box around p0 (greedy growth, capped)."""
    grid = inflate(belief, robot_radius)
    occ = grid.occupied_mask()
    ix, iy = grid.world_to_cell(p0)
    if not grid.in_bounds(ix, iy) or occ[iy, ix]:
        raise NoFreeSpace(f"stop point {p0} has no free cell")
    cap_cells = max(1, int(round(cap / grid.resolution)))
    i0 = i1 = ix
    j0 = j1 = iy
    grew = True
    while grew:
        grew = False
        if i1 + 1 < grid.width and i1 - i0 + 2 <= cap_cells \
                and not occ[j0:j1 + 1, i1 + 1].any():
            i1 += 1; grew = True
        if i0 - 1 >= 0 and i1 - i0 + 2 <= cap_cells \
                and not occ[j0:j1 + 1, i0 - 1].any():
            i0 -= 1; grew = True
        if j1 + 1 < grid.height and j1 - j0 + 2 <= cap_cells \
                and not occ[j1 + 1, i0:i1 + 1].any():
            j1 += 1; grew = True
        if j0 - 1 >= 0 and j1 - j0 + 2 <= cap_cells \
                and not occ[j0 - 1, i0:i1 + 1].any():
            j0 -= 1; grew = True
    res = grid.resolution
    x0 = grid.origin[0] + i0 * res
    x1 = grid.origin[0] + (i1 + 1) * res
    y0 = grid.origin[1] + j0 * res
    y1 = grid.origin[1] + (j1 + 1) * res
    if min(x1 - x0, y1 - y0) < 2.0 * robot_radius:
        raise NoFreeSpace("free box around the stop point is below robot size")
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([x1, -x0, y1, -y0])
    return HPolytope(A, b)


def sample_candidates(belief: OccupancyGrid, p0, n_p: int,
                      rng: np.random.Generator, robot_radius: float = 0.2,
                      region: HPolytope | None = None,
                      burn_in: int = 100) -> tuple[list[RobotState], HPolytope]:
    """At-rest candidate states sampled uniformly inside the recovery box."""
    c_r = region if region is not None else recovery_region(belief, p0, robot_radius)
    pts = hit_and_run(c_r, np.asarray(p0, float), n_p, burn_in=burn_in, rng=rng)
    return [RobotState.at_rest(p) for p in pts], c_r


def score_candidates(cands, belief: OccupancyGrid, model: GPFailureModel,
                     mission_goal, cfg: PlanConfig | None = None,
                     inflated: OccupancyGrid | None = None) -> list[tuple]:
    """Expected planner-failure probability per candidate.

    Each candidate is probed at its own position and four axis-aligned
    neighbors 0.2 m away; each probe runs the front end toward the mission
    goal and composes the pipeline failure probability, and the candidate
    score is the mean over the five probes.
    """
    cfg = cfg or PlanConfig()
    if inflated is None:
        inflated = inflate(belief, cfg.frontend.robot_radius)
    offsets = [np.zeros(2),
               np.array([NEIGHBOR_OFFSET, 0.0]), np.array([-NEIGHBOR_OFFSET, 0.0]),
               np.array([0.0, NEIGHBOR_OFFSET]), np.array([0.0, -NEIGHBOR_OFFSET])]
    out = []
    for cand in cands:
        probs = []
        for off in offsets:
            probe = RobotState.at_rest(cand.p + off)
            fe = front_end(belief, probe, mission_goal, cfg.frontend, inflated=inflated)
            if fe.z_f:
                probs.append(1.0)
                continue
            d = extract_features(probe, fe.corridor, cfg.gamma_t)
            mu, _ = gp_predict(model, d)
            probs.append(pipeline_failure_prob(0, mu))
        out.append((cand, float(np.mean(probs))))
    return out


def select_recovery(scored, eta: float, max_rounds: int, resample_fn,
                    p0, c_r: HPolytope) -> RecoveryPlan:
    """Lowest-scoring candidate at or below the gate eta; resample when every
    candidate exceeds it, giving up after max_rounds rounds."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must be in (0, 1)")
    p0 = np.asarray(p0, float)
    considered = 0
    for round_idx in range(1, max_rounds + 1):
        considered += len(scored)
        qualified = [(s, sc) for s, sc in scored if sc <= eta]
        if qualified:
            best = min(qualified,
                       key=lambda e: (e[1], float(np.linalg.norm(e[0].p - p0))))
            return RecoveryPlan(x_r=best[0], c_r=c_r,
                                candidates_considered=considered,
                                rounds=round_idx, score=best[1])
        if round_idx < max_rounds:
            scored = resample_fn()
    raise RecoveryExhausted(
        f"no candidate scored <= {eta} after {max_rounds} rounds")


def run_recovery(state: RobotState, plan: RecoveryPlan,
                 cfg: TrackerConfig | None = None, on_state=None) -> RobotState:
    """Brake to rest, then go-to-goal to the recovery state inside c_r.

    Every visited position must stay inside the recovery box; exceeding the
    simulated-time budget raises RecoveryTimeout.
    """
    cfg = cfg or TrackerConfig()
    if not contains(plan.c_r, state.p, tol=1e-6):
        raise NoFreeSpace("recovery started outside its region")
    deadline = state.t + RECOVERY_TIMEOUT
    while state.speed > ARRIVE_SPEED:
        state = brake_step(state, cfg.dt, cfg.a_max)
        if on_state:
            on_state(state, "STOPPING")
        if state.t > deadline:
            raise RecoveryTimeout("stopping phase exceeded the budget")
    goal = plan.x_r.p
    while np.linalg.norm(state.p - goal) >= ARRIVE_DIST or state.speed >= ARRIVE_SPEED:
        state = gtg_step(state, goal, plan.c_r, cfg.dt, cfg)
        if on_state:
            on_state(state, "GTG")
        if state.t > deadline:
            raise RecoveryTimeout("go-to-goal phase exceeded the budget")
    return state
