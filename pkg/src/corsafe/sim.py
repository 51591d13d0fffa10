"""Closed-loop episode runner, training-data collection, and the
with/without-recovery evaluation harness.

An episode loops at the control period: sense (raycast + fuse), replan on a
fixed period, track the committed trajectory, predict the state horizon,
assess failure risk, and hand control to the recovery pipeline when the risk
trips the threshold.  Every outcome is encoded, never raised.  Episodes are
deterministic functions of (seed, config); wall-clock timings are therefore
excluded from the logs unless explicitly enabled.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backend import PlanConfig, plan
from .errors import NoFreeSpace
from .failure_model import (DEFAULT_PSI_RHO, FailureDataset, FeatureVector,
                            GPFailureModel, assess_risk)
from .gridmap import (DEFAULT_FOV, DEFAULT_MAX_RANGE, DEFAULT_N_BEAMS, FREE,
                      OccupancyGrid, inflate, raycast, fuse_scan_inplace)
from .recovery import (RecoveryExhausted, RecoveryTimeout, recovery_region,
                       sample_candidates, score_candidates, select_recovery)
from .tracker import (Horizon, RobotState, TrackerConfig, brake_step,
                      gtg_step, predict_horizon, track_step)

GOAL_TOL = 0.3
REST_SPEED = 0.05


@dataclass
class SensorConfig:
    fov: float = DEFAULT_FOV
    n_beams: int = DEFAULT_N_BEAMS
    max_range: float = DEFAULT_MAX_RANGE


@dataclass
class RecoveryConfig:
    eta: float = 0.5
    n_candidates: int = 20
    max_rounds: int = 5
    arrive_dist: float = 0.05


@dataclass
class EpisodeConfig:
    world: OccupancyGrid
    start: np.ndarray
    goal: np.ndarray
    seed: int = 0
    replan_period: float = 0.5
    psi_rho: float = DEFAULT_PSI_RHO
    recovery: bool = True
    collision_radius: float = 0.2
    timeout: float = 60.0
    start_jitter: float = 0.3
    plan: PlanConfig = field(default_factory=PlanConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    recovery_cfg: RecoveryConfig = field(default_factory=RecoveryConfig)
    model: GPFailureModel | None = None
    monitor: bool | None = None     # default: follow `recovery`
    log_timing: bool = False


@dataclass
class EpisodeLog:
    outcome: str
    seed: int
    rollout: list = field(default_factory=list)      # (t, px, py, vx, vy, mode)
    solves: list = field(default_factory=list)       # dict per plan() call
    risk: list = field(default_factory=list)         # (t, rho, triggered)
    recovery_events: list = field(default_factory=list)
    samples: list = field(default_factory=list)      # (FeatureVector, z_b)
    summary: dict = field(default_factory=dict)

    def write(self, log_dir) -> None:
        d = Path(log_dir)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "rollout.csv", "w") as f:
            f.write("t,px,py,vx,vy,mode\n")
            for row in self.rollout:
                f.write("%.3f,%.6f,%.6f,%.6f,%.6f,%s\n" % row)
        with open(d / "solves.csv", "w") as f:
            f.write("seed,t,z_f,z_b,t_C,card_C,solve_ms\n")
            for s in self.solves:
                f.write("%d,%.3f,%d,%d,%s,%s,%.3f\n" % (
                    self.seed, s["t"], s["z_f"], s["z_b"],
                    "" if s["t_C"] is None else "%.6f" % s["t_C"],
                    "" if s["card_C"] is None else "%d" % s["card_C"],
                    s["solve_ms"]))
        with open(d / "risk.csv", "w") as f:
            f.write("t,rho_tau,triggered\n")
            for t, rho, trig in self.risk:
                f.write("%.3f,%.6f,%d\n" % (t, rho, trig))
        with open(d / "recovery.jsonl", "w") as f:
            for ev in self.recovery_events:
                f.write(json.dumps(ev, sort_keys=True) + "\n")
        with open(d / "episode.json", "w") as f:
            json.dump({"outcome": self.outcome, "seed": self.seed,
                       **self.summary}, f, indent=1, sort_keys=True)


class _Collision(Exception):
    pass


def run_episode(cfg: EpisodeConfig) -> EpisodeLog:
    rng = np.random.default_rng(cfg.seed)
    world = cfg.world
    monitor = cfg.recovery if cfg.monitor is None else cfg.monitor
    if monitor and cfg.model is None:
        raise ValueError("risk monitoring requires a trained model")
    log = EpisodeLog(outcome="TIMEOUT", seed=cfg.seed)
    goal = np.asarray(cfg.goal, dtype=float)

    start = _jitter_start(world, np.asarray(cfg.start, float),
                          cfg.start_jitter, cfg.plan.frontend.robot_radius, rng)
    state = RobotState.at_rest(start)
    belief = world.blank_belief()
    dt = cfg.tracker.dt
    heading = math.atan2(goal[1] - start[1], goal[0] - start[0])
    traj = None
    corridor = None
    committed_goal = None
    inflated = None
    last_plan_t = -np.inf
    occ_world = world.occupied_mask()
    r_cells = int(math.ceil(cfg.collision_radius / world.resolution)) + 1

    def sense(st: RobotState, hd: float):
        scan = raycast(world, (st.p[0], st.p[1], hd), cfg.sensor.fov,
                       cfg.sensor.n_beams, cfg.sensor.max_range)
        fuse_scan_inplace(belief, scan)

    def check_collision(st: RobotState):
        ix, iy = world.world_to_cell(st.p)
        for jy in range(max(0, iy - r_cells), min(world.height, iy + r_cells + 1)):
            for jx in range(max(0, ix - r_cells), min(world.width, ix + r_cells + 1)):
                if occ_world[jy, jx] and \
                        np.linalg.norm(world.cell_center(jx, jy) - st.p) <= cfg.collision_radius:
                    raise _Collision

    def emit(st: RobotState, mode: str):
        log.rollout.append((st.t, st.p[0], st.p[1], st.v[0], st.v[1], mode))

    emit(state, "NOMINAL")
    try:
        check_collision(state)
        while state.t < cfg.timeout:
            if state.speed > 0.3:
                heading = math.atan2(state.v[1], state.v[0])
            sense(state, heading)
            if traj is not None and state.t > traj.end_time + 1.0:
                traj = None  # reference exhausted; hold and keep replanning
                corridor = None
            if traj is None or state.t - last_plan_t >= cfg.replan_period:
                inflated = inflate(belief, cfg.plan.frontend.robot_radius)
                res = _plan_with_fallback(cfg, belief, state, goal, inflated, log)
                if res.trajectory is not None and _should_commit(
                        res, traj, corridor, committed_goal, goal, state, inflated):
                    traj = res.trajectory
                    corridor = res.corridor
                    committed_goal = res.local_goal
                last_plan_t = state.t
            if traj is not None:
                state = track_step(state, traj, dt, cfg.tracker)
                mode = "NOMINAL"
            else:
                state = brake_step(state, dt, cfg.tracker.a_max)
                mode = "STOPPING"
            emit(state, mode)
            check_collision(state)
            if np.linalg.norm(state.p - goal) < GOAL_TOL:
                log.outcome = "GOAL"
                return log
            if monitor and traj is not None and corridor is not None:
                horizon = predict_horizon(state, traj, cfg.tracker.horizon,
                                          dt, cfg.tracker)
                report = assess_risk(horizon, corridor, cfg.model,
                                     inflated if inflated is not None else belief,
                                     cfg.psi_rho)
                log.risk.append((state.t, report.rho_tau, int(report.triggered)))
                if report.triggered and cfg.recovery:
                    state, heading = _run_recovery_phase(
                        cfg, state, heading, belief, goal, rng, log,
                        sense, check_collision, emit)
                    traj = None
                    corridor = None
                    committed_goal = None
                    last_plan_t = -np.inf
        return log
    except _Collision:
        log.outcome = "COLLISION"
        return log
    except (RecoveryExhausted, RecoveryTimeout, NoFreeSpace) as e:
        log.outcome = "FAILED_SAFE"
        log.summary["failed_safe_reason"] = str(e)
        return log
    finally:
        log.summary.update({
            "final_t": round(state.t, 3),
            "final_p": [round(float(v), 4) for v in state.p],
            "n_solves": len(log.solves),
            "n_recoveries": len(log.recovery_events),
        })


def _should_commit(res, traj, corridor, committed_goal, goal, state, inflated) -> bool:
    """Replace the committed trajectory only when it is stale, invalidated by
    newly sensed obstacles, or the fresh plan makes strictly better progress;
    plain every-period replacement thrashes between equal-cost routes."""
    from .frontend import corridor_blocked
    if traj is None or corridor is None or committed_goal is None:
        return True
    if state.t > traj.end_time - 1.0:
        return True
    if corridor_blocked(corridor, inflated):
        return True
    new_d = float(np.linalg.norm(np.asarray(res.local_goal) - goal))
    old_d = float(np.linalg.norm(np.asarray(committed_goal) - goal))
    return new_d < old_d - 0.1


def _plan_with_fallback(cfg: EpisodeConfig, belief, state, goal, inflated, log):
    """One nominal planning attempt (logged, one training sample when its
    front end succeeded), then unlogged shorter-horizon retries when the
    robot is (nearly) stopped so a failing full-horizon problem cannot
    deadlock the episode.  The retries are control plumbing, not data."""
    res = plan(belief, state, goal, cfg.plan, inflated=inflated)
    log.solves.append({
        "t": state.t, "z_f": res.z_f, "z_b": res.z_b,
        "t_C": res.features.tti if res.features else None,
        "card_C": res.features.n_cells if res.features else None,
        "solve_ms": res.solve_ms if cfg.log_timing else 0.0,
    })
    if res.z_f == 0:
        log.samples.append((res.features, res.z_b))
    if res.trajectory is None and state.speed < 0.3:
        for scale in (0.5, 0.25):
            pc = replace(cfg.plan, frontend=replace(
                cfg.plan.frontend,
                horizon_dist=cfg.plan.frontend.horizon_dist * scale))
            retry = plan(belief, state, goal, pc, inflated=inflated)
            if retry.trajectory is not None:
                return retry
    return res


def _jitter_start(world: OccupancyGrid, start: np.ndarray, jitter: float,
                  robot_radius: float, rng: np.random.Generator) -> np.ndarray:
    """Per-seed start perturbation; trials differ only through this and any
    recovery sampling, since the rest of the episode is deterministic."""
    if jitter <= 0:
        return start
    inflated = inflate(world, robot_radius)
    for _ in range(50):
        ang = rng.uniform(0, 2 * math.pi)
        rad = jitter * math.sqrt(rng.uniform())
        cand = start + rad * np.array([math.cos(ang), math.sin(ang)])
        if inflated.value_at(cand) == FREE:
            return cand
    return start


def _run_recovery_phase(cfg, state, heading, belief, goal, rng, log,
                        sense, check_collision, emit):
    """Stop, pick a recovery state, and go to it inside the free box."""
    dt = cfg.tracker.dt
    rc = cfg.recovery_cfg
    while state.speed > REST_SPEED:
        if state.speed > 0.3:
            heading = math.atan2(state.v[1], state.v[0])
        sense(state, heading)
        state = brake_step(state, dt, cfg.tracker.a_max)
        emit(state, "STOPPING")
        check_collision(state)

    sense(state, heading)
    inflated = inflate(belief, cfg.plan.frontend.robot_radius)
    region = recovery_region(belief, state.p, cfg.plan.frontend.robot_radius)

    def sample_and_score():
        cands, _ = sample_candidates(belief, state.p, rc.n_candidates, rng,
                                     cfg.plan.frontend.robot_radius, region=region)
        return score_candidates(cands, belief, cfg.model, goal, cfg.plan,
                                inflated=inflated)

    scored = sample_and_score()
    plan_sel = select_recovery(scored, rc.eta, rc.max_rounds, sample_and_score,
                               state.p, region)
    state = RobotState(state.p, np.zeros(2), np.zeros(2), state.t + dt)
    emit(state, "RECOVERY")
    log.recovery_events.append({
        "t": round(state.t, 3),
        "p0": [round(float(v), 4) for v in state.p],
        "x_r": [round(float(v), 4) for v in plan_sel.x_r.p],
        "rounds": plan_sel.rounds,
        "n_candidates": plan_sel.candidates_considered,
        "score": round(plan_sel.score, 6),
    })
    target = plan_sel.x_r.p
    deadline = state.t + 30.0
    while (np.linalg.norm(state.p - target) >= rc.arrive_dist
           or state.speed >= REST_SPEED):
        sense(state, heading)
        state = gtg_step(state, target, plan_sel.c_r, dt, cfg.tracker)
        emit(state, "GTG")
        check_collision(state)
        if state.t > deadline:
            raise RecoveryTimeout("recovery transit exceeded 30 s")
    return state, heading


# ---------------------------------------------------------------------------
# dataset collection and evaluation


def _worker_threads() -> int:
    env = os.environ.get("CS_THREADS", "")
    try:
        n = int(env)
    except ValueError:
        n = 0
    return max(1, n if n > 0 else (os.cpu_count() or 1))


def _run_collect_episode(args):
    root, entry, pair_idx, base = args
    from .worlds import WorldEntry  # noqa: F401  (unpickled type)
    grid = entry.load(root)
    start, goal = entry.pairs[pair_idx]
    cfg = replace(base, world=grid, start=np.asarray(start, float),
                  goal=np.asarray(goal, float),
                  seed=entry.seed * 1000 + pair_idx,
                  recovery=False, monitor=False, model=None)
    log = run_episode(cfg)
    return entry.id, pair_idx, log.outcome, log.samples


def collect_dataset(suite_dir, episodes_per_world: int | None = None,
                    base_cfg: EpisodeConfig | None = None,
                    progress=None) -> tuple[FailureDataset, list]:
    """Nominal episodes (no monitoring, no recovery) over a training suite;
    one (features, z_b) sample per back-end invocation that passed the front
    end.  Returns the dataset plus per-episode outcome rows."""
    from multiprocessing import Pool
    from .worlds import load_suite
    root, entries = load_suite(suite_dir)
    base = base_cfg or EpisodeConfig(world=None, start=np.zeros(2), goal=np.zeros(2))
    jobs = []
    for entry in entries:
        n = len(entry.pairs) if episodes_per_world is None \
            else min(episodes_per_world, len(entry.pairs))
        for k in range(n):
            jobs.append((root, replace_grid_none(entry), k, base))
    n_proc = min(_worker_threads(), len(jobs)) or 1
    results = []
    if n_proc == 1:
        for job in jobs:
            results.append(_run_collect_episode(job))
            if progress:
                progress(len(results), len(jobs))
    else:
        with Pool(n_proc) as pool:
            for r in pool.imap(_run_collect_episode, jobs, chunksize=1):
                results.append(r)
                if progress:
                    progress(len(results), len(jobs))
    results.sort(key=lambda r: (r[0], r[1]))
    data = FailureDataset([])
    outcomes = []
    for wid, k, outcome, samples in results:
        outcomes.append({"world": wid, "pair": k, "outcome": outcome,
                         "n_samples": len(samples)})
        for d, z in samples:
            data.append(d, z)
    return data, outcomes


def replace_grid_none(entry):
    """Drop the cached grid so pool workers load from disk themselves."""
    from dataclasses import replace as dc_replace
    return dc_replace(entry, grid=None)


def eval_seed(world_id: str, goal_idx: int, trial: int) -> int:
    """Stable episode seed shared by both arms of a (world, goal, trial)."""
    import zlib
    return zlib.crc32(f"{world_id}/{goal_idx}/{trial}".encode()) % (2 ** 31)


def _run_eval_episode(args):
    root, entry, goal_idx, arm, trial, base, model_dict = args
    grid = entry.load(root)
    model = GPFailureModel.from_dict(model_dict) if model_dict else None
    cfg = replace(base, world=grid, start=np.asarray(entry.start, float),
                  goal=np.asarray(entry.goals[goal_idx], float),
                  seed=eval_seed(entry.id, goal_idx, trial),
                  recovery=(arm == "recovery"), monitor=(arm == "recovery"),
                  model=model)
    log = run_episode(cfg)
    return entry.id, goal_idx, arm, trial, log.outcome


def evaluate(suite_dir, model: GPFailureModel, trials: int,
             base_cfg: EpisodeConfig | None = None, arms=("recovery", "nominal"),
             progress=None) -> list[dict]:
    """Success table over (world, goal, arm); counts GOAL outcomes."""
    from multiprocessing import Pool
    from .worlds import load_suite
    root, entries = load_suite(suite_dir)
    base = base_cfg or EpisodeConfig(world=None, start=np.zeros(2), goal=np.zeros(2))
    model_dict = model.to_dict() if model is not None else None
    jobs = []
    for entry in entries:
        for gi in range(len(entry.goals)):
            for arm in arms:
                for trial in range(trials):
                    jobs.append((root, replace_grid_none(entry), gi, arm, trial,
                                 base, model_dict if arm == "recovery" else None))
    n_proc = min(_worker_threads(), len(jobs)) or 1
    rows = []
    if n_proc == 1:
        for job in jobs:
            rows.append(_run_eval_episode(job))
            if progress:
                progress(len(rows), len(jobs))
    else:
        with Pool(n_proc) as pool:
            for r in pool.imap(_run_eval_episode, jobs, chunksize=1):
                rows.append(r)
                if progress:
                    progress(len(rows), len(jobs))
    table = {}
    outcomes = {}
    for wid, gi, arm, trial, outcome in rows:
        key = (wid, gi, arm)
        table.setdefault(key, {"successes": 0, "trials": 0, "collisions": 0})
        table[key]["trials"] += 1
        table[key]["successes"] += outcome == "GOAL"
        table[key]["collisions"] += outcome == "COLLISION"
        outcomes[(wid, gi, arm, trial)] = outcome
    out = [{"world": w, "goal": g, "arm": a, **v}
           for (w, g, a), v in sorted(table.items())]
    return out
