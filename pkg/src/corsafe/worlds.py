"""World-suite construction and the manifest format shared by the CLI tools.

A suite directory holds one PGM+JSON sidecar per world plus ``manifest.json``
listing ids, seeds, starts, goals, and (for training suites) start/goal
pairs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gridmap import (FREE, OCCUPIED, OccupancyGrid, gen_forest, gen_rooms,
                      inflate, load_pgm, save_pgm, _stamp_rect)

FOREST_SIZE = 30.0
FOREST_DENSITY = 0.08
FOREST_TREE_RADIUS = 0.35
PAIR_MIN_DIST = 10.0


@dataclass
class WorldEntry:
    id: str
    pgm: str
    seed: int
    start: list | None = None
    goals: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    grid: OccupancyGrid | None = None

    def load(self, root: Path) -> OccupancyGrid:
        if self.grid is None:
            self.grid = load_pgm(Path(root) / self.pgm)
        return self.grid


def build_forest_suite(out_dir, n_worlds: int = 10, pairs_per_world: int = 30,
                       density: float = FOREST_DENSITY,
                       tree_radius: float = FOREST_TREE_RADIUS,
                       size: float = FOREST_SIZE, seed0: int = 0,
                       robot_radius: float = 0.2) -> dict:
    """Poisson-forest training worlds with sampled start/goal pairs.

    Worlds get a one-cell boundary wall so episodes cannot wander off-grid;
    pairs are sampled in inflated-free space at least PAIR_MIN_DIST apart.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    worlds = []
    for w in range(n_worlds):
        seed = seed0 + w
        rng = np.random.default_rng(seed)
        grid = gen_forest(size, size, density, tree_radius, rng)
        _stamp_rect(grid, 0, 0, size, grid.resolution, OCCUPIED)
        _stamp_rect(grid, 0, size - grid.resolution, size, size, OCCUPIED)
        _stamp_rect(grid, 0, 0, grid.resolution, size, OCCUPIED)
        _stamp_rect(grid, size - grid.resolution, 0, size, size, OCCUPIED)
        pairs = _sample_pairs(grid, pairs_per_world, rng, robot_radius)
        wid = f"forest_{seed:03d}"
        save_pgm(grid, out / f"{wid}.pgm")
        worlds.append({"id": wid, "pgm": f"{wid}.pgm", "seed": seed,
                       "pairs": [[list(a), list(b)] for a, b in pairs]})
    manifest = {"suite": "forest",
                "params": {"n_worlds": n_worlds, "pairs_per_world": pairs_per_world,
                           "density": density, "tree_radius": tree_radius,
                           "size": size, "seed0": seed0},
                "worlds": worlds}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def _sample_pairs(grid: OccupancyGrid, n: int, rng: np.random.Generator,
                  robot_radius: float) -> list:
    inflated = inflate(grid, 2.0 * robot_radius)
    free = np.argwhere(inflated.data == FREE)
    pairs = []
    guard = 0
    while len(pairs) < n and guard < 20000:
        guard += 1
        iy, ix = free[rng.integers(len(free))]
        jy, jx = free[rng.integers(len(free))]
        a = grid.cell_center(ix, iy)
        b = grid.cell_center(jx, jy)
        if np.linalg.norm(b - a) >= PAIR_MIN_DIST:
            pairs.append((a.round(3).tolist(), b.round(3).tolist()))
    return pairs


ROOMS_VARIANTS = [(1.0, "sparse"), (1.0, "dense"), (2.0, "sparse"), (2.0, "dense")]


def build_rooms_suite(out_dir, seed: int = 7) -> dict:
    """The four connected-rooms evaluation worlds (door width x density)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    worlds = []
    for door, dens in ROOMS_VARIANTS:
        grid, start, goals = gen_rooms(door, dens, np.random.default_rng(seed))
        wid = f"rooms_d{int(door)}_{dens}"
        save_pgm(grid, out / f"{wid}.pgm")
        worlds.append({"id": wid, "pgm": f"{wid}.pgm", "seed": seed,
                       "start": start.tolist(),
                       "goals": [g.tolist() for g in goals]})
    manifest = {"suite": "rooms", "params": {"seed": seed}, "worlds": worlds}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_suite(path) -> tuple[Path, list[WorldEntry]]:
    """Read a suite directory (or its manifest.json) into WorldEntry items."""
    path = Path(path)
    manifest_path = path if path.is_file() else path / "manifest.json"
    with open(manifest_path) as f:
        manifest = json.load(f)
    root = manifest_path.parent
    entries = [WorldEntry(id=w["id"], pgm=w["pgm"], seed=w.get("seed", 0),
                          start=w.get("start"), goals=w.get("goals", []),
                          pairs=w.get("pairs", []))
               for w in manifest["worlds"]]
    return root, entries


def find_world(entries: list[WorldEntry], key: str) -> WorldEntry:
    for e in entries:
        if e.id == key:
            return e
    try:
        return entries[int(key)]
    except (ValueError, IndexError):
        raise KeyError(f"world '{key}' not in suite ({[e.id for e in entries]})")
