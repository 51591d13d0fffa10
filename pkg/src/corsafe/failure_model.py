"""Failure-probability model: feature extraction, dataset binning, per-card
GP regression over the time-to-intersect feature, pipeline-failure
composition, and the expected-failures risk metric over a predicted horizon.

One 1-D GP is trained per corridor cardinality; cardinalities with too few
bins fall back to the nearest trained one at query time.  Targets are the
empirical failure probabilities of uniform time-to-intersect bins.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import EmptyAfterBinning
from .geometry import Corridor, contains, polytope_tti
from .gridmap import OCCUPIED, OccupancyGrid

DEFAULT_BIN_WIDTH = 0.25
DEFAULT_MIN_BIN_COUNT = 20
DEFAULT_PSI_RHO = 3.0
DEFAULT_GAMMA_T = 10.0
_JITTER = 1e-8

HYPER_GRID = {
    "l": (0.25, 0.5, 1.0, 2.0),
    "sf2": (0.05, 0.1, 0.25),
    "sn2": (1e-4, 1e-3, 1e-2),
}


@dataclass(frozen=True)
class FeatureVector:
    tti: float          # minimum time-to-intersect of the containing cell, s
    n_cells: int        # corridor cardinality


@dataclass
class FailureDataset:
    samples: list       # [(FeatureVector, z_b), ...]

    def __len__(self) -> int:
        return len(self.samples)

    def append(self, d: FeatureVector, z_b: int) -> None:
        self.samples.append((d, int(z_b)))

    def save_csv(self, path, extra_rows=None) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t_C", "card_C", "z_b"])
            for d, z in self.samples:
                w.writerow([f"{d.tti:.6f}", d.n_cells, z])

    @classmethod
    def load_csv(cls, path) -> "FailureDataset":
        samples = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                samples.append((FeatureVector(float(row["t_C"]), int(row["card_C"])),
                                int(row["z_b"])))
        return cls(samples)


def extract_features(state, corridor: Corridor, gamma_t: float = DEFAULT_GAMMA_T) -> FeatureVector:
    """Time-to-intersect of the first corridor cell containing the state's
    position (0 when the state has exited every cell) plus the cardinality."""
    p = np.asarray(state.p, dtype=float)
    v = np.asarray(state.v, dtype=float)
    for cell in corridor:
        if contains(cell, p):
            return FeatureVector(polytope_tti(cell, p, v, gamma_t), len(corridor))
    return FeatureVector(0.0, len(corridor))


@dataclass(frozen=True)
class Bin:
    center: float
    p: float
    count: int


def bin_dataset(data: FailureDataset, bin_width: float = DEFAULT_BIN_WIDTH,
                min_bin_count: int = DEFAULT_MIN_BIN_COUNT,
                gamma_t: float = DEFAULT_GAMMA_T) -> dict[int, list[Bin]]:
    """Per-cardinality empirical failure probability in uniform tti bins.

    Bins with fewer than ``min_bin_count`` samples are dropped; raises
    EmptyAfterBinning when nothing survives.
    """
    if not data.samples:
        raise EmptyAfterBinning("dataset is empty")
    n_bins = int(np.ceil(gamma_t / bin_width))
    acc: dict[int, np.ndarray] = {}
    for d, z in data.samples:
        k = min(int(d.tti / bin_width), n_bins - 1)
        a = acc.setdefault(d.n_cells, np.zeros((n_bins, 2)))
        a[k, 0] += 1
        a[k, 1] += z
    out: dict[int, list[Bin]] = {}
    for card in sorted(acc):
        bins = []
        for k in range(n_bins):
            count = int(acc[card][k, 0])
            if count >= min_bin_count:
                bins.append(Bin((k + 0.5) * bin_width,
                                acc[card][k, 1] / count, count))
        if bins:
            out[card] = bins
    if not out:
        raise EmptyAfterBinning(
            f"no bin reached min_bin_count={min_bin_count}")
    return out


# ---------------------------------------------------------------------------
# Gaussian process regression (RBF kernel, constant prior mean)


def _kernel(a: np.ndarray, b: np.ndarray, l: float, sf2: float) -> np.ndarray:
    d = a[:, None] - b[None, :]
    return sf2 * np.exp(-0.5 * (d / l) ** 2)


@dataclass
class CardModel:
    card: int
    D: np.ndarray
    P: np.ndarray
    l: float
    sf2: float
    sn2: float
    prior_mean: float
    _chol: tuple = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    def finalize(self) -> "CardModel":
        K = _kernel(self.D, self.D, self.l, self.sf2)
        K[np.diag_indices_from(K)] += self.sn2 + _JITTER
        self._chol = cho_factor(K, lower=True)
        self._alpha = cho_solve(self._chol, self.P - self.prior_mean)
        return self

    def posterior(self, x: float) -> tuple[float, float]:
        ks = _kernel(self.D, np.array([x]), self.l, self.sf2)[:, 0]
        mu = self.prior_mean + float(ks @ self._alpha)
        w = cho_solve(self._chol, ks)
        var = self.sf2 - float(ks @ w)
        return mu, max(var, 0.0)

    def posterior_mean(self, xs: np.ndarray) -> np.ndarray:
        """Batched posterior mean only (skips the variance backsolve)."""
        ks = _kernel(self.D, np.asarray(xs, dtype=float), self.l, self.sf2)
        return self.prior_mean + ks.T @ self._alpha

    def log_marginal_likelihood(self) -> float:
        y = self.P - self.prior_mean
        L = self._chol[0]
        return float(-0.5 * y @ self._alpha - np.log(np.diag(L)).sum()
                     - 0.5 * len(y) * np.log(2 * np.pi))


@dataclass
class GPFailureModel:
    per_card: dict[int, CardModel]
    gamma_t: float = DEFAULT_GAMMA_T
    bin_width: float = DEFAULT_BIN_WIDTH

    def card_for(self, card: int) -> int:
        """Nearest trained cardinality (ties toward the smaller one)."""
        trained = sorted(self.per_card)
        return min(trained, key=lambda c: (abs(c - card), c))

    def to_dict(self) -> dict:
        return {
            "per_card": [
                {"card": m.card, "D": m.D.tolist(), "P": m.P.tolist(),
                 "hyper": {"l": m.l, "sf2": m.sf2, "sn2": m.sn2},
                 "prior_mean": m.prior_mean}
                for m in self.per_card.values()
            ],
            "gamma_t": self.gamma_t,
            "bin_width": self.bin_width,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "GPFailureModel":
        per_card = {}
        for m in d["per_card"]:
            cm = CardModel(int(m["card"]), np.asarray(m["D"], float),
                           np.asarray(m["P"], float), m["hyper"]["l"],
                           m["hyper"]["sf2"], m["hyper"]["sn2"],
                           m["prior_mean"]).finalize()
            per_card[cm.card] = cm
        return cls(per_card, d.get("gamma_t", DEFAULT_GAMMA_T),
                   d.get("bin_width", DEFAULT_BIN_WIDTH))

    @classmethod
    def load(cls, path) -> "GPFailureModel":
        with open(Path(path)) as f:
            return cls.from_dict(json.load(f))


class InsufficientData(EmptyAfterBinning):
    """No cardinality had enough bins to train on."""


def gp_fit(binned: dict[int, list[Bin]], hyper_grid: dict | None = None,
           gamma_t: float = DEFAULT_GAMMA_T,
           bin_width: float = DEFAULT_BIN_WIDTH) -> GPFailureModel:
    """One GP per cardinality with >= 3 bins; hyperparameters by grid search
    on the log marginal likelihood; prior mean is the card's mean target."""
    grid = hyper_grid or HYPER_GRID
    per_card = {}
    for card, bins in sorted(binned.items()):
        if len(bins) < 3:
            continue
        D = np.array([b.center for b in bins])
        P = np.array([b.p for b in bins])
        prior = float(P.mean())
        best = None
        for l in grid["l"]:
            for sf2 in grid["sf2"]:
                for sn2 in grid["sn2"]:
                    m = CardModel(card, D, P, l, sf2, sn2, prior).finalize()
                    lml = m.log_marginal_likelihood()
                    if best is None or lml > best[0] + 1e-12:
                        best = (lml, m)
        per_card[card] = best[1]
    if not per_card:
        raise InsufficientData("no cardinality has >= 3 bins")
    return GPFailureModel(per_card, gamma_t, bin_width)


def gp_predict(model: GPFailureModel, d: FeatureVector) -> tuple[float, float]:
    """Posterior (mean, variance) at a feature point; mean clamped to [0, 1],
    cardinalities outside the trained set mapped to the nearest one."""
    cm = model.per_card[model.card_for(d.n_cells)]
    mu, var = cm.posterior(d.tti)
    return min(max(mu, 0.0), 1.0), var


def pipeline_failure_prob(z_f: int, p_backend: float) -> float:
    """Whole-pipeline failure probability: certain on front-end failure,
    otherwise the back-end estimate."""
    if not 0.0 <= p_backend <= 1.0:
        raise ValueError("p_backend must be a probability")
    return 1.0 if z_f else p_backend


@dataclass
class RiskReport:
    per_state: list
    rho_tau: float
    triggered: bool
    threshold: float


def assess_risk(horizon, corridor: Corridor, model: GPFailureModel,
                belief: OccupancyGrid, psi_rho: float = DEFAULT_PSI_RHO) -> RiskReport:
    """Expected number of planner failures across the predicted horizon.

    Each predicted state gets a cheap front-end check (occupancy at its
    position) and a GP back-end estimate against the current corridor; the
    risk is the sum of the per-state pipeline failure probabilities.  The
    whole horizon shares one corridor, so the GP means are evaluated as one
    batch per call.
    """
    states = list(horizon)
    n = len(states)
    P = np.array([s.p for s in states])
    V = np.array([s.v for s in states])
    ttis = np.zeros(n)
    assigned = np.zeros(n, dtype=bool)
    for cell in corridor:
        inside = np.all(cell.A @ P.T <= cell.b[:, None] + 1e-9, axis=0)
        todo = inside & ~assigned
        if not todo.any():
            continue
        rv = V[todo] @ cell.A.T
        slack = cell.b[None, :] - P[todo] @ cell.A.T
        t = np.full_like(rv, model.gamma_t)
        approaching = rv > 0
        t[approaching] = np.clip(slack[approaching] / rv[approaching],
                                 0.0, model.gamma_t)
        ttis[todo] = t.min(axis=1)
        assigned |= inside
    cm = model.per_card[model.card_for(len(corridor))]
    mu = np.clip(cm.posterior_mean(ttis), 0.0, 1.0)
    probs = []
    for i, s in enumerate(states):
        if belief.value_at(s.p) == OCCUPIED:
            probs.append(1.0)
        else:
            probs.append(float(mu[i]))
    rho = float(sum(probs))
    return RiskReport(per_state=probs, rho_tau=rho,
                      triggered=rho > psi_rho, threshold=psi_rho)
