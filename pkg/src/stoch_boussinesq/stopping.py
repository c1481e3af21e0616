"""Norm-threshold stopping times and the maximal-solution scan."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .diagnostics import EnergyRecord, lp_norm
from .dynamics import Cutoff
from .integrator import StepConfig, TrajectoryResult, run_trajectory
from .noise import NoiseModel

STOP_KINDS = ("norm_threshold", "none")


@dataclass(frozen=True)
class StoppingRule:
    """tau_n = first recorded time with ||U||_p >= n/2 (0 if already there at t = 0)."""

    kind: str = "norm_threshold"
    level_n: float = 1.0
    horizon: float = math.inf
    p: float = 6.0

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise ValueError(f"unknown stopping kind {self.kind!r}")
        if not self.level_n > 0:
            raise ValueError("threshold level must be positive")

    @property
    def threshold(self) -> float:
        return 0.5 * self.level_n

    def evaluate(self, rec: EnergyRecord) -> Optional[tuple[float, str]]:
        if self.kind == "none" or rec.t > self.horizon:
            return None
        norm = rec.lp_p ** (1.0 / self.p)
        if norm >= self.threshold:
            if rec.t == 0.0:
                return (0.0, f"initial norm {norm:.6g} >= n/2 = {self.threshold:.6g}")
            return (rec.t, f"norm {norm:.6g} reached n/2 = {self.threshold:.6g}")
        return None


class MaximalityError(RuntimeError):
    def __init__(self, message: str, report: "MaximalityReport"):
        super().__init__(message)
        self.report = report


@dataclass
class MaximalityReport:
    levels: list[float]
    tau_n: list[float]
    triggered: list[bool]
    tau_estimate: float
    consistency: bool
    max_deviation: float
    worst_pair: Optional[tuple[float, float]] = None
    horizon: float = 0.0

    @property
    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.tau_n, self.tau_n[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["monotone"] = self.monotone
        return d


def maximality_scan(
    U0: np.ndarray,
    levels: Sequence[float],
    cfg: StepConfig,
    model: NoiseModel,
    seed: int,
    path: int = 0,
    tol: float = 1e-10,
    strict: bool = True,
) -> MaximalityReport:
    """Run the truncated system at delta0 = n for each level on one Brownian path.

    Records tau_n and checks that every pair of level solutions agrees on
    [0, tau_m ^ tau_n] (max ||U^m - U^n||_p over shared recorded times).
    The stopping rule is checked after every step whatever cfg.record_every
    says: with a coarser cadence the norm can pass n/2 between records, the
    cutoff is then already active and the overlap check would fail.
    """
    cfg = replace(cfg, record_every=1)
    levels = [float(n) for n in levels]
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be nondecreasing")
    runs: list[TrajectoryResult] = []
    taus, hits = [], []
    for n in levels:
        rule = StoppingRule("norm_threshold", n, p=cfg.p)
        res = run_trajectory(U0, cfg, model, Cutoff(n), True, seed, stop=rule, path=path, keep_states=True)
        runs.append(res)
        hits.append(res.stopped is not None)
        taus.append(res.stopped[0] if res.stopped else cfg.t_final)

    grid = model.grid
    worst, worst_pair = 0.0, None
    for i, j in itertools.combinations(range(len(levels)), 2):
        t_cap = min(taus[i], taus[j])
        a, b = runs[i], runs[j]
        for k, t in enumerate(a.times):
            if t > t_cap or k >= len(b.times):
                break
            dev = lp_norm(grid, a.states[k] - b.states[k], cfg.p)
            if dev > worst or worst_pair is None:
                worst, worst_pair = dev, (levels[i], levels[j])
    report = MaximalityReport(
        levels=levels,
        tau_n=taus,
        triggered=hits,
        tau_estimate=min(max(taus), cfg.t_final),
        consistency=worst <= tol,
        max_deviation=worst,
        worst_pair=worst_pair,
        horizon=cfg.t_final,
    )
    if strict and not report.consistency:
        raise MaximalityError(
            f"level solutions {worst_pair} disagree on their common interval (max deviation {worst:.3e})", report
        )
    return report
