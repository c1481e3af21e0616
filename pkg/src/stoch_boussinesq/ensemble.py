"""Monte Carlo orchestration over independent Brownian paths.

Path i uses seed ``base_seed + i`` for both its initial datum and its
increments, so every per-path result is a function of (config, i) alone.
Reductions use ``math.fsum`` over results sorted by path index, which makes
the summary independent of execution order and worker count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from typing import Any, Optional

import numpy as np

from . import spectral as sp
from .diagnostics import lp_norm, weighted_energy
from .dynamics import Cutoff
from .integrator import StepConfig, TrajectoryResult, run_trajectory
from .noise import NoiseModel, SigmaSpec, TransportCoefficients, apply_sigma, assumption_report
from .picard import LinearProblem, auto_horizon, picard_solve, solve_linear
from .stopping import StoppingRule, maximality_scan

EXPERIMENTS = ("linear_estimate", "local_existence", "contraction", "global_decay", "maximality")
NONLINEAR = tuple(e for e in EXPERIMENTS if e != "linear_estimate")
FAILURE_LIMIT = 0.10
WORKERS_ENV = "BSQ_WORKERS"


@dataclass
class GridConfig:
    n: int = 16
    dealias_fraction: float = 2.0 / 3.0


@dataclass
class TransportConfig:
    """kind: zero | random | constant | terms."""

    kind: str = "zero"
    dim_h: int = 8
    seed: int = 0
    band: int = 2
    nb2: Optional[float] = None
    nb0: Optional[float] = None
    vectors: Optional[list] = None
    modes: Optional[list] = None


@dataclass
class SigmaConfig:
    kind: str = "zero"
    eps0: float = 0.0
    c_affine: float = 0.0


@dataclass
class PicardConfig:
    max_iter: int = 10
    tol: float = 1e-6
    inner_max: int = 5
    auto_horizon: bool = True
    max_halvings: int = 8


@dataclass
class EnsembleConfig:
    experiment: str = "global_decay"
    n_paths: int = 2
    base_seed: int = 0
    p: float = 6.0
    a: float = 0.05
    delta0: float = 0.1
    dt: float = 2e-3
    t_final: float = 0.02
    scheme: str = "etd_euler_maruyama"
    record_every: int = 1
    initial_lp: float = 0.01
    initial_band: int = 2
    convection: bool = True
    buoyancy: bool = True
    c_bdg: float = 2.0
    nb2_max: float = 0.01
    eps0_max: float = 0.01
    stop_level: Optional[float] = None
    levels: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    grid: GridConfig = field(default_factory=GridConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    sigma: SigmaConfig = field(default_factory=SigmaConfig)
    picard: PicardConfig = field(default_factory=PicardConfig)

    def __post_init__(self):
        for name, sub in (("grid", GridConfig), ("transport", TransportConfig), ("sigma", SigmaConfig), ("picard", PicardConfig)):
            val = getattr(self, name)
            if isinstance(val, dict):
                setattr(self, name, sub(**val))
        self.levels = [float(x) for x in self.levels]
        errs = config_errors(self)
        if errs:
            raise ValueError("; ".join(errs))

    def step_config(self) -> StepConfig:
        return StepConfig(
            dt=self.dt,
            t_final=self.t_final,
            scheme=self.scheme,
            record_every=self.record_every,
            p=self.p,
            a=self.a,
            convection=self.convection and self.experiment != "linear_estimate",
            buoyancy=self.buoyancy,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def key(self) -> str:
        """Canonical JSON of the simulation fields (subclass extras excluded)."""
        d = self.to_dict()
        return json.dumps({f.name: d[f.name] for f in fields(EnsembleConfig)}, sort_keys=True)


def config_errors(cfg: EnsembleConfig) -> list[str]:
    """Field-level problems, each prefixed by the offending field name."""
    errs = []
    if cfg.experiment not in EXPERIMENTS:
        errs.append(f"experiment: unknown {cfg.experiment!r}, expected one of {EXPERIMENTS}")
    if cfg.experiment == "linear_estimate":
        if not cfg.p > 2:
            errs.append(f"p: linear_estimate requires p > 2, got {cfg.p}")
    elif not cfg.p > 5:
        errs.append(f"p: {cfg.experiment} requires p > 5, got {cfg.p}")
    if not isinstance(cfg.n_paths, int) or cfg.n_paths < 2:
        errs.append("n_paths: must be an integer >= 2 (a standard error needs two paths)")
    if not isinstance(cfg.grid.n, int) or cfg.grid.n < 4 or cfg.grid.n % 2:
        errs.append(f"grid.n: must be an even integer >= 4, got {cfg.grid.n}")
    if not 0 < cfg.grid.dealias_fraction <= 1:
        errs.append("grid.dealias_fraction: must lie in (0, 1]")
    if not cfg.dt > 0:
        errs.append("dt: must be positive")
    if not cfg.t_final > 0:
        errs.append("t_final: must be positive")
    if cfg.dt > 0 and cfg.t_final > 0:
        n = cfg.t_final / cfg.dt
        if n < 1 - 1e-12 or abs(n - round(n)) > 1e-9 * max(1.0, n):
            errs.append(f"t_final: must be a positive integer multiple of dt ({cfg.t_final} / {cfg.dt} = {n:.6g})")
    if not isinstance(cfg.record_every, int) or cfg.record_every < 1:
        errs.append("record_every: must be a positive integer")
    if cfg.a < 0:
        errs.append("a: must be nonnegative")
    if not cfg.delta0 > 0:
        errs.append("delta0: must be positive")
    if cfg.initial_lp < 0:
        errs.append("initial_lp: must be nonnegative")
    if cfg.transport.kind not in ("zero", "random", "constant", "terms"):
        errs.append(f"transport.kind: unknown {cfg.transport.kind!r}")
    if cfg.transport.dim_h < 1:
        errs.append("transport.dim_h: must be >= 1")
    if cfg.sigma.kind not in ("zero", "diagonal-linear", "affine"):
        errs.append(f"sigma.kind: unknown {cfg.sigma.kind!r}")
    if cfg.sigma.eps0 < 0 or cfg.sigma.c_affine < 0:
        errs.append("sigma: eps0 and c_affine must be nonnegative")
    if any(b < a for a, b in zip(cfg.levels, cfg.levels[1:])) or any(x <= 0 for x in cfg.levels):
        errs.append("levels: must be positive and nondecreasing")
    if not cfg.picard.tol > 0:
        errs.append("picard.tol: must be positive")
    return errs


# ---------------------------------------------------------------------------
# model construction


def build_transport(cfg: EnsembleConfig, grid: sp.Grid) -> TransportCoefficients:
    t = cfg.transport
    if t.kind == "zero":
        return TransportCoefficients.zero(grid, t.dim_h)
    if t.kind == "random":
        return TransportCoefficients.random(grid, t.dim_h, t.seed, band=t.band, nb2=t.nb2, nb0=t.nb0)
    if t.kind == "constant":
        return TransportCoefficients.constant(grid, t.vectors)
    return TransportCoefficients.from_terms(grid, t.modes)


def build_model(cfg: EnsembleConfig) -> NoiseModel:
    return _cached_model(cfg.key())


@lru_cache(maxsize=8)
def _cached_model(key: str) -> NoiseModel:
    cfg = EnsembleConfig(**json.loads(key))
    grid = sp.Grid(cfg.grid.n, cfg.grid.dealias_fraction)
    sigma = SigmaSpec(cfg.sigma.kind, cfg.sigma.eps0, cfg.sigma.c_affine, cfg.p)
    return NoiseModel(build_transport(cfg, grid), sigma, cfg.c_bdg)


def initial_state(cfg: EnsembleConfig, grid: sp.Grid, seed: int) -> np.ndarray:
    """Random band-limited state rescaled to ||U0||_p = cfg.initial_lp."""
    rng = np.random.default_rng([seed & (2**63 - 1), 0, 0, 1])
    U = sp.random_state(grid, rng, band=cfg.initial_band)
    if cfg.initial_lp == 0:
        return np.zeros_like(U)
    return U * (cfg.initial_lp / lp_norm(grid, U, cfg.p))


def model_report(cfg: EnsembleConfig):
    return assumption_report(build_model(cfg), cfg.p, cfg.nb2_max, cfg.eps0_max)


# ---------------------------------------------------------------------------
# per-path work


@dataclass
class PathResult:
    path: int
    seed: int
    status: str = "ok"
    error: str = ""
    lp0_p: float = 0.0
    sup_weighted: float = math.nan
    integral_weighted_dissipation: float = math.nan
    sup_norm: float = math.nan
    crossed: bool = False
    stopped: Optional[list] = None
    extra: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    final_state: Any = None
    final_time: float = 0.0

    def to_dict(self, with_trace: bool = False) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("trace", "final_state")}
        if with_trace:
            d["trace"] = self.trace
        return json.loads(json.dumps(d))


def _summarise_traj(res: PathResult, traj: TrajectoryResult, cfg: EnsembleConfig) -> None:
    we = weighted_energy(traj.energies, cfg.a)
    res.sup_weighted = we.sup_weighted
    res.integral_weighted_dissipation = we.integral_weighted_dissipation
    res.sup_norm = traj.sup_lp(cfg.p)
    res.crossed = res.sup_norm >= 0.5 * cfg.delta0
    res.stopped = list(traj.stopped) if traj.stopped else None
    res.trace = [r.to_json() for r in traj.energies]
    res.final_state = traj.final_state
    res.final_time = traj.times[-1]


def run_path(cfg: EnsembleConfig, path: int) -> PathResult:
    """One path of the configured experiment; failures are captured, not raised."""
    seed = cfg.base_seed + path
    res = PathResult(path=path, seed=seed)
    try:
        model = build_model(cfg)
        grid = model.grid
        U0 = initial_state(cfg, grid, seed)
        res.lp0_p = lp_norm(grid, U0, cfg.p) ** cfg.p
        scfg = cfg.step_config()
        c = Cutoff(cfg.delta0)
        exp = cfg.experiment
        if exp == "global_decay":
            traj = run_trajectory(U0, scfg, model, c, True, seed)
            _summarise_traj(res, traj, cfg)
        elif exp == "local_existence":
            level = cfg.stop_level if cfg.stop_level is not None else cfg.delta0
            rule = StoppingRule("norm_threshold", level, horizon=cfg.t_final, p=cfg.p)
            traj = run_trajectory(U0, scfg, model, Cutoff(level), True, seed, stop=rule)
            _summarise_traj(res, traj, cfg)
            res.extra["tau"] = traj.stopped[0] if traj.stopped else cfg.t_final
        elif exp == "linear_estimate":
            g = None
            if model.sigma.kind != "zero":
                g = apply_sigma(model.sigma, grid, U0, model.dim_h)
            traj = solve_linear(LinearProblem(U0, None, g, True, cfg.buoyancy), scfg, model, seed, keep_states=False)
            _summarise_traj(res, traj, cfg)
        elif exp == "contraction":
            pc = cfg.picard
            kw = dict(max_iter=pc.max_iter, tol=pc.tol, inner_max=pc.inner_max)
            if pc.auto_horizon:
                horizon, traj, trace = auto_horizon(U0, scfg, model, c, seed, max_halvings=pc.max_halvings, **kw)
            else:
                traj, trace = picard_solve(U0, scfg, model, c, seed, **kw)
                horizon = scfg.t_final
            _summarise_traj(res, traj, cfg)
            res.extra["picard"] = trace.to_dict()
            res.extra["horizon"] = horizon
        elif exp == "maximality":
            rep = maximality_scan(U0, cfg.levels, scfg, model, seed, strict=False)
            res.extra["maximality"] = rep.to_dict()
            if not (rep.consistency and rep.monotone):
                raise RuntimeError(
                    f"maximality check failed: pair {rep.worst_pair} deviates by {rep.max_deviation:.3e}"
                )
            traj = run_trajectory(U0, scfg, model, Cutoff(cfg.levels[-1]), True, seed)
            _summarise_traj(res, traj, cfg)
        else:  # pragma: no cover - rejected by config validation
            raise ValueError(f"unknown experiment {exp!r}")
        if not (math.isfinite(res.sup_weighted) and math.isfinite(res.integral_weighted_dissipation)):
            raise FloatingPointError("non-finite energy statistics")
    except Exception as err:  # quarantine: any per-path failure is recorded
        res.status = "failed"
        res.error = f"{type(err).__name__}: {err}"
    return res


def _worker(key: str, path: int) -> PathResult:
    return run_path(EnsembleConfig(**json.loads(key)), path)


# ---------------------------------------------------------------------------
# reductions


@dataclass
class EnsembleSummary:
    experiment: str
    n_paths: int
    n_failed: int
    failure_fraction: float
    mean_sup_weighted: float
    se_sup_weighted: float
    mean_integral_weighted_dissipation: float
    se_integral_weighted_dissipation: float
    crossing_fraction: float
    survival_fraction: float
    mean_lp0_p: float
    C_fit: float
    delta0: float
    markov_bound: float
    per_path: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True)


class EnsembleFailure(RuntimeError):
    def __init__(self, message: str, summary: EnsembleSummary, results: list[PathResult]):
        super().__init__(message)
        self.summary = summary
        self.results = results


def _mean_se(xs: list[float]) -> tuple[float, float]:
    n = len(xs)
    if n == 0:
        return math.nan, math.nan
    m = math.fsum(xs) / n
    if n < 2:
        return m, math.nan
    var = math.fsum((x - m) ** 2 for x in xs) / (n - 1)
    return m, math.sqrt(var / n)


def reduce_results(cfg: EnsembleConfig, results: list[PathResult]) -> EnsembleSummary:
    results = sorted(results, key=lambda r: r.path)
    ok = [r for r in results if r.status == "ok"]
    n_failed = len(results) - len(ok)
    msw, sesw = _mean_se([r.sup_weighted for r in ok])
    mid, seid = _mean_se([r.integral_weighted_dissipation for r in ok])
    nok = max(len(ok), 1)
    crossing = sum(r.crossed for r in ok) / nok if ok else math.nan
    survival = sum(r.sup_weighted < 0.5 * cfg.delta0 for r in ok) / nok if ok else math.nan
    mlp0 = math.fsum(r.lp0_p for r in ok) / nok if ok else math.nan
    c_fit = msw / mlp0 if ok and mlp0 > 0 else math.nan
    extras: dict[str, Any] = {}
    if cfg.experiment == "contraction" and ok:
        extras["max_ratio"] = max(r.extra["picard"]["max_ratio"] for r in ok)
        extras["max_residual"] = max(r.extra["picard"]["residual"] for r in ok)
    if cfg.experiment == "maximality" and ok:
        extras["all_consistent"] = all(r.extra["maximality"]["consistency"] for r in ok)
        extras["all_monotone"] = all(r.extra["maximality"]["monotone"] for r in ok)
        extras["max_overlap_deviation"] = max(r.extra["maximality"]["max_deviation"] for r in ok)
    if cfg.experiment == "local_existence" and ok:
        extras["mean_tau"] = math.fsum(r.extra["tau"] for r in ok) / len(ok)
    summary = EnsembleSummary(
        experiment=cfg.experiment,
        n_paths=len(results),
        n_failed=n_failed,
        failure_fraction=n_failed / max(len(results), 1),
        mean_sup_weighted=msw,
        se_sup_weighted=sesw,
        mean_integral_weighted_dissipation=mid,
        se_integral_weighted_dissipation=seid,
        crossing_fraction=crossing,
        survival_fraction=survival,
        mean_lp0_p=mlp0,
        C_fit=c_fit,
        delta0=cfg.delta0,
        markov_bound=math.nan,
        per_path=[r.to_dict() for r in results],
        extras=extras,
    )
    summary.markov_bound = markov_bound(summary, cfg.delta0)[0] if ok else math.nan
    return summary


def markov_bound(summary: EnsembleSummary, delta0: float) -> tuple[float, float]:
    """(1 - 2 E[sup weighted] / delta0 clipped to [0, 1], empirical survival fraction).

    The bound is Markov's inequality for the event sup e^{as}||U||_p^p >= delta0/2.
    """
    if not delta0 > 0:
        raise ValueError("delta0 must be positive")
    bound = min(1.0, max(0.0, 1.0 - 2.0 * summary.mean_sup_weighted / delta0))
    return bound, summary.survival_fraction


def binomial_se(fraction: float, n: int) -> float:
    return math.sqrt(max(fraction * (1.0 - fraction), 0.0) / n)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_paths(cfg: EnsembleConfig, paths, workers: int | None = None) -> list[PathResult]:
    paths = list(paths)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(paths) <= 1:
        return [run_path(cfg, i) for i in paths]
    key = cfg.key()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker, [key] * len(paths), paths))


def run_ensemble(
    cfg: EnsembleConfig,
    workers: int | None = None,
    return_results: bool = False,
    check_assumptions: bool = True,
):
    """Run every path and reduce.

    Raises ValueError when the assumption gate fails (pass_local with active
    transport noise; pass_global for global_decay) and EnsembleFailure when
    more than 10% of paths fail.
    """
    if check_assumptions:
        rep = model_report(cfg)
        if not rep.pass_general:
            raise ValueError("; ".join(rep.messages))
        if build_model(cfg).transport.active and not rep.pass_local:
            raise ValueError("; ".join(rep.messages))
        if cfg.experiment == "global_decay" and not rep.pass_global:
            raise ValueError("; ".join(rep.messages))
    results = run_paths(cfg, range(cfg.n_paths), workers)
    summary = reduce_results(cfg, results)
    if summary.failure_fraction > FAILURE_LIMIT:
        raise EnsembleFailure(
            f"{summary.n_failed} of {summary.n_paths} paths failed (limit {FAILURE_LIMIT:.0%})", summary, results
        )
    return (summary, results) if return_results else summary


def with_param(cfg: EnsembleConfig, dotted: str, value) -> EnsembleConfig:
    """Copy of cfg with a dotted field path (e.g. ``sigma.eps0``) replaced."""
    d = cfg.to_dict()
    node = d
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise KeyError(dotted)
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise KeyError(dotted)
    node[parts[-1]] = value
    return type(cfg)(**d)
