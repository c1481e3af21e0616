"""Constructive solvers: the linear transport-noise equation and the cutoff iterations.

A linear problem is

    dU = (Delta U + G U + f) dt + (Bold-P(b . grad U) + g) dW,

where f and g do not depend on U. Every iteration level below is one such
solve, with f and g assembled from previously computed trajectories; all
solves of one call share the same Brownian path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import spectral as sp
from .diagnostics import energy_record, lp_norm
from .dynamics import Cutoff, advective_terms, buoyancy, convection, eval_phi
from .integrator import (
    LinearFactors,
    StepConfig,
    TrajectoryResult,
    advance,
    default_increments,
)
from .noise import NoiseModel, apply_sigma

Forcing = Union[None, np.ndarray, Callable[[int], np.ndarray]]


@dataclass
class LinearProblem:
    """Data of a linear solve.

    ``f`` is a 4-component field or a callable step -> field; ``g`` is a
    (dim_h, 4, ...) noise forcing or a callable step -> such an array.
    """

    U0: np.ndarray
    f: Forcing = None
    g: Forcing = None
    transport: bool = True
    buoyancy: bool = True

    def forcing_at(self, k: int):
        return self.f(k) if callable(self.f) else self.f

    def noise_at(self, k: int):
        return self.g(k) if callable(self.g) else self.g


def check_linear_problem(grid: sp.Grid, prob: LinearProblem, tol: float = 1e-10) -> None:
    """Solenoidal first three components and zero mean for the fixed data."""
    fields = [("U0", prob.U0)]
    if isinstance(prob.f, np.ndarray):
        fields.append(("f", prob.f))
    if isinstance(prob.g, np.ndarray):
        fields.extend((f"g[{i}]", gi) for i, gi in enumerate(prob.g))
    for name, F in fields:
        scale = max(float(np.max(np.abs(F))), 1e-300)
        if np.max(np.abs(F[:, 0, 0, 0])) > tol * scale:
            raise ValueError(f"{name} must be mean-zero")
        div = sp.divergence(grid, F[:3])
        if np.max(np.abs(div)) > tol * max(float(np.max(np.abs(grid.kvec * F[:3]))), 1e-300):
            raise ValueError(f"velocity part of {name} must be divergence-free")


def solve_linear(
    prob: LinearProblem,
    cfg: StepConfig,
    model: NoiseModel,
    seed: int,
    path: int = 0,
    increments: Callable[[int], np.ndarray] | None = None,
    keep_states: bool = True,
    check: bool = True,
) -> TrajectoryResult:
    """Solve the linear equation on [0, cfg.t_final].

    With ``keep_states`` the state after every step is kept (index k holds
    time k*dt), which is what the iteration levels consume. Energy records
    follow cfg.record_every.
    """
    grid = model.grid
    if check:
        check_linear_problem(grid, prob)
    if increments is None:
        increments = default_increments(model, cfg.dt, seed, path)
    factors = LinearFactors(grid, cfg.dt, cfg.scheme)
    transport_on = prob.transport and model.transport.active
    U = prob.U0
    res = TrajectoryResult([0.0], [energy_record(grid, U, 0.0, cfg.p, cfg.a)], U, seed=seed, path=path)
    if keep_states:
        res.states.append(U)
    n = cfg.n_steps
    for k in range(n):
        dW = increments(k)
        drift = buoyancy(grid, U) if prob.buoyancy else None
        f = prob.forcing_at(k)
        if f is not None:
            drift = f if drift is None else drift + f
        noise = None
        if transport_on:
            carrier = np.tensordot(dW, model.transport.physical, axes=(0, 0))
            noise = advective_terms(grid, U, carrier[None])[0]
        g = prob.noise_at(k)
        if g is not None:
            gd = np.tensordot(dW, g, axes=(0, 0))
            noise = gd if noise is None else noise + gd
        U = advance(grid, U, factors, drift, noise, k)
        if keep_states:
            res.states.append(U)
        if (k + 1) % cfg.record_every == 0 or k + 1 == n:
            t = (k + 1) * cfg.dt
            res.times.append(t)
            res.energies.append(energy_record(grid, U, t, cfg.p, cfg.a))
    res.final_state = U
    res.n_steps = n
    return res


def sup_diff(grid: sp.Grid, a: Sequence[np.ndarray], b: Sequence[np.ndarray], p: float) -> float:
    """max_k ||a_k - b_k||_p over two state sequences of equal length."""
    if len(a) != len(b):
        raise ValueError("trajectories have different lengths")
    return max(lp_norm(grid, x - y, p) for x, y in zip(a, b))


def mollified_family(
    prob: LinearProblem,
    eps_list: Sequence[float],
    cfg: StepConfig,
    model: NoiseModel,
    seed: int,
    path: int = 0,
) -> list[TrajectoryResult]:
    """Solve the problem with U0, f, g mollified at each eps (same Brownian path)."""
    eps_list = list(eps_list)
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be positive and strictly decreasing")
    grid = model.grid
    out = []
    for eps in eps_list:
        mol = sp.mollifier_symbol(grid, eps)

        def smooth(F, mol=mol):
            if F is None:
                return None
            if callable(F):
                return lambda k, F=F: mol * F(k)
            return mol * F

        mprob = LinearProblem(mol * prob.U0, smooth(prob.f), smooth(prob.g), prob.transport, prob.buoyancy)
        out.append(solve_linear(mprob, cfg, model, seed, path))
    return out


# ---------------------------------------------------------------------------
# cutoff iterations


def _phi_path(grid, states, c: Cutoff, p: float) -> np.ndarray:
    return np.array([eval_phi(c, lp_norm(grid, s, p)) for s in states])


def iterate_level2(
    V: TrajectoryResult,
    U_prev: TrajectoryResult,
    U0: np.ndarray,
    cfg: StepConfig,
    model: NoiseModel,
    c: Cutoff,
    seed: int,
    path: int = 0,
    increments: Callable[[int], np.ndarray] | None = None,
    phi_prev: np.ndarray | None = None,
) -> TrajectoryResult:
    """One sweep of the second iteration.

    Solves the linear problem with forcing phi(||U_prev||_p) phi(||V||_p) B(V)
    and noise phi phi sigma(V) + Bold-P(b . grad U), on the Brownian path of V.
    """
    grid = model.grid
    if len(V.states) != cfg.n_steps + 1 or len(U_prev.states) != cfg.n_steps + 1:
        raise ValueError("V and U_prev must carry a state for every step")
    if not all(np.isfinite(r.lp_p) for r in V.energies):
        raise ValueError("V must have finite recorded energy")
    phi_v = _phi_path(grid, V.states, c, cfg.p)
    if phi_prev is None:
        phi_prev = _phi_path(grid, U_prev.states, c, cfg.p)
    weight = phi_prev * phi_v

    def f(k):
        if not cfg.convection or weight[k] == 0.0:
            return None
        return weight[k] * convection(grid, V.states[k])

    def g(k):
        if model.sigma.kind == "zero" or weight[k] == 0.0:
            return None
        return weight[k] * apply_sigma(model.sigma, grid, V.states[k], model.dim_h)

    prob = LinearProblem(U0, f, g, transport=True, buoyancy=cfg.buoyancy)
    return solve_linear(prob, cfg, model, seed, path, increments, check=False)


@dataclass
class IterationTrace:
    """Per-level convergence history of picard_solve.

    ``diffs`` holds sup_t ||U^(n+1) - U^(n)||_p and ``diffs_pp`` its p-th
    power; ``ratios`` are successive quotients of ``diffs``, kept only where
    the denominator exceeds ``floor``.
    """

    diffs: list[float] = field(default_factory=list)
    diffs_pp: list[float] = field(default_factory=list)
    ratios: list[Optional[float]] = field(default_factory=list)
    inner_sweeps: list[int] = field(default_factory=list)
    sup_norms: list[float] = field(default_factory=list)
    horizon: float = 0.0
    converged: bool = False
    floor: float = 1e-14

    @property
    def defined_ratios(self) -> list[float]:
        return [r for r in self.ratios if r is not None]

    @property
    def max_ratio(self) -> float:
        r = self.defined_ratios
        return max(r) if r else 0.0

    @property
    def residual(self) -> float:
        return self.diffs[-1] if self.diffs else math.inf

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "converged": self.converged,
            "diffs": self.diffs,
            "diffs_pp": self.diffs_pp,
            "ratios": self.ratios,
            "inner_sweeps": self.inner_sweeps,
            "sup_norms": self.sup_norms,
            "max_ratio": self.max_ratio,
            "residual": self.residual,
        }


class NonContractionError(RuntimeError):
    def __init__(self, message: str, trace: IterationTrace):
        super().__init__(message)
        self.trace = trace


def picard_solve(
    U0: np.ndarray,
    cfg: StepConfig,
    model: NoiseModel,
    c: Cutoff,
    seed: int,
    max_iter: int = 10,
    tol: float = 1e-6,
    inner_max: int = 5,
    path: int = 0,
    increments: Callable[[int], np.ndarray] | None = None,
    floor: float = 1e-14,
) -> tuple[TrajectoryResult, IterationTrace]:
    """Outer cutoff iteration on [0, cfg.t_final].

    U^(0) solves the linear equation with buoyancy and transport only. Level
    n fixes V = U^(n-1) and runs second-iteration sweeps, starting from U^(0),
    until the cutoff profile phi(||W||_p) along the path stops changing (the
    next sweep would then repeat the last one exactly) or ``inner_max``
    sweeps are spent. Stops when sup_t ||U^(n) - U^(n-1)||_p < tol.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = model.grid
    if increments is None:
        increments = default_increments(model, cfg.dt, seed, path)
    base = solve_linear(LinearProblem(U0, buoyancy=cfg.buoyancy), cfg, model, seed, path, increments)
    trace = IterationTrace(horizon=cfg.t_final, floor=floor)
    prev = base
    bad_run = 0
    for _ in range(max_iter):
        W = base
        phi_w = _phi_path(grid, W.states, c, cfg.p)
        sweeps = 0
        for sweeps in range(1, inner_max + 1):
            W = iterate_level2(prev, W, U0, cfg, model, c, seed, path, increments, phi_prev=phi_w)
            phi_new = _phi_path(grid, W.states, c, cfg.p)
            if np.array_equal(phi_new, phi_w):
                break
            phi_w = phi_new
        d = sup_diff(grid, W.states, prev.states, cfg.p)
        trace.diffs.append(d)
        trace.diffs_pp.append(d**cfg.p)
        trace.inner_sweeps.append(sweeps)
        trace.sup_norms.append(max(lp_norm(grid, s, cfg.p) for s in W.states))
        if len(trace.diffs) > 1:
            den = trace.diffs[-2]
            ratio = d / den if den > floor else None
            trace.ratios.append(ratio)
            bad_run = bad_run + 1 if (ratio is not None and ratio >= 1.0) else 0
        prev = W
        if d < tol:
            trace.converged = True
            break
        if bad_run >= 3:
            raise NonContractionError("contraction ratio >= 1 on 3 consecutive levels", trace)
    return prev, trace


def auto_horizon(
    U0: np.ndarray,
    cfg: StepConfig,
    model: NoiseModel,
    c: Cutoff,
    seed: int,
    max_halvings: int = 8,
    target: float = 0.9,
    needed: int = 5,
    **kw,
) -> tuple[float, TrajectoryResult, IterationTrace]:
    """Halve cfg.t_final until the Picard ratios are all below ``target``.

    A horizon is accepted when the run converges without a ratio >= target
    and either ``needed`` consecutive ratios were observed or the iteration
    reached ``tol`` before that many were defined.
    """
    horizon = cfg.t_final
    for _ in range(max_halvings + 1):
        sub = StepConfig(**{**cfg.__dict__, "t_final": horizon})
        try:
            traj, trace = picard_solve(U0, sub, model, c, seed, **kw)
        except NonContractionError:
            traj, trace = None, None
        if trace is not None and trace.converged and trace.max_ratio < target:
            r = trace.defined_ratios
            if len(r) >= needed or trace.converged:
                return horizon, traj, trace
        new = horizon / 2
        n = round(new / cfg.dt)
        if n < 1:
            break
        horizon = n * cfg.dt
    raise RuntimeError("no contracting horizon found")
