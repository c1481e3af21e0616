"""Ito time stepping for the full and truncated systems.

The Laplacian is integrated exactly (exponential integrator) or implicitly;
drift nonlinearities are explicit and the noise is Euler-Maruyama, with all
coefficients evaluated at the start of the step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import spectral as sp
from .diagnostics import EnergyRecord, energy_record, physical_lp
from .dynamics import Cutoff, advective_terms, buoyancy, eval_phi
from .noise import NoiseModel, WienerSpec, sample_increments, sigma_dot
from .spectral import Grid

SCHEMES = ("etd_euler_maruyama", "semi_implicit_euler_maruyama")


class IntegrationError(RuntimeError):
    """Non-finite state; carries the failing step index and any partial trace."""

    def __init__(self, message: str, step_index: int, partial: "TrajectoryResult | None" = None):
        super().__init__(f"{message} at step {step_index}")
        self.step_index = step_index
        self.partial = partial


@dataclass(frozen=True)
class StepConfig:
    dt: float
    t_final: float
    scheme: str = "etd_euler_maruyama"
    record_every: int = 1
    p: float = 6.0
    a: float = 0.0
    convection: bool = True
    buoyancy: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive (the minimal run is one step)")
        if self.dt > self.t_final * (1 + 1e-12):
            raise ValueError("dt must not exceed t_final")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")
        n = self.t_final / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("t_final must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class TrajectoryResult:
    times: list[float]
    energies: list[EnergyRecord]
    final_state: np.ndarray
    seed: int
    path: int = 0
    stopped: Optional[tuple[float, str]] = None
    states: list[np.ndarray] = field(default_factory=list)
    n_steps: int = 0

    def write_ndjson(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.energies:
                fh.write(json.dumps(rec.to_json()) + "\n")

    def sup_lp(self, p: float) -> float:
        return max(r.lp_p for r in self.energies) ** (1.0 / p)


class LinearFactors:
    """Per-mode multipliers for one step of size dt."""

    def __init__(self, grid: Grid, dt: float, scheme: str):
        lam = grid.ksq
        if scheme == "etd_euler_maruyama":
            self.decay = np.exp(-lam * dt)
            with np.errstate(divide="ignore", invalid="ignore"):
                phi1 = np.where(lam > 0, -np.expm1(-lam * dt) / np.where(lam > 0, lam, 1.0), dt)
            self.forcing = phi1
            self.noise = self.decay
        elif scheme == "semi_implicit_euler_maruyama":
            self.decay = 1.0 / (1.0 + lam * dt)
            self.forcing = dt * self.decay
            self.noise = self.decay
        else:
            raise ValueError(f"unknown scheme {scheme!r}")


def advance(
    grid: Grid,
    U_hat: np.ndarray,
    factors: LinearFactors,
    forcing: np.ndarray | None,
    noise_dw: np.ndarray | None,
    step_index: int = 0,
) -> np.ndarray:
    """U+ = decay*U + forcing_factor*F + noise_factor*(sum_m D_m dW_m), then re-project.

    ``noise_dw`` is the already contracted stochastic increment sum_m D_m dW_m.
    """
    out = factors.decay * U_hat
    if forcing is not None:
        out = out + factors.forcing * forcing
    if noise_dw is not None:
        out = out + factors.noise * noise_dw
    out = sp.project_state(grid, out)
    out[..., 0, 0, 0] = 0.0
    out[..., grid.nyquist] = 0.0
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state", step_index)
    return out


def coefficients(
    grid: Grid,
    U_hat: np.ndarray,
    cfg: StepConfig,
    model: NoiseModel,
    c: Cutoff | None,
    truncated: bool,
    dW: np.ndarray,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Explicit drift (without the Laplacian) and the contracted noise at U.

    Returns (gamma*B(U) + G(U), sum_m [Bold-P(b_m.grad U) + gamma*sigma_m(U)] dW_m)
    with gamma = phi(||U||_p)^2 for the truncated system and 1 otherwise.
    Transport noise is linear in b, so the sum over modes is formed with the
    single carrier sum_m dW_m b_m. The same arithmetic runs with and without
    truncation, so gamma == 1 reproduces the untruncated step bit for bit.
    """
    U = sp.to_physical(grid, U_hat)
    gamma = 1.0
    if truncated and c is not None:
        gamma = eval_phi(c, physical_lp(U, cfg.p)) ** 2

    carriers = []
    if cfg.convection:
        carriers.append(U[:3])
    transport_on = model.transport.active
    if transport_on:
        carriers.append(np.tensordot(dW, model.transport.physical, axes=(0, 0)))
    terms = advective_terms(grid, U_hat, np.array(carriers)) if carriers else None

    drift = np.zeros_like(U_hat)
    if cfg.convection:
        drift = drift + gamma * (-terms[0])
    if cfg.buoyancy:
        drift = drift + buoyancy(grid, U_hat)

    noise = None
    if transport_on:
        noise = terms[-1]
    if model.sigma.kind != "zero":
        sig = gamma * sigma_dw(model, grid, U_hat, dW)
        noise = sig if noise is None else noise + sig
    return drift, noise


def sigma_dw(model: NoiseModel, grid: Grid, U_hat: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """sum_m sigma_m(U) dW_m."""
    return sigma_dot(model.sigma, grid, U_hat, dW)


def step(
    grid: Grid,
    U_hat: np.ndarray,
    cfg: StepConfig,
    model: NoiseModel,
    c: Cutoff | None,
    truncated: bool,
    dW: np.ndarray,
    step_index: int = 0,
    factors: LinearFactors | None = None,
) -> np.ndarray:
    dW = np.asarray(dW, dtype=float)
    if not np.all(np.isfinite(dW)):
        raise ValueError("Brownian increments must be finite")
    if not np.all(np.isfinite(U_hat)):
        raise IntegrationError("non-finite state", step_index)
    if factors is None:
        factors = LinearFactors(grid, cfg.dt, cfg.scheme)
    drift, noise = coefficients(grid, U_hat, cfg, model, c, truncated, dW)
    return advance(grid, U_hat, factors, drift, noise, step_index)


def default_increments(model: NoiseModel, dt: float, seed: int, path: int = 0) -> Callable[[int], np.ndarray]:
    spec = WienerSpec(model.dim_h, seed, dt)
    return lambda k: sample_increments(spec, k, path)


def run_trajectory(
    U0: np.ndarray,
    cfg: StepConfig,
    model: NoiseModel,
    c: Cutoff | None,
    truncated: bool,
    seed: int,
    stop=None,
    path: int = 0,
    increments: Callable[[int], np.ndarray] | None = None,
    keep_states: bool = False,
) -> TrajectoryResult:
    """Advance U0 to cfg.t_final (or until ``stop`` triggers on a record).

    ``stop`` is any object with ``evaluate(record) -> (time, reason) | None``.
    """
    grid = model.grid
    if increments is None:
        increments = default_increments(model, cfg.dt, seed, path)
    factors = LinearFactors(grid, cfg.dt, cfg.scheme)
    result = TrajectoryResult([], [], U0, seed=seed, path=path)

    def record(U, k):
        t = k * cfg.dt
        rec = energy_record(grid, U, t, cfg.p, cfg.a)
        result.times.append(t)
        result.energies.append(rec)
        if keep_states:
            result.states.append(U)
        if stop is not None:
            hit = stop.evaluate(rec)
            if hit is not None:
                result.stopped = hit
                return True
        return False

    U = U0
    n = cfg.n_steps
    if record(U, 0):
        return result
    for k in range(n):
        try:
            U = step(grid, U, cfg, model, c, truncated, increments(k), k, factors)
        except IntegrationError as err:
            err.partial = result
            raise
        result.final_state = U
        result.n_steps = k + 1
        if (k + 1) % cfg.record_every == 0 or k + 1 == n:
            if record(U, k + 1):
                break
    result.final_state = U
    return result


def observed_order(errors, ratio: float = 2.0) -> float:
    """log_ratio(e_i / e_{i+1}) averaged over consecutive pairs."""
    e = np.asarray(errors, dtype=float)
    return float(np.mean(np.log(e[:-1] / e[1:]) / math.log(ratio)))
