"""Drift and diffusion of the stochastic Boussinesq system and its truncation.

State arrays have shape (4, *spectral_shape): three velocity components
followed by the density. Noise-indexed arrays put the mode axis first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral as sp
from .diagnostics import lp_norm
from .noise import NoiseModel, apply_sigma
from .spectral import Grid


class InvalidStateError(ValueError):
    pass


def validate_state(grid: Grid, U_hat: np.ndarray, tol: float = 1e-12) -> None:
    """Raise InvalidStateError unless U is mean-zero with solenoidal velocity."""
    grid.check(U_hat)
    if U_hat.shape[0] != 4:
        raise InvalidStateError(f"state must have 4 components, got {U_hat.shape[0]}")
    if not np.all(np.isfinite(U_hat)):
        raise InvalidStateError("state contains NaN or Inf")
    scale = max(float(np.max(np.abs(U_hat))), 1e-300)
    if np.max(np.abs(U_hat[:, 0, 0, 0])) > tol * scale:
        raise InvalidStateError("state has nonzero mean")
    div = sp.divergence(grid, U_hat[:3])
    kscale = max(float(np.max(np.abs(grid.kvec * U_hat[:3]))), 1e-300)
    if np.max(np.abs(div)) > tol * kscale:
        raise InvalidStateError(f"velocity is not divergence-free (max |n.u_hat| ratio {np.max(np.abs(div)) / kscale:.2e})")


def make_state(grid: Grid, u, rho) -> np.ndarray:
    """Stack physical velocity (3, N, N, N) and density into a spectral state."""
    phys = np.concatenate([np.asarray(u, dtype=float), np.asarray(rho, dtype=float)[None]])
    return sp.to_spectral(grid, phys)


@dataclass(frozen=True)
class Cutoff:
    """Decreasing C^2 cutoff: 1 on [0, delta0/2], 0 on [delta0, inf).

    The transition is a quintic smoothstep, whose steepest slope gives the
    Lipschitz constant 15 / (4 delta0).
    """

    delta0: float

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")

    @property
    def lipschitz_constant(self) -> float:
        return 15.0 / (4.0 * self.delta0)

    def __call__(self, x: float) -> float:
        return eval_phi(self, x)


def eval_phi(c: Cutoff, x: float) -> float:
    if x < 0:
        raise ValueError("cutoff argument must be nonnegative")
    half = 0.5 * c.delta0
    if x <= half:
        return 1.0
    if x >= c.delta0:
        return 0.0
    s = (x - half) / half
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass
class DriftParts:
    laplacian: np.ndarray
    convection: np.ndarray
    buoyancy: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.laplacian + self.convection + self.buoyancy


def buoyancy(grid: Grid, U_hat: np.ndarray) -> np.ndarray:
    """G(U) = (Leray(rho e_3), 0)."""
    out = np.zeros_like(U_hat)
    e3 = np.zeros((3,) + U_hat.shape[1:], dtype=U_hat.dtype)
    e3[2] = U_hat[3]
    out[:3] = sp.leray_project(grid, e3)
    return out


def advective_terms(grid: Grid, U_hat: np.ndarray, carriers: np.ndarray) -> np.ndarray:
    """Bold-P(c . grad U) for a stack of physical carrier fields c.

    ``carriers`` has shape (m, 3, N, N, N); the result is (m, 4, *spectral).
    The gradient of U is transformed once and shared by all carriers, which
    is what keeps a step cheap when both convection and transport noise are
    needed.
    """
    dU = sp.physical_gradient(grid, U_hat)  # (4, 3, N, N, N)
    prod = np.einsum("mixyz,jixyz->mjxyz", carriers, dU, optimize=True)
    return sp.dealias_project_state(grid, sp.to_spectral(grid, prod))


def convection(grid: Grid, U_hat: np.ndarray) -> np.ndarray:
    """B(U) = -Bold-P(u . grad U)."""
    u = sp.to_physical(grid, U_hat[:3])
    return -advective_terms(grid, U_hat, u[None])[0]


def drift(grid: Grid, U_hat: np.ndarray, check: bool = True) -> DriftParts:
    if check:
        validate_state(grid, U_hat)
    return DriftParts(
        laplacian=sp.laplacian(grid, U_hat),
        convection=convection(grid, U_hat),
        buoyancy=buoyancy(grid, U_hat),
    )


def transport_noise(grid: Grid, U_hat: np.ndarray, model: NoiseModel) -> np.ndarray:
    """Bold-P(b_n . grad U) for every noise mode n."""
    if not model.transport.active:
        return np.zeros((model.dim_h,) + U_hat.shape, dtype=complex)
    return advective_terms(grid, U_hat, model.transport.physical)


def cutoff_factor(grid: Grid, U_hat: np.ndarray, c: Cutoff | None, p: float, truncated: bool) -> float:
    """gamma = phi(||U||_p)^2 when truncated, else 1."""
    if not truncated or c is None:
        return 1.0
    return eval_phi(c, lp_norm(grid, U_hat, p)) ** 2


def diffusion(
    grid: Grid,
    U_hat: np.ndarray,
    model: NoiseModel,
    c: Cutoff | None,
    truncated: bool,
    p: float = 6.0,
) -> np.ndarray:
    """Per-mode noise coefficient Bold-P(b_n . grad U) + gamma * sigma_n(U)."""
    gamma = cutoff_factor(grid, U_hat, c, p, truncated)
    out = transport_noise(grid, U_hat, model)
    if model.sigma.kind != "zero":
        out = out + gamma * apply_sigma(model.sigma, grid, U_hat, model.dim_h)
    return out
