"""Energy functionals used by the L^p estimates.

All spatial integrals are plain lattice sums divided by N^3. The vector
L^p norm follows the component-sum convention
``||U||_p^p = sum_j ||U_j||_p^p``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import spectral as sp
from .spectral import Grid


def pow2_scale(U: np.ndarray) -> float:
    """Power of two near max|U| (1 for a zero field).

    Homogeneous functionals are evaluated on U / scale, which is exact, and
    rescaled afterwards. Without this, |U|^p of a strongly decayed state
    underflows into subnormals, which is wrong and very slow.
    """
    m = float(np.max(np.abs(U))) if U.size else 0.0
    if m == 0.0 or not np.isfinite(m):
        return 1.0
    return math.ldexp(1.0, math.frexp(m)[1])


def _pow(s: float, p: float) -> float:
    with np.errstate(over="ignore", under="ignore"):
        return float(np.float64(s) ** p)


def physical_lp(U: np.ndarray, p: float) -> float:
    """||U||_p for a physical-space stack of components."""
    s = pow2_scale(U)
    return s * float(np.sum(np.mean(np.abs(U / s) ** p, axis=(-3, -2, -1)))) ** (1.0 / p)


def component_lp(grid: Grid, U_hat: np.ndarray, p: float) -> np.ndarray:
    """Per-component ||U_j||_p^p for a stack of components."""
    U = sp.to_physical(grid, U_hat)
    s = pow2_scale(U)
    return np.mean(np.abs(U / s) ** p, axis=(-3, -2, -1)) * _pow(s, p)


def lp_norm(grid: Grid, U_hat: np.ndarray, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    return physical_lp(sp.to_physical(grid, U_hat), p)


def signed_power(u: np.ndarray, e: float) -> np.ndarray:
    return np.sign(u) * np.abs(u) ** e


def dissipation(grid: Grid, U_hat: np.ndarray, p: float) -> tuple[float, float]:
    """Return (sum_j ||grad |U_j|^{p/2}||_2^2, (p^2/4) sum_j int |U_j|^{p-2} |grad U_j|^2).

    The first form differentiates sign(U_j)|U_j|^{p/2} spectrally; its
    gradient has the same modulus as that of |U_j|^{p/2} almost everywhere
    and it is smoother, so aliasing is smaller. The second form is a lattice
    quadrature with spectral gradients.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    U = sp.to_physical(grid, U_hat)
    s = pow2_scale(U)  # both forms are p-homogeneous
    U = U / s
    h_hat = sp.to_spectral(grid, signed_power(U, p / 2.0))
    lhs = float(np.sum(grid.weights * grid.ksq * np.abs(h_hat) ** 2))
    dU = sp.physical_gradient(grid, U_hat / s)
    grad_sq = np.sum(dU**2, axis=-4)
    rhs = (p * p / 4.0) * float(np.sum(np.mean(np.abs(U) ** (p - 2) * grad_sq, axis=(-3, -2, -1))))
    sp_ = _pow(s, p)
    return lhs * sp_, rhs * sp_


def spectral_dissipation_p2(grid: Grid, U_hat: np.ndarray) -> float:
    """sum 4 pi^2 |n|^2 |U_hat(n)|^2, the p = 2 Parseval value."""
    return float(np.sum(grid.weights * grid.ksq * np.abs(U_hat) ** 2))


def _lq(x: np.ndarray, q: float) -> float:
    return float(np.mean(np.abs(x) ** q)) ** (1.0 / q)


def poincare_ratio(grid: Grid, v_hat: np.ndarray, p: float, q: float) -> tuple[float, float]:
    """Ratios ||h||_q / ||grad h||_q for h = |v|^{p-1} and h = |v|^{p-2} v."""
    v = sp.to_physical(grid, v_hat)
    if not np.any(np.abs(v) > 0):
        raise ValueError("poincare_ratio needs a nonzero field")
    out = []
    for h in (np.abs(v) ** (p - 1), signed_power(v, p - 1)):
        dh = sp.physical_gradient(grid, sp.to_spectral(grid, h))
        grad_norm = _lq(np.sqrt(np.sum(dh**2, axis=0)), q)
        out.append(_lq(h, q) / grad_norm)
    return out[0], out[1]


@dataclass
class EnergyRecord:
    t: float
    lp_p: float
    dissipation: float
    weighted: float
    component_lp: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def energy_record(grid: Grid, U_hat: np.ndarray, t: float, p: float, a: float = 0.0) -> EnergyRecord:
    comp = component_lp(grid, U_hat, p)
    lp_p = float(np.sum(comp))
    diss, _ = dissipation(grid, U_hat, p)
    return EnergyRecord(
        t=float(t),
        lp_p=lp_p,
        dissipation=diss,
        weighted=float(np.exp(a * t) * lp_p),
        component_lp=[float(c) for c in comp],
    )


@dataclass
class WeightedEnergy:
    sup_weighted: float
    integral_weighted_dissipation: float


def weighted_energy(records: Sequence[EnergyRecord], a: float) -> WeightedEnergy:
    """sup_t e^{at}||U||_p^p and the trapezoidal integral of e^{at} * dissipation."""
    if not records:
        raise ValueError("empty history")
    if a < 0:
        raise ValueError("a must be nonnegative")
    t = np.array([r.t for r in records])
    if np.any(np.diff(t) <= 0):
        raise ValueError("record times must be increasing")
    w = np.exp(a * t)
    lp = np.array([r.lp_p for r in records])
    diss = np.array([r.dissipation for r in records])
    integral = float(np.trapezoid(w * diss, t)) if len(t) > 1 else 0.0
    return WeightedEnergy(float(np.max(w * lp)), integral)
