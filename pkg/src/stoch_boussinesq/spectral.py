"""Fourier representation of mean-zero fields on the unit torus [0,1)^3.

Fields are stored as real-FFT coefficient arrays with the last three axes
``(N, N, N//2 + 1)``; any leading axes index components (and noise modes).
Coefficients are normalised so that ``f_hat[0, 0, 0]`` is the mean of ``f``,
i.e. ``f_hat(n) = int f(x) exp(-2 pi i n.x) dx``.

Multipliers use the Nyquist-free wavenumbers: the ``N/2`` plane of every axis
carries a zero symbol, and the 2/3-rule mask removes it from every product.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
_AXES = (-3, -2, -1)
_WORKERS = int(os.environ.get("BSQ_FFT_WORKERS", "1"))


class GridMismatchError(ValueError):
    """Operand shape does not match the grid."""


class MeanNonZeroError(ValueError):
    """Operation requires a mean-zero field."""


@dataclass(frozen=True)
class Grid:
    """Uniform N^3 lattice on [0,1)^3 with a dealiasing fraction."""

    n: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 4, got {self.n}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer wavenumbers (k1, k2, k3), broadcastable to spectral_shape."""
        full = np.fft.fftfreq(self.n, d=1.0 / self.n)
        half = np.fft.rfftfreq(self.n, d=1.0 / self.n)
        return (full[:, None, None], full[None, :, None], half[None, None, :])

    @cached_property
    def nyquist(self) -> np.ndarray:
        k1, k2, k3 = self.wavenumbers
        h = self.n // 2
        return (np.abs(k1) == h) | (np.abs(k2) == h) | (np.abs(k3) == h)

    @cached_property
    def kvec(self) -> np.ndarray:
        """Derivative symbols 2 pi n (shape (3, *spectral_shape)), zero on Nyquist planes."""
        h = self.n // 2
        out = np.zeros((3,) + self.spectral_shape)
        for i, k in enumerate(self.wavenumbers):
            kk = np.where(np.abs(k) == h, 0.0, k)
            out[i] = np.broadcast_to(TWO_PI * kk, self.spectral_shape)
        return out

    @cached_property
    def ksq(self) -> np.ndarray:
        """|2 pi n|^2 on the Nyquist-free symbols."""
        return np.sum(self.kvec**2, axis=0)

    @cached_property
    def inv_ksq(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = np.where(self.ksq > 0, 1.0 / np.where(self.ksq > 0, self.ksq, 1.0), 0.0)
        return out

    @cached_property
    def mask(self) -> np.ndarray:
        """Boolean 2/3-rule mask: keep |k_i| < fraction * N/2 on every axis."""
        cut = self.dealias_fraction * self.n / 2.0
        k1, k2, k3 = self.wavenumbers
        keep = (np.abs(k1) < cut) & (np.abs(k2) < cut) & (np.abs(k3) < cut)
        return keep & ~self.nyquist

    @cached_property
    def mask_index(self) -> np.ndarray:
        """Flat indices of the retained (dealiased) modes."""
        return np.flatnonzero(self.mask.ravel())

    @cached_property
    def kvec_masked(self) -> np.ndarray:
        return self.kvec.reshape(3, -1)[:, self.mask_index]

    @cached_property
    def inv_ksq_masked(self) -> np.ndarray:
        return self.inv_ksq.ravel()[self.mask_index]

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum entry in the full spectrum."""
        w = np.full(self.spectral_shape, 2.0)
        w[..., 0] = 1.0
        if self.n % 2 == 0:
            w[..., -1] = 1.0
        return w

    @cached_property
    def points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.arange(self.n) / self.n
        return np.meshgrid(x, x, x, indexing="ij")

    def check(self, arr: np.ndarray, kind: str = "spectral") -> None:
        want = self.spectral_shape if kind == "spectral" else self.shape
        if tuple(arr.shape[-3:]) != want:
            raise GridMismatchError(
                f"expected trailing {kind} shape {want}, got {tuple(arr.shape[-3:])}"
            )


# ---------------------------------------------------------------------------
# transforms


def to_spectral(grid: Grid, f: np.ndarray) -> np.ndarray:
    grid.check(f, "physical")
    return sfft.rfftn(f, axes=_AXES, workers=_WORKERS) / grid.n**3


def to_physical(grid: Grid, f_hat: np.ndarray) -> np.ndarray:
    grid.check(f_hat)
    return sfft.irfftn(f_hat * grid.n**3, s=grid.shape, axes=_AXES, workers=_WORKERS)


def full_spectrum(grid: Grid, f_hat: np.ndarray) -> np.ndarray:
    """Complex coefficients over the whole wavenumber cube in FFT index order.

    Missing k3 columns are filled by Hermitian symmetry f(-n) = conj f(n), so
    the stored half spectrum is copied verbatim.
    """
    grid.check(f_hat)
    n, h = grid.n, grid.n // 2
    full = np.empty(f_hat.shape[:-1] + (n,), dtype=complex)
    full[..., : h + 1] = f_hat
    neg = (-np.arange(n)) % n
    mirror = f_hat[..., neg, :, :][..., :, neg, :]
    full[..., h + 1 :] = np.conj(mirror[..., n - np.arange(h + 1, n)])
    return full


def dealias(grid: Grid, f_hat: np.ndarray) -> np.ndarray:
    return np.where(grid.mask, f_hat, 0.0)


def mean(f_hat: np.ndarray) -> np.ndarray:
    return f_hat[..., 0, 0, 0].real


def inner(grid: Grid, f_hat: np.ndarray, g_hat: np.ndarray) -> float:
    """L^2 inner product of two real fields (summed over any leading axes)."""
    return float(np.sum(grid.weights * (f_hat * np.conj(g_hat)).real))


def l2_norm_sq(grid: Grid, f_hat: np.ndarray) -> float:
    return inner(grid, f_hat, f_hat)


# ---------------------------------------------------------------------------
# linear operators


def gradient(grid: Grid, f_hat: np.ndarray) -> np.ndarray:
    """Scalar field (..., *spec) -> vector field (..., 3, *spec)."""
    grid.check(f_hat)
    return 1j * grid.kvec * f_hat[..., None, :, :, :]


def divergence(grid: Grid, v_hat: np.ndarray) -> np.ndarray:
    grid.check(v_hat)
    if v_hat.shape[-4] != 3:
        raise GridMismatchError("divergence expects a 3-component field")
    return np.sum(1j * grid.kvec * v_hat, axis=-4)


def laplacian(grid: Grid, f_hat: np.ndarray) -> np.ndarray:
    grid.check(f_hat)
    return -grid.ksq * f_hat


def inv_laplacian(grid: Grid, f_hat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Periodic zero-mean inverse Laplacian, multiplier -1/|2 pi n|^2."""
    grid.check(f_hat)
    scale = max(float(np.max(np.abs(f_hat))), 1.0)
    if np.any(np.abs(f_hat[..., 0, 0, 0]) > tol * scale):
        raise MeanNonZeroError("inv_laplacian requires a mean-zero field")
    return -grid.inv_ksq * f_hat


def leray_project(grid: Grid, v_hat: np.ndarray) -> np.ndarray:
    """Apply I - n n^T/|n|^2 modewise to a 3-component field.

    The zero mode is dropped, matching the zero-mean convention of the
    inverse Laplacian.
    """
    grid.check(v_hat)
    if v_hat.shape[-4] != 3:
        raise GridMismatchError("leray_project expects a 3-component field")
    k = grid.kvec
    k_dot_v = np.sum(k * v_hat, axis=-4, keepdims=True)
    out = v_hat - k * (k_dot_v * grid.inv_ksq)
    out[..., 0, 0, 0] = 0.0
    return out


def project_state(grid: Grid, U_hat: np.ndarray) -> np.ndarray:
    """Bold P = (Leray, id) on 4-component fields (leading axes allowed)."""
    out = np.empty_like(U_hat)
    out[..., :3, :, :, :] = leray_project(grid, U_hat[..., :3, :, :, :])
    out[..., 3, :, :, :] = U_hat[..., 3, :, :, :]
    return out


def dealias_project_state(grid: Grid, F_hat: np.ndarray) -> np.ndarray:
    """dealias followed by project_state, computed on the retained modes only.

    Also zeroes the mean. Equivalent to ``project_state(grid, dealias(grid, F))``
    with the zero mode cleared, but cheaper for stacks of states.
    """
    lead = F_hat.shape[:-3]
    flat = F_hat.reshape(lead + (-1,))
    c = flat[..., grid.mask_index]
    k = grid.kvec_masked
    v = c[..., :3, :]
    kv = np.einsum("im,...im->...m", k, v)
    c[..., :3, :] = v - k * (kv * grid.inv_ksq_masked)[..., None, :]
    out = np.zeros(lead + (flat.shape[-1],), dtype=complex)
    out[..., grid.mask_index] = c
    out = out.reshape(F_hat.shape)
    out[..., 0, 0, 0] = 0.0
    return out


def mollify(grid: Grid, f_hat: np.ndarray, eps: float) -> np.ndarray:
    """Convolve with a Gaussian mollifier of width eps.

    The multiplier is exp(-eps^2 |n|^2 / 2), equal to one at n = 0, so the
    mean is preserved.
    """
    if eps < 0:
        raise ValueError("eps must be positive")
    return mollifier_symbol(grid, eps) * f_hat


def mollifier_symbol(grid: Grid, eps: float) -> np.ndarray:
    k1, k2, k3 = grid.wavenumbers
    nsq = k1**2 + k2**2 + k3**2
    return np.exp(-0.5 * eps**2 * nsq)


# ---------------------------------------------------------------------------
# nonlinear products


def physical_gradient(grid: Grid, f_hat: np.ndarray) -> np.ndarray:
    return to_physical(grid, gradient(grid, f_hat))


def advect(grid: Grid, b_hat: np.ndarray, f_hat: np.ndarray) -> np.ndarray:
    """b . grad f with the product formed on the lattice and 2/3-dealiased.

    ``f_hat`` may carry leading component axes; ``b_hat`` is a single
    3-component field. Dealiasing is exact when both inputs lie inside the
    retained band.
    """
    grid.check(b_hat)
    grid.check(f_hat)
    b = to_physical(grid, b_hat)
    df = physical_gradient(grid, f_hat)
    prod = np.einsum("ixyz,...ixyz->...xyz", b, df)
    return dealias(grid, to_spectral(grid, prod))


def q_operator(grid: Grid, b_hat: np.ndarray, u_hat: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Gradient part of b . grad u for solenoidal u.

    Uses grad Delta^{-1} sum_{k,l} d_k b^l d_l u_k, which avoids forming
    b . grad u itself.
    """
    grid.check(u_hat)
    div = divergence(grid, u_hat)
    scale = max(float(np.max(np.abs(grid.kvec * u_hat))), 1e-300)
    if np.max(np.abs(div)) > tol * scale:
        raise ValueError("q_operator requires a divergence-free velocity")
    db = physical_gradient(grid, b_hat)  # (l, k) -> d_k b^l
    du = physical_gradient(grid, u_hat)  # (k, l) -> d_l u_k
    s = np.einsum("lkxyz,klxyz->xyz", db, du)
    s_hat = dealias(grid, to_spectral(grid, s))
    s_hat[..., 0, 0, 0] = 0.0
    return gradient(grid, inv_laplacian(grid, s_hat))


def q_operator_state(grid: Grid, b_hat: np.ndarray, U_hat: np.ndarray) -> np.ndarray:
    """Bold Q on 4-component states; the density slot is identically zero."""
    out = np.zeros_like(U_hat)
    out[:3] = q_operator(grid, b_hat, U_hat[:3])
    return out


# ---------------------------------------------------------------------------
# random fields


def random_field(
    grid: Grid,
    rng: np.random.Generator,
    components: int = 1,
    band: int | None = None,
    decay: float = 0.0,
) -> np.ndarray:
    """Random real mean-zero field supported on |k_i| <= band.

    Built in physical space so Hermitian symmetry is automatic. ``decay``
    damps coefficients like (1 + |n|^2)^(-decay/2).
    """
    f = rng.standard_normal((components,) + grid.shape)
    f_hat = to_spectral(grid, f)
    if band is None:
        keep = grid.mask
    else:
        k1, k2, k3 = grid.wavenumbers
        keep = (np.abs(k1) <= band) & (np.abs(k2) <= band) & (np.abs(k3) <= band) & grid.mask
    f_hat = np.where(keep, f_hat, 0.0)
    if decay:
        k1, k2, k3 = grid.wavenumbers
        f_hat = f_hat * (1.0 + k1**2 + k2**2 + k3**2) ** (-decay / 2.0)
    f_hat[..., 0, 0, 0] = 0.0
    return f_hat


def random_solenoidal(grid: Grid, rng: np.random.Generator, band: int | None = None, decay: float = 0.0) -> np.ndarray:
    return leray_project(grid, random_field(grid, rng, 3, band, decay))


def random_state(grid: Grid, rng: np.random.Generator, band: int | None = None, decay: float = 0.0) -> np.ndarray:
    U = random_field(grid, rng, 4, band, decay)
    return project_state(grid, U)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"BSQ1"
_HEADER = struct.Struct("<4sIIdQ")


def write_checkpoint(path: str | Path, grid: Grid, fields: np.ndarray, time: float, seed: int) -> None:
    """Write fields (components, *spectral_shape) as a binary checkpoint.

    Layout: magic, N (u32), component count (u32), time (f64), seed (u64),
    then little-endian float64 (re, im) pairs of the full spectrum in
    row-major (component, k1, k2, k3) order, FFT index ordering per axis.
    """
    fields = np.asarray(fields)
    if fields.ndim == 3:
        fields = fields[None]
    grid.check(fields)
    full = full_spectrum(grid, fields)
    payload = np.empty(full.shape + (2,), dtype="<f8")
    payload[..., 0] = full.real
    payload[..., 1] = full.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, grid.n, fields.shape[0], float(time), int(seed) & (2**64 - 1)))
        fh.write(payload.tobytes(order="C"))


def read_checkpoint(path: str | Path, dealias_fraction: float = 2.0 / 3.0):
    """Inverse of write_checkpoint; returns (grid, fields, time, seed)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, n, ncomp, time, seed = _HEADER.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a BSQ1 checkpoint: {path}")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    full = raw.reshape(ncomp, n, n, n, 2)
    full = full[..., 0] + 1j * full[..., 1]
    grid = Grid(n, dealias_fraction)
    fields = full[..., : n // 2 + 1]
    return grid, np.ascontiguousarray(fields), time, seed
