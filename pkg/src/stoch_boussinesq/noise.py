"""Noise data: Wiener increments, transport coefficients b_n and sigma.

Also computes the quantities used to check the standing noise assumptions:
the super-parabolic margin, the W^{k,inf} sizes N_{b,k}, and the local
smallness threshold on N_{b,0}.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from . import spectral as sp
from .spectral import Grid

SIGMA_KINDS = ("zero", "diagonal-linear", "affine")


# ---------------------------------------------------------------------------
# Wiener increments


@dataclass(frozen=True)
class WienerSpec:
    dim_h: int
    rng_seed: int
    dt: float

    def __post_init__(self):
        if self.dim_h < 1:
            raise ValueError("dim_h must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def sample_increments(spec: WienerSpec, step_index: int, path: int = 0) -> np.ndarray:
    """Brownian increments over step ``step_index`` for path ``path``.

    Counter-based: the stream is keyed by (seed, path, step), so any step can
    be regenerated without replaying the ones before it.
    """
    if not spec.dt > 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng([spec.rng_seed & (2**63 - 1), path, step_index])
    return rng.standard_normal(spec.dim_h) * np.sqrt(spec.dt)


def coarse_increments(spec: WienerSpec, step_index: int, factor: int, path: int = 0) -> np.ndarray:
    """Increment over ``factor`` consecutive fine steps of ``spec``.

    Lets runs at dt and dt/2 share one Brownian path.
    """
    start = step_index * factor
    return sum(sample_increments(spec, start + i, path) for i in range(factor))


# ---------------------------------------------------------------------------
# transport coefficients


def wk_inf_norm_sq(grid: Grid, v_hat: np.ndarray, k: int) -> float:
    """Squared W^{k,inf} lattice norm of a vector field.

    Sum over multi-indices |alpha| <= k of (max_x |d^alpha v(x)|)^2, with |.|
    the Euclidean norm over vector components and derivatives taken
    spectrally.
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    total = 0.0
    for order in range(k + 1):
        for alpha in itertools.combinations_with_replacement(range(3), order):
            symbol = np.ones(grid.spectral_shape, dtype=complex)
            for axis in alpha:
                symbol = symbol * (1j * grid.kvec[axis])
            d = sp.to_physical(grid, symbol * v_hat)
            total += float(np.max(np.sqrt(np.sum(d**2, axis=0)))) ** 2
    return total


@dataclass
class TransportCoefficients:
    """Time-independent transport fields b_n, one per noise mode."""

    grid: Grid
    modes: np.ndarray  # (dim_h, 3, *spectral_shape)
    N_b: tuple[float, float, float] = field(init=False)

    def __post_init__(self):
        self.modes = np.asarray(self.modes)
        if self.modes.ndim != 5 or self.modes.shape[1] != 3:
            raise ValueError("modes must have shape (dim_h, 3, *spectral_shape)")
        self.grid.check(self.modes)
        self.N_b = tuple(compute_Nbk(self, k) for k in range(3))
        self._physical = None
        self._active = bool(np.any(self.modes != 0))

    @property
    def dim_h(self) -> int:
        return self.modes.shape[0]

    @property
    def nu(self) -> float:
        return check_super_parabolic(self)

    @property
    def physical(self) -> np.ndarray:
        if self._physical is None:
            self._physical = sp.to_physical(self.grid, self.modes)
        return self._physical

    @property
    def active(self) -> bool:
        return self._active

    def divergence_residuals(self) -> np.ndarray:
        return np.array([
            float(np.max(np.abs(sp.to_physical(self.grid, sp.divergence(self.grid, m)))))
            for m in self.modes
        ])

    def scaled(self, s: float) -> "TransportCoefficients":
        return TransportCoefficients(self.grid, s * self.modes)

    @classmethod
    def zero(cls, grid: Grid, dim_h: int) -> "TransportCoefficients":
        return cls(grid, np.zeros((dim_h, 3) + grid.spectral_shape, dtype=complex))

    @classmethod
    def constant(cls, grid: Grid, vectors) -> "TransportCoefficients":
        """Spatially constant modes b_n(x) = vectors[n]."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        modes = np.zeros((len(vectors), 3) + grid.spectral_shape, dtype=complex)
        modes[:, :, 0, 0, 0] = vectors
        return cls(grid, modes)

    @classmethod
    def from_terms(cls, grid: Grid, terms_per_mode) -> "TransportCoefficients":
        """Build b_n from lists of terms ``{"amp": [a1,a2,a3], "k": [k1,k2,k3], "phase": c}``.

        Each term contributes amp * sin(2 pi k.x + phase); k = 0 gives the
        constant amp * sin(phase) (use phase = pi/2 for a plain constant).
        Solenoidality is not enforced here; validation reports it.
        """
        x1, x2, x3 = grid.points
        modes = []
        for terms in terms_per_mode:
            b = np.zeros((3,) + grid.shape)
            for term in terms:
                amp = np.asarray(term["amp"], dtype=float)
                k = np.asarray(term.get("k", (0, 0, 0)), dtype=float)
                phase = float(term.get("phase", 0.0))
                arg = sp.TWO_PI * (k[0] * x1 + k[1] * x2 + k[2] * x3) + phase
                b += amp[:, None, None, None] * np.sin(arg)[None]
            modes.append(sp.to_spectral(grid, b))
        return cls(grid, np.array(modes))

    @classmethod
    def random(cls, grid: Grid, dim_h: int, seed: int, band: int = 2, nb2: float | None = None,
               nb0: float | None = None) -> "TransportCoefficients":
        """Random smooth solenoidal mean-zero modes, optionally rescaled.

        Give ``nb2`` to fix N_{b,2}, or ``nb0`` to fix N_{b,0} (not both).
        """
        rng = np.random.default_rng([seed & (2**63 - 1), 0xB0])
        modes = np.array([sp.random_solenoidal(grid, rng, band=band, decay=2.0) for _ in range(dim_h)])
        tc = cls(grid, modes)
        if nb2 is not None and nb0 is not None:
            raise ValueError("fix at most one of nb2, nb0")
        target, idx = (nb2, 2) if nb2 is not None else (nb0, 0)
        if target is not None and tc.N_b[idx] > 0:
            tc = tc.scaled(np.sqrt(target / tc.N_b[idx]))
        return tc


def check_super_parabolic(b: TransportCoefficients) -> float:
    """Minimum over the lattice of the smallest eigenvalue of I - 1/2 sum b_n b_n^T.

    A negative value means the super-parabolic condition fails.
    """
    bp = b.physical.reshape(b.dim_h, 3, -1)
    mat = np.eye(3)[None] - 0.5 * np.einsum("nip,njp->pij", bp, bp)
    return float(np.min(np.linalg.eigvalsh(mat)))


def compute_Nbk(b: TransportCoefficients, k: int) -> float:
    return float(sum(wk_inf_norm_sq(b.grid, m, k) for m in b.modes))


def local_threshold(p: float, c_bdg: float = 2.0) -> float:
    """Upper bound on N_{b,0} for local existence: (p-1)/(2(p-1) + p C_BDG^2)."""
    if not p > 2:
        raise ValueError(f"local threshold needs p > 2, got {p}")
    if c_bdg < 0:
        raise ValueError("C_BDG must be nonnegative")
    return (p - 1.0) / (2.0 * (p - 1.0) + p * c_bdg**2)


# ---------------------------------------------------------------------------
# multiplicative noise


@dataclass(frozen=True)
class SigmaSpec:
    """Multiplicative noise sigma(U), one 4-component field per noise mode.

    ``diagonal-linear``: sigma_n(U) = eps0 * kappa_p * w_n * U, with
    sum_n w_n^2 = 1 and kappa_p = 4^(1/p - 1). The factor kappa_p makes
    sum_j ||sigma_j(U)||_{L^p(l^2)} <= eps0 ||U||_p hold under the
    component-sum L^p convention. ``affine`` adds c_affine * w_n * Psi for
    a fixed smooth solenoidal state Psi.
    """

    kind: str = "zero"
    eps0: float = 0.0
    c_affine: float = 0.0
    p: float = 6.0

    def __post_init__(self):
        if self.kind not in SIGMA_KINDS:
            raise ValueError(f"unknown sigma kind {self.kind!r}; expected one of {SIGMA_KINDS}")
        if self.eps0 < 0 or self.c_affine < 0:
            raise ValueError("eps0 and c_affine must be nonnegative")

    @property
    def gain(self) -> float:
        if self.kind == "zero":
            return 0.0
        return self.eps0 * 4.0 ** (1.0 / self.p - 1.0)

    @property
    def lipschitz_constant(self) -> float:
        """Constant C in sum_j ||sigma_j(U) - sigma_j(V)|| <= C ||U - V||_p."""
        return self.eps0 if self.kind != "zero" else 0.0

    def growth_constant(self, grid: Grid) -> float:
        """Constant C in sum_j ||sigma_j(U)|| <= C (||U||_p + 1)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "diagonal-linear":
            return self.eps0
        from .diagnostics import component_lp

        psi_sum = sum(component_lp(grid, offset_field(grid), self.p) ** (1.0 / self.p))
        return max(self.eps0, self.c_affine * float(psi_sum))


def mode_weights(dim_h: int) -> np.ndarray:
    """Fixed decreasing weights with unit l^2 norm."""
    w = 1.0 / np.arange(1, dim_h + 1)
    return w / np.linalg.norm(w)


def offset_field(grid: Grid) -> np.ndarray:
    """Fixed state Psi = ((sin 2 pi x2, 0, 0), sin 2 pi x1) used by affine sigma."""
    x1, x2, _ = grid.points
    psi = np.zeros((4,) + grid.shape)
    psi[0] = np.sin(sp.TWO_PI * x2)
    psi[3] = np.sin(sp.TWO_PI * x1)
    return sp.to_spectral(grid, psi)


def _sigma_base(spec: SigmaSpec, grid: Grid, U_hat: np.ndarray) -> np.ndarray:
    base = spec.gain * U_hat
    if spec.kind == "affine" and spec.c_affine:
        base = base + spec.c_affine * offset_field(grid)
    base = sp.project_state(grid, base)
    base[..., 0, 0, 0] = 0.0
    return base


def apply_sigma(spec: SigmaSpec, grid: Grid, U_hat: np.ndarray, dim_h: int) -> np.ndarray:
    """sigma(U) as an array (dim_h, 4, *spectral_shape).

    Velocity slots are Leray projected and every output is mean-zero.
    """
    if spec.kind == "zero":
        return np.zeros((dim_h,) + U_hat.shape, dtype=complex)
    w = mode_weights(dim_h)[:, None, None, None, None]
    # projection is linear, so project once and then weight per mode
    return w * _sigma_base(spec, grid, U_hat)[None]


def sigma_dot(spec: SigmaSpec, grid: Grid, U_hat: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """sum_n sigma_n(U) dW_n without materialising every mode."""
    if spec.kind == "zero":
        return np.zeros_like(U_hat)
    return float(np.dot(mode_weights(len(dW)), dW)) * _sigma_base(spec, grid, U_hat)


def sigma_norm(grid: Grid, S_hat: np.ndarray, p: float) -> float:
    """sum_j ||(sum_n |S_nj|^2)^(1/2)||_p for S of shape (dim_h, 4, ...)."""
    S = sp.to_physical(grid, S_hat)
    mag = np.sqrt(np.sum(S**2, axis=0))
    return float(np.sum(np.mean(mag**p, axis=(-3, -2, -1)) ** (1.0 / p)))


# ---------------------------------------------------------------------------
# aggregate model and assumption report


@dataclass
class NoiseModel:
    transport: TransportCoefficients
    sigma: SigmaSpec = field(default_factory=SigmaSpec)
    c_bdg: float = 2.0

    @property
    def grid(self) -> Grid:
        return self.transport.grid

    @property
    def dim_h(self) -> int:
        return self.transport.dim_h


@dataclass
class AssumptionReport:
    N_b: tuple[float, float, float]
    nu: float
    threshold_local: float
    pass_local: bool
    pass_global: bool
    C_BDG: float
    p: float
    solenoidal: bool = True
    divergence_max: float = 0.0
    bad_modes: list[int] = field(default_factory=list)
    sigma_kind: str = "zero"
    eps0: float = 0.0
    messages: list[str] = field(default_factory=list)

    @property
    def pass_general(self) -> bool:
        return self.solenoidal and self.nu > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["N_b"] = list(self.N_b)
        d["pass_general"] = self.pass_general
        return d


def assumption_report(
    model: NoiseModel,
    p: float,
    nb2_max: float = 0.01,
    eps0_max: float = 0.01,
    div_tol: float = 1e-12,
) -> AssumptionReport:
    """Evaluate the noise assumptions for exponent p.

    Global smallness is judged against the configured ceilings ``nb2_max``
    on N_{b,2} and ``eps0_max`` on eps0 (strict sigma growth, no offset).
    """
    b = model.transport
    res = b.divergence_residuals()
    scale = max(1.0, float(np.max(np.abs(b.physical)))) if b.active else 1.0
    bad = [int(i) for i in np.flatnonzero(res > div_tol * scale)]
    nu = check_super_parabolic(b)
    thr = local_threshold(p, model.c_bdg)
    pass_local = b.N_b[0] < thr
    sig = model.sigma
    # ceilings allow rounding slack: rescaling to exactly nb2_max can land one ulp above it
    slack = 1.0 + 1e-12
    sigma_small = sig.kind == "zero" or (sig.eps0 <= eps0_max * slack and sig.c_affine == 0.0)
    pass_global = pass_local and b.N_b[2] <= nb2_max * slack and sigma_small
    msgs = []
    for i in bad:
        msgs.append(f"transport mode {i} is not divergence-free (max |div b_{i}| = {res[i]:.3e})")
    if nu <= 0:
        msgs.append(f"super-parabolic condition fails: nu = {nu:.6g} <= 0")
    if not pass_local:
        msgs.append(f"N_b0 = {b.N_b[0]:.6g} is not below the local threshold {thr:.6g} (p={p}, C_BDG={model.c_bdg})")
    if not pass_global:
        msgs.append(
            f"global smallness not met: N_b2 = {b.N_b[2]:.3g} (max {nb2_max}), "
            f"sigma kind {sig.kind} eps0 = {sig.eps0} (max {eps0_max}), c_affine = {sig.c_affine}"
        )
    return AssumptionReport(
        N_b=b.N_b,
        nu=nu,
        threshold_local=thr,
        pass_local=pass_local,
        pass_global=pass_global,
        C_BDG=model.c_bdg,
        p=p,
        solenoidal=not bad,
        divergence_max=float(res.max()) if len(res) else 0.0,
        bad_modes=bad,
        sigma_kind=sig.kind,
        eps0=sig.eps0,
        messages=msgs,
    )
