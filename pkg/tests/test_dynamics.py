import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stoch_boussinesq import spectral as sp
from stoch_boussinesq.diagnostics import lp_norm
from stoch_boussinesq.dynamics import (
    Cutoff,
    InvalidStateError,
    buoyancy,
    convection,
    diffusion,
    drift,
    eval_phi,
    make_state,
    transport_noise,
    validate_state,
)
from stoch_boussinesq.noise import NoiseModel, SigmaSpec, TransportCoefficients

seeds = st.integers(0, 2**32 - 1)


def small_state(grid, seed, norm, band=5):
    U = sp.random_state(grid, np.random.default_rng(seed), band=band)
    return U * (norm / lp_norm(grid, U, 6))


class TestCutoff:
    def test_endpoints(self):
        c = Cutoff(0.1)
        assert eval_phi(c, 0.0) == 1.0 and eval_phi(c, 0.05) == 1.0
        assert eval_phi(c, 0.1) == 0.0 and eval_phi(c, 5.0) == 0.0

    def test_interior(self):
        c = Cutoff(0.1)
        v = eval_phi(c, 0.075)
        assert 0 < v < 1 and v > eval_phi(c, 0.0875)

    def test_lipschitz_constant(self):
        c = Cutoff(0.2)
        x = np.linspace(0, 0.3, 200001)
        phi = np.array([c(xi) for xi in x])
        slope = np.max(np.abs(np.diff(phi) / np.diff(x)))
        assert slope <= c.lipschitz_constant * (1 + 1e-9)
        assert slope == pytest.approx(c.lipschitz_constant, rel=1e-6)
        assert np.all(np.diff(phi) <= 0)

    def test_c2_at_joins(self):
        c = Cutoff(1.0)
        h = 1e-4
        for x0 in (0.5, 1.0):
            d2 = (c(x0 + h) - 2 * c(x0) + c(x0 - h)) / h**2
            assert abs(d2) < 1e-2

    def test_rejects(self):
        with pytest.raises(ValueError):
            Cutoff(0.0)
        with pytest.raises(ValueError):
            eval_phi(Cutoff(1.0), -0.1)


class TestDrift:
    def test_zero_state(self, grid):
        parts = drift(grid, np.zeros((4,) + grid.spectral_shape, dtype=complex))
        assert not np.any(parts.total)

    def test_density_only(self, grid):
        x1, x2, x3 = grid.points
        rho = np.sin(2 * np.pi * x1) * np.cos(2 * np.pi * x3)
        U = make_state(grid, np.zeros((3,) + grid.shape), rho)
        parts = drift(grid, U)
        assert not np.any(parts.convection)
        e3 = np.zeros((3,) + grid.spectral_shape, dtype=complex)
        e3[2] = U[3]
        assert np.array_equal(parts.buoyancy[:3], sp.leray_project(grid, e3))
        assert not np.any(parts.buoyancy[3])

    @given(seed=seeds)
    def test_energy_orthogonality(self, grid, seed):
        U = sp.random_state(grid, np.random.default_rng(seed), band=5)
        B = convection(grid, U)
        scale = np.sqrt(sp.l2_norm_sq(grid, B) * sp.l2_norm_sq(grid, U))
        assert abs(sp.inner(grid, B, U)) <= 1e-10 * max(scale, 1e-300)

    @given(seed=seeds)
    def test_outputs_mean_zero_solenoidal(self, grid, seed):
        U = sp.random_state(grid, np.random.default_rng(seed))
        for part in (drift(grid, U).convection, buoyancy(grid, U)):
            assert np.all(part[:, 0, 0, 0] == 0)
            assert np.max(np.abs(sp.divergence(grid, part[:3]))) <= 1e-12 * max(np.max(np.abs(grid.kvec * part[:3])), 1e-300)

    @pytest.mark.parametrize("lam", [2.0, 0.5, -4.0])
    def test_quadratic_exact(self, grid, rng, lam):
        U = sp.random_state(grid, rng)
        assert np.array_equal(convection(grid, lam * U), lam**2 * convection(grid, U))

    @given(seed=seeds, lam=st.floats(-3, 3))
    def test_quadratic_general(self, grid, seed, lam):
        U = sp.random_state(grid, np.random.default_rng(seed))
        B = convection(grid, U)
        assert np.allclose(convection(grid, lam * U), lam**2 * B, rtol=0, atol=1e-12 * max(np.max(np.abs(B)), 1e-300))

    def test_rejects_invalid(self, grid, rng):
        U = sp.random_field(grid, rng, 4)
        with pytest.raises(InvalidStateError):
            drift(grid, U)
        V = sp.random_state(grid, rng)
        V[:, 0, 0, 0] = 1.0
        with pytest.raises(InvalidStateError):
            validate_state(grid, V)
        with pytest.raises(InvalidStateError):
            validate_state(grid, V[:3])


class TestDiffusion:
    def test_zero_noise(self, grid, rng):
        model = NoiseModel(TransportCoefficients.zero(grid, 3))
        assert not np.any(diffusion(grid, sp.random_state(grid, rng), model, Cutoff(1.0), True))

    def test_cutoff_kills_sigma(self, grid, rng):
        b = TransportCoefficients.random(grid, 3, seed=1, nb2=0.01)
        model = NoiseModel(b, SigmaSpec("affine", eps0=0.01, c_affine=1.0))
        U = small_state(grid, 3, 1.0)
        out = diffusion(grid, U, model, Cutoff(0.5), truncated=True)
        assert np.array_equal(out, transport_noise(grid, U, model))

    def test_density_slot_is_advection(self, grid, rng):
        b = TransportCoefficients.random(grid, 3, seed=1, nb2=0.01)
        U = sp.random_state(grid, rng, band=5)
        out = transport_noise(grid, U, NoiseModel(b))
        for n in range(3):
            ref = sp.advect(grid, b.modes[n], U[3])
            ref[0, 0, 0] = 0.0
            assert np.allclose(out[n, 3], ref, rtol=0, atol=1e-16 * max(1.0, np.max(np.abs(ref))))

    @given(seed=seeds)
    def test_truncation_transparent_below_half(self, grid, seed):
        b = TransportCoefficients.random(grid, 3, seed=1, nb2=0.01)
        model = NoiseModel(b, SigmaSpec("diagonal-linear", eps0=0.01))
        U = small_state(grid, seed, 0.04)
        c = Cutoff(0.1)
        assert np.array_equal(diffusion(grid, U, model, c, True, 6), diffusion(grid, U, model, c, False, 6))

    def test_outputs_valid(self, grid, rng):
        b = TransportCoefficients.random(grid, 3, seed=1, nb2=0.01)
        model = NoiseModel(b, SigmaSpec("affine", eps0=0.01, c_affine=0.5))
        out = diffusion(grid, sp.random_state(grid, rng), model, Cutoff(1.0), True)
        assert np.all(out[..., 0, 0, 0] == 0)
        div = sp.divergence(grid, out[:, :3])
        assert np.max(np.abs(div)) <= 1e-12 * np.max(np.abs(grid.kvec * out[:, :3]))
