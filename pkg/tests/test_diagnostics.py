import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stoch_boussinesq import spectral as sp
from stoch_boussinesq.diagnostics import (
    EnergyRecord,
    dissipation,
    energy_record,
    lp_norm,
    poincare_ratio,
    spectral_dissipation_p2,
    weighted_energy,
)
from stoch_boussinesq.spectral import Grid

seeds = st.integers(0, 2**32 - 1)
TWO_PI = 2 * math.pi


def sin_state(grid):
    U = np.zeros((4,) + grid.shape)
    U[0] = np.sin(TWO_PI * grid.points[1])
    return sp.to_spectral(grid, U)


class TestLpNorm:
    def test_sine_oracle(self, grid):
        assert lp_norm(grid, sin_state(grid), 2) == pytest.approx(1 / math.sqrt(2), rel=1e-14)

    def test_zero(self, grid):
        assert lp_norm(grid, np.zeros((4,) + grid.spectral_shape, dtype=complex), 6) == 0.0

    # |lam| >= 1e-6 keeps |lam u|^6 clear of the subnormal range
    @given(seed=seeds, lam=st.floats(1e-6, 100), sign=st.sampled_from([-1, 1]))
    def test_homogeneity(self, grid, seed, lam, sign):
        lam = sign * lam
        U = sp.random_state(grid, np.random.default_rng(seed))
        assert lp_norm(grid, lam * U, 6) == pytest.approx(abs(lam) * lp_norm(grid, U, 6), rel=1e-13, abs=1e-300)

    @given(seed=seeds)
    def test_triangle(self, grid, seed):
        r = np.random.default_rng(seed)
        U, V = sp.random_state(grid, r), sp.random_state(grid, r)
        assert lp_norm(grid, U + V, 6) <= lp_norm(grid, U, 6) + lp_norm(grid, V, 6) + 1e-12

    def test_rejects_small_p(self, grid):
        with pytest.raises(ValueError):
            lp_norm(grid, sin_state(grid), 0.5)


class TestDissipation:
    def test_zero(self, grid):
        assert dissipation(grid, np.zeros((4,) + grid.spectral_shape, dtype=complex), 6) == (0.0, 0.0)

    @given(seed=seeds)
    def test_parseval_p2(self, grid, seed):
        U = sp.random_state(grid, np.random.default_rng(seed), band=5)
        lhs, rhs = dissipation(grid, U, 2)
        ref = spectral_dissipation_p2(grid, U)
        assert lhs == pytest.approx(ref, rel=1e-6)
        assert rhs == pytest.approx(ref, rel=1e-6)

    @given(seed=seeds)
    def test_nonnegative(self, grid, seed):
        U = sp.random_state(grid, np.random.default_rng(seed))
        lhs, rhs = dissipation(grid, U, 6)
        assert lhs >= 0 and rhs >= 0

    def test_two_forms_agree_n32(self):
        g = Grid(32)
        r = np.random.default_rng(5)
        worst = 0.0
        for _ in range(5):
            U = sp.random_state(g, r, band=2, decay=2.0)
            lhs, rhs = dissipation(g, U, 6)
            worst = max(worst, abs(lhs - rhs) / rhs)
        assert worst < 0.02


class TestPoincare:
    def test_single_mode(self, grid):
        v = sp.to_spectral(grid, np.sin(TWO_PI * grid.points[0]))
        r1, r2 = poincare_ratio(grid, v, 2, 2)
        assert r2 == pytest.approx(1 / TWO_PI, rel=1e-13)
        assert math.isfinite(r1) and r1 > 0

    @given(seed=seeds, lam=st.floats(0.01, 100))
    def test_scale_invariant(self, grid, seed, lam):
        v = sp.random_field(grid, np.random.default_rng(seed), 1, band=3)[0]
        a = poincare_ratio(grid, v, 6, 2)
        b = poincare_ratio(grid, lam * v, 6, 2)
        assert np.allclose(a, b, rtol=1e-10)

    def test_corpus_finite(self, grid):
        r = np.random.default_rng(11)
        vals = [max(poincare_ratio(grid, sp.random_field(grid, r, 1, band=3)[0], 6, 2)) for _ in range(100)]
        assert np.all(np.isfinite(vals)) and min(vals) > 0

    def test_zero_rejected(self, grid):
        with pytest.raises(ValueError):
            poincare_ratio(grid, np.zeros(grid.spectral_shape, dtype=complex), 6, 2)


def history(ts, lp, diss=None, a=0.0):
    diss = diss if diss is not None else [0.0] * len(ts)
    return [EnergyRecord(t, l, d, math.exp(a * t) * l, [l]) for t, l, d in zip(ts, lp, diss)]


class TestWeightedEnergy:
    def test_a_zero(self):
        h = history([0, 1, 2], [1.0, 3.0, 2.0])
        assert weighted_energy(h, 0.0).sup_weighted == 3.0

    def test_single_record(self):
        assert weighted_energy(history([0.0], [1.0], [5.0]), 0.3).integral_weighted_dissipation == 0.0

    def test_decaying_history(self):
        ts = np.linspace(0, 3, 31)
        h = history(ts, np.exp(-2 * ts))
        assert weighted_energy(h, 1.0).sup_weighted == 1.0

    def test_trapezoid(self):
        ts = np.linspace(0, 1, 11)
        out = weighted_energy(history(ts, np.zeros(11), np.ones(11)), 0.0)
        assert out.integral_weighted_dissipation == pytest.approx(1.0, rel=1e-14)

    @given(a1=st.floats(0, 2), da=st.floats(0, 2), seed=seeds)
    def test_monotone_in_a(self, a1, da, seed):
        r = np.random.default_rng(seed)
        ts = np.cumsum(r.uniform(0.01, 0.5, 20)) - 0.01
        h = history(ts, r.uniform(0, 1, 20))
        assert weighted_energy(h, a1).sup_weighted <= weighted_energy(h, a1 + da).sup_weighted

    def test_errors(self):
        with pytest.raises(ValueError):
            weighted_energy([], 0.0)
        with pytest.raises(ValueError):
            weighted_energy(history([1.0, 0.5], [1, 1]), 0.0)
        with pytest.raises(ValueError):
            weighted_energy(history([0.0], [1]), -1.0)


class TestRecord:
    @given(seed=seeds, t=st.floats(0, 10), a=st.floats(0, 1))
    def test_fields(self, grid, seed, t, a):
        U = sp.random_state(grid, np.random.default_rng(seed))
        rec = energy_record(grid, U, t, 6, a)
        assert rec.weighted == pytest.approx(math.exp(a * t) * rec.lp_p, rel=1e-12)
        assert sum(rec.component_lp) == pytest.approx(rec.lp_p, rel=1e-14)
        assert all(math.isfinite(x) and x >= 0 for x in [rec.lp_p, rec.dissipation, *rec.component_lp])
        assert set(rec.to_json()) == {"t", "lp_p", "dissipation", "weighted", "component_lp"}


def test_norms_survive_extreme_scales(grid):
    U = sp.random_state(grid, np.random.default_rng(9), band=2)
    ref = lp_norm(grid, U, 6)
    for lam in (1e-120, 1e120):
        assert lp_norm(grid, lam * U, 6) == pytest.approx(lam * ref, rel=1e-12)
    # power-of-two scaling is exact, so the dissipation scales exactly
    lhs, rhs = dissipation(grid, 2.0**-50 * U, 6)
    lhs0, rhs0 = dissipation(grid, U, 6)
    assert lhs == lhs0 * 2.0**-300 and rhs == rhs0 * 2.0**-300
