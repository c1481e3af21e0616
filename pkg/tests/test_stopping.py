import math

import numpy as np
import pytest

from stoch_boussinesq import spectral as sp
from stoch_boussinesq.diagnostics import EnergyRecord, lp_norm
from stoch_boussinesq.integrator import StepConfig, run_trajectory
from stoch_boussinesq.noise import NoiseModel, SigmaSpec, TransportCoefficients
from stoch_boussinesq.stopping import MaximalityError, StoppingRule, maximality_scan


def rec(t, norm, p=6.0):
    return EnergyRecord(t, norm**p, 0.0, norm**p, [norm**p])


def state(grid, seed, norm):
    U = sp.random_state(grid, np.random.default_rng(seed), band=2)
    return U * (norm / lp_norm(grid, U, 6))


@pytest.fixture(scope="module")
def affine_model(grid):
    b = TransportCoefficients.random(grid, 8, seed=3, nb2=0.01)
    return NoiseModel(b, SigmaSpec("affine", eps0=0.01, c_affine=0.2))


class TestEvaluate:
    def test_initial_trigger(self):
        hit = StoppingRule(level_n=1.0).evaluate(rec(0.0, 0.6))
        assert hit is not None and hit[0] == 0.0

    def test_later_trigger_and_none(self):
        rule = StoppingRule(level_n=1.0)
        assert rule.evaluate(rec(0.3, 0.4)) is None
        assert rule.evaluate(rec(0.3, 0.5))[0] == 0.3
        assert StoppingRule(kind="none").evaluate(rec(0.3, 100.0)) is None

    def test_heat_decay_never_triggers(self, grid):
        model = NoiseModel(TransportCoefficients.zero(grid, 1))
        U0 = state(grid, 0, 0.4)
        cfg = StepConfig(dt=1e-3, t_final=0.05, convection=False, buoyancy=False)
        res = run_trajectory(U0, cfg, model, None, False, 0, stop=StoppingRule(level_n=1.0))
        assert res.stopped is None and res.times[-1] == pytest.approx(0.05)

    def test_validation(self):
        with pytest.raises(ValueError):
            StoppingRule(level_n=0.0)
        with pytest.raises(ValueError):
            StoppingRule(kind="energy")


class TestMaximality:
    def test_small_data_untriggered(self, grid):
        b = TransportCoefficients.random(grid, 4, seed=3, nb2=0.01)
        model = NoiseModel(b, SigmaSpec("diagonal-linear", eps0=0.01))
        cfg = StepConfig(dt=2e-3, t_final=0.1)
        rep = maximality_scan(state(grid, 1, 0.01), [0.05, 0.1], cfg, model, 0)
        assert rep.triggered == [False, False] and rep.tau_estimate == pytest.approx(0.1)

    def test_levels_n_2n(self, grid, affine_model):
        cfg = StepConfig(dt=2e-3, t_final=0.2, record_every=10)
        rep = maximality_scan(state(grid, 1, 0.01), [0.05, 0.1], cfg, affine_model, 0)
        assert rep.triggered == [True, False]
        assert rep.tau_n[0] < rep.tau_n[1] == pytest.approx(0.2)
        assert rep.consistency and rep.max_deviation <= 1e-10 and rep.monotone

    def test_duplicate_levels(self, grid, affine_model):
        cfg = StepConfig(dt=2e-3, t_final=0.1)
        rep = maximality_scan(state(grid, 1, 0.01), [0.05, 0.05], cfg, affine_model, 0)
        assert rep.tau_n[0] == rep.tau_n[1] and rep.max_deviation == 0.0

    def test_violation_reported(self, grid, affine_model):
        cfg = StepConfig(dt=2e-3, t_final=0.02)
        with pytest.raises(MaximalityError) as err:
            maximality_scan(state(grid, 1, 0.01), [0.05, 0.1], cfg, affine_model, 0, tol=-1.0)
        assert err.value.report.worst_pair == (0.05, 0.1)
        assert "0.05" in str(err.value)

    def test_rejects_decreasing_levels(self, grid, affine_model):
        with pytest.raises(ValueError):
            maximality_scan(state(grid, 1, 0.01), [0.1, 0.05], StepConfig(dt=2e-3, t_final=0.02), affine_model, 0)

    def test_report_json(self, grid, affine_model):
        import json

        rep = maximality_scan(state(grid, 1, 0.01), [0.05], StepConfig(dt=2e-3, t_final=0.01), affine_model, 0)
        d = json.loads(json.dumps(rep.to_dict()))
        assert d["monotone"] and d["levels"] == [0.05]
