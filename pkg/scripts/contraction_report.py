#!/usr/bin/env python3
"""Picard contraction ratios as a function of the horizon.

Reads an experiment config (the contraction example by default) and, for
one path, runs the cutoff iteration at the configured horizon and at
successive halvings.

    python3 scripts/contraction_report.py scripts/configs/contraction.json --halvings 4
"""

import argparse
from pathlib import Path

from stoch_boussinesq.config import load_config
from stoch_boussinesq.dynamics import Cutoff
from stoch_boussinesq.ensemble import build_model, initial_state
from stoch_boussinesq.integrator import StepConfig
from stoch_boussinesq.picard import NonContractionError, picard_solve

DEFAULT = Path(__file__).with_name("configs") / "contraction.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default=str(DEFAULT))
    ap.add_argument("--path", type=int, default=0)
    ap.add_argument("--halvings", type=int, default=3)
    args = ap.parse_args()

    cfg = load_config(args.config)
    model = build_model(cfg)
    seed = cfg.base_seed + args.path
    U0 = initial_state(cfg, model.grid, seed)
    c = Cutoff(cfg.delta0)
    pc = cfg.picard
    print(f"{'horizon':>10} {'levels':>6} {'max ratio':>10} {'residual':>10}  ratios")
    T = cfg.t_final
    for _ in range(args.halvings + 1):
        steps = round(T / cfg.dt)
        if steps < 1:
            break
        scfg = StepConfig(dt=cfg.dt, t_final=steps * cfg.dt, p=cfg.p, a=cfg.a, scheme=cfg.scheme)
        try:
            _, tr = picard_solve(U0, scfg, model, c, seed, max_iter=pc.max_iter, tol=pc.tol, inner_max=pc.inner_max)
        except NonContractionError as err:
            tr = err.trace
        ratios = " ".join(f"{r:.2e}" for r in tr.defined_ratios)
        print(f"{scfg.t_final:>10.4g} {len(tr.diffs):>6} {tr.max_ratio:>10.3e} {tr.residual:>10.2e}  {ratios}")
        T /= 2


if __name__ == "__main__":
    main()
