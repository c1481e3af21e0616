#!/usr/bin/env python3
"""Map the empirical smallness frontier of the global-decay regime.

Runs ``bsq sweep`` on a reduced global-decay config over a list of values of
one parameter (sigma.eps0 by default) and prints the resulting table.

    BSQ_WORKERS=4 python3 scripts/smallness_sweep.py --values 0.005,0.01,0.02,0.04
"""

import argparse
import csv
import json
import tempfile
from pathlib import Path

from stoch_boussinesq import cli

BASE = Path(__file__).with_name("configs") / "global_decay.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--param", default="sigma.eps0")
    ap.add_argument("--values", default="0.005,0.01,0.02,0.04")
    ap.add_argument("--paths", type=int, default=16)
    ap.add_argument("--t-final", type=float, default=1.0)
    ap.add_argument("--output-dir", default="runs/sweep")
    args = ap.parse_args()

    cfg = json.loads(BASE.read_text())
    cfg.update(n_paths=args.paths, t_final=args.t_final, output_dir=args.output_dir, checkpoints=False)
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(cfg, fh)
    cli.main(["sweep", fh.name, "--param", args.param, "--values", args.values])
    table = Path(args.output_dir) / f"sweep_{args.param.replace('.', '_')}.csv"
    with open(table) as t:
        rows = list(csv.DictReader(t))
    print(f"\n{args.param:>12} {'exit':>4} {'mean sup':>12} {'crossing':>9} {'survival':>9} {'Markov':>7}")
    for r in rows:
        print(
            f"{r['value']:>12} {r['exit_code']:>4} {r.get('mean_sup_weighted') or '-':>12.12} "
            f"{r.get('crossing_fraction') or '-':>9.6} {r.get('survival_fraction') or '-':>9.6} {r.get('markov_bound') or '-':>7.5}"
        )


if __name__ == "__main__":
    main()
