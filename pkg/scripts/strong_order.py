#!/usr/bin/env python3
"""Strong self-convergence of the integrator on the linear transport-noise equation.

Every resolution is driven by the same fine Brownian path (coarse increments
are sums of fine ones). Prints RMS self-differences and the observed order.

    python3 scripts/strong_order.py --paths 16 --t-final 0.2
"""

import argparse
import math

import numpy as np

from stoch_boussinesq import spectral as sp
from stoch_boussinesq.integrator import StepConfig, observed_order
from stoch_boussinesq.noise import NoiseModel, TransportCoefficients, WienerSpec, coarse_increments
from stoch_boussinesq.picard import LinearProblem, solve_linear


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--paths", type=int, default=16)
    ap.add_argument("--t-final", type=float, default=0.2)
    ap.add_argument("--fine-dt", type=float, default=1e-3)
    ap.add_argument("--levels", type=int, default=3, help="number of resolutions, dt = fine*2^j")
    ap.add_argument("--nb0", type=float, default=0.1)
    ap.add_argument("--dim-h", type=int, default=4)
    ap.add_argument("--scheme", default="etd_euler_maruyama")
    args = ap.parse_args()

    grid = sp.Grid(args.n)
    model = NoiseModel(TransportCoefficients.random(grid, args.dim_h, seed=5, nb0=args.nb0))
    U0 = sp.random_state(grid, np.random.default_rng(5), band=2)
    prob = LinearProblem(U0, None, None)
    factors = [2**j for j in reversed(range(args.levels))]
    sq = [[] for _ in factors[:-1]]
    for path in range(args.paths):
        spec = WienerSpec(model.dim_h, 500 + path, args.fine_dt)
        finals = []
        for f in factors:
            dt = args.fine_dt * f
            cfg = StepConfig(dt=dt, t_final=args.t_final, scheme=args.scheme, record_every=round(args.t_final / dt))
            inc = lambda k, f=f: coarse_increments(spec, k, f)
            finals.append(solve_linear(prob, cfg, model, 0, increments=inc, keep_states=False).final_state)
        for i in range(len(factors) - 1):
            sq[i].append(sp.l2_norm_sq(grid, finals[i] - finals[i + 1]))
    errors = [math.sqrt(np.mean(s)) for s in sq]
    print(f"{'dt pair':>22}  RMS L2 difference")
    for f, e in zip(factors, errors):
        print(f"{args.fine_dt * f:>10.2e} vs {args.fine_dt * f / 2:<9.2e}  {e:.4e}")
    if len(errors) > 1:
        print(f"observed strong order: {observed_order(errors):.3f}")


if __name__ == "__main__":
    main()
