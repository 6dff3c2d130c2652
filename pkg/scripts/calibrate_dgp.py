"""Summarise the simulation settings: event frequencies, true targets and weight spread.

    python3 scripts/calibrate_dgp.py [--n 20000] [--mc-size 1000000]

Used to choose the Weibull shapes and scales; prints one block per setting.
"""

from __future__ import annotations

import argparse

import numpy as np

from recurtmle.estimators import fit_nuisances
from recurtmle.event_data import build_grid, on_grid
from recurtmle.sim.dgp import independent_censoring_spec, primary_spec, simulate, simulate_arrays, true_psi
from recurtmle.sim.harness import simulation_config
from recurtmle.tmle import Intervention, positivity_report

SETTINGS = {"primary": primary_spec, "independent": independent_censoring_spec}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=20_000, help="subjects for the frequency summary")
    ap.add_argument("--mc-size", type=int, default=1_000_000, help="draws for each true target")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    for name, make in SETTINGS.items():
        spec = make()
        arr = simulate_arrays(spec, args.n, np.random.default_rng(args.seed))
        last = np.full(args.n, -1)
        ends = np.flatnonzero(np.r_[arr.subject[1:] != arr.subject[:-1], True]) if arr.subject.size else np.empty(0, int)
        last[arr.subject[ends]] = arr.kind[ends]
        print(f"{name}: tau={spec.tau}")
        print(f"  recurrent events per subject {arr.counts(spec.tau).mean():.3f}, subjects with a recurrent event {np.mean(arr.counts(spec.tau) > 0):.3f}")
        print(f"  died {np.mean(last == 2):.3f}  censored {np.mean(last == 0):.3f}  reached tau {np.mean((last == -1) | (last == 1)):.3f}")
        for a in (1, 0):
            t = true_psi(spec, a, args.mc_size, seed=args.seed)
            print(f"  psi0(a={a}) = {t.value:.5f} (MC se {t.mc_se:.2g})")
        paths = simulate(spec, 500, seed=args.seed)
        proc = on_grid(paths, build_grid(paths, spec.tau))
        nuis = fit_nuisances(proc, "tmle_oracle_form", Intervention.static(1), simulation_config())
        rep = positivity_report(nuis, proc, simulation_config().weight_cap)
        print(f"  n=500 clever weights: max {rep.max_weight:.1f}, quantiles {', '.join(f'{q}: {v:.1f}' for q, v in rep.quantiles.items())}, truncated {rep.truncated}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
