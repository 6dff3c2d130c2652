"""Run (or load from cache) the replication studies and print their summaries.

    python3 scripts/run_replications.py                 # all studies
    python3 scripts/run_replications.py primary --force

Results, per-replication CSVs and manifests go to ``results/``.
"""

from __future__ import annotations

import argparse
import logging
import time

from recurtmle.sim.studies import STUDIES, run_or_load


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("studies", nargs="*", metavar="STUDY", help=f"any of {', '.join(STUDIES)} (default: all)")
    ap.add_argument("--results", default="results")
    ap.add_argument("--force", action="store_true", help="ignore cached results")
    args = ap.parse_args(argv)
    unknown = [s for s in args.studies if s not in STUDIES]
    if unknown:
        ap.error(f"unknown study {unknown[0]!r}; choose from {', '.join(STUDIES)}")
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("recurtmle.tmle").setLevel(logging.ERROR)
    for name in args.studies or list(STUDIES):
        t0 = time.time()

        def progress(rep, psi, name=name):
            if (rep + 1) % 10 == 0:
                print(f"  {name}: {rep + 1}/{STUDIES[name].reps} replications, {time.time() - t0:.0f} s", flush=True)

        res = run_or_load(name, args.results, force=args.force, progress=progress)
        print(f"{name}: n={res.n} reps={res.reps} psi0={res.truth.value:.6g} (MC se {res.truth.mc_se:.2g})")
        for s in res.summary():
            print(
                f"  {s['estimator']:<18} bias {s['bias']:+.4f}  sd {s['sd']:.4f}  mse {s['mse']:.4f}  "
                f"coverage {s['coverage']:.3f}  solved {s['solved_fraction']:.3f}  failures {s['failures']}"
            )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
