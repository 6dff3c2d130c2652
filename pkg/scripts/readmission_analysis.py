"""Convert the frailtypack ``readmission`` data and estimate chemotherapy-specific mean counts at 5 years.

Export the data from R first:

    library(frailtypack); data(readmission)
    write.csv(readmission, "readmission_raw.csv", row.names = FALSE)

then

    python3 scripts/readmission_analysis.py readmission_raw.csv --out data/readmission.csv

The converted file is what the acceptance suite looks for (``data/readmission.csv``
or ``$RECURTMLE_READMISSION_CSV``). Rows are counting-process intervals
(t.start, t.stop]; a row closes with a death when ``death`` is 1, with a
readmission when ``event`` is 1, and with censoring otherwise.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

from recurtmle.estimators import EstimatorConfig, estimate_arms
from recurtmle.event_data import build_grid, ingest_csv, on_grid

COVARIATES = ("female", "dukes_c", "dukes_d", "charlson_1_2", "charlson_3")


def convert(raw: Path, out: Path) -> int:
    """Write the package CSV layout; returns the number of subjects."""
    with open(raw, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = set()
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "tstart", "tstop", "event", "a", *COVARIATES])
        for r in rows:
            code = 2 if r["death"].strip() == "1" else 1 if r["event"].strip() == "1" else 0
            dukes, charlson = r["dukes"].strip(), r["charlson"].strip()
            w.writerow([
                r["id"],
                r["t.start"],
                r["t.stop"],
                code,
                int(r["chemo"].strip() == "Treated"),
                int(r["sex"].strip() == "Female"),
                int(dukes == "C"),
                int(dukes == "D"),
                int(charlson == "1-2"),
                int(charlson == "3"),
            ])
            ids.add(r["id"])
    return len(ids)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("raw", type=Path, help="CSV written from R")
    ap.add_argument("--out", type=Path, default=Path("data/readmission.csv"))
    ap.add_argument("--tau", type=float, default=1825.0)
    ap.add_argument("--estimator", action="append", help="repeatable; default unadjusted, working_tmle, hal_tmle")
    args = ap.parse_args(argv)
    print(f"converted {convert(args.raw, args.out)} subjects to {args.out}")
    with open(args.out, "rb") as fh:
        paths = ingest_csv(fh)
    proc = on_grid(paths, build_grid(paths, args.tau))
    print(f"{'estimator':<14} {'psi1':>8} {'se1':>7} {'psi0':>8} {'se0':>7}")
    for name in args.estimator or ["unadjusted", "working_tmle", "hal_tmle"]:
        rep = estimate_arms(proc, name, [1, 0], EstimatorConfig(treatment_model="logistic"))
        print(f"{name:<14} {rep[1].psi_hat:8.3f} {rep[1].se:7.3f} {rep[0].psi_hat:8.3f} {rep[0].se:7.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
