"""Compare the analytic discount threshold with the simulated one over a parameter grid.

    python3 scripts/threshold_grid.py --step 1/100 --out thresholds.csv
"""
import argparse
import csv
import itertools
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from microcredit import config as cfgio
from microcredit.core import Amount, format_ratio
from microcredit.sim import pair_scenario, sweep_delta

BASE = Path(__file__).resolve().parents[1] / "configs" / "buyer_example.json"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--base", default=str(BASE), help="buyer parameter file used for the fixed fields")
    ap.add_argument("--step", default="1/20")
    ap.add_argument("--vmax", default="60,100,140")
    ap.add_argument("--stake", default="0,30,60")
    ap.add_argument("--ubar", default="8,24,48")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", help="CSV path (stdout if omitted)")
    args = ap.parse_args(argv)

    base = cfgio.params_from_json(cfgio.load(args.base))
    ints = lambda s: [int(x) for x in s.split(",")]  # noqa: E731
    rows = []
    for vmax, stake, ubar in itertools.product(ints(args.vmax), ints(args.stake), ints(args.ubar)):
        p = replace(base, values=(Amount.units(vmax + 20),), payments=(Amount.units(vmax),),
                    max_exposure=Amount.units(vmax), stake=Amount.units(stake),
                    conforming_utility=Fraction(ubar))
        res = sweep_delta(pair_scenario(p), Fraction(args.step), workers=args.workers)
        lo, hi = res.bracket
        fmt = lambda x: "" if x is None else format_ratio(x)  # noqa: E731
        rows.append({"vmax": vmax, "stake": stake, "ubar": ubar, "analytic": fmt(res.analytic),
                     "empirical": fmt(res.empirical), "lo": fmt(lo), "hi": fmt(hi),
                     "bracketed": res.brackets_analytic()})

    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        fh.close()
    bad = [r for r in rows if not r["bracketed"]]
    print(f"{len(rows)} points, {len(bad)} not bracketed", file=sys.stderr)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
