"""Run every bundled scenario, write CSV and JSON traces, and summarise payoffs."""
import argparse
import sys
from pathlib import Path

from microcredit import config as cfgio
from microcredit.core import format_ratio
from microcredit.sim import replay_trace, run_scenario, trace_to_json_text

SCENARIOS = Path(__file__).resolve().parents[1] / "configs" / "scenarios"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenarios", nargs="*", help="scenario files (default: all bundled ones)")
    ap.add_argument("--outdir", default="traces")
    ap.add_argument("--horizon", type=int)
    args = ap.parse_args(argv)

    files = [Path(f) for f in args.scenarios] or sorted(SCENARIOS.glob("*.json"))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for f in files:
        cfg = cfgio.scenario_from_json(cfgio.load(f), args.horizon)
        trace = run_scenario(cfg)
        (outdir / f"{f.stem}.csv").write_text(trace.to_csv())
        (outdir / f"{f.stem}.json").write_text(trace_to_json_text(trace) + "\n")
        conserved = all(r.conserved for r in trace.records)
        replayed = replay_trace(trace) == trace.signals
        failures += (not conserved) + (not replayed)
        pays = "  ".join(f"{k}={format_ratio(v)}" for k, v in sorted(trace.discounted.items()))
        print(f"{f.stem:18} H={cfg.horizon:<3} conserved={conserved} replay={replayed}  {pays}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
