"""Print on-chain versus off-chain bytes per batch next to the reported gas figures.

The gas columns are copied reference numbers, not measurements.
"""
import argparse
import sys

from microcredit.cli import REFERENCE_LABEL, cost_model


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 100, 200, 300, 400, 500])
    args = ap.parse_args(argv)
    report = cost_model(args.batch)
    print(f"{'batch':>6} {'offchain B':>11} {'msgs':>5} {'onchain B':>10} {'direct gas':>11} "
          f"{'batched gas':>12} {'saving %':>9}")
    for r in report.rows:
        ref = r.reference
        print(f"{r.batch:>6} {r.offchain_bytes:>11} {r.messages:>5} {r.message_bytes:>10} "
              f"{ref.get('direct_gas', ''):>11} {ref.get('batched_gas', ''):>12} {ref.get('saving_pct', ''):>9}")
    print(f"gas columns: {REFERENCE_LABEL}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
