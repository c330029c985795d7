"""Command-line entry point.

Exit codes: 0 when every checked condition holds, 1 when a condition fails,
2 for unreadable input or bad usage.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from . import config as cfgio
from . import incentives as inc
from . import sim
from .auction import AuctionError, AuctionRegistry, Cleared, open_auction, run_sealed_auction
from .commitment import (
    COMMITMENT_MESSAGE_BYTES, InclusionProof, LeafRecord, MerkleRoot, RootKind, commit_batch,
    verify_inclusion,
)
from .core import AgentId, Amount, EpochIndex, Rate, Role, Transaction, format_ratio, parse_ratio

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- commitment cost model -----------------------------------------------------

# Gas figures reported for an L2 deployment.  Carried as context only; nothing
# here measures gas.
REFERENCE_ROOT_GAS = {100: (21_892, 21_892), 200: (21_892, 21_892), 300: (21_880, 21_892),
                      400: (21_892, 21_892), 500: (21_892, 21_892)}
REFERENCE_BATCH_GAS = {100: (5_863_758, 106_274, "98.19"), 200: (11_696_824, 106_274, "99.09"),
                       300: (17_532_352, 106_274, "99.39"), 400: (23_287_671, 106_262, "99.54"),
                       500: (29_735_785, 106_274, "99.64")}
REFERENCE_LABEL = "reported, not measured"


@dataclass(frozen=True)
class CostRow:
    batch: int
    tx_leaf_bytes: int
    credit_leaf_bytes: int
    messages: int
    message_bytes: int
    reference: dict

    @property
    def offchain_bytes(self) -> int:
        return self.tx_leaf_bytes + self.credit_leaf_bytes


@dataclass(frozen=True)
class CostModelReport:
    rows: tuple

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "reference_label": REFERENCE_LABEL,
            "rows": [{"batch": r.batch, "offchain_bytes": r.offchain_bytes,
                      "tx_leaf_bytes": r.tx_leaf_bytes, "credit_leaf_bytes": r.credit_leaf_bytes,
                      "commit_messages": r.messages, "commit_bytes": r.message_bytes,
                      "reference": r.reference} for r in self.rows],
        }

    @classmethod
    def from_json(cls, d) -> "CostModelReport":
        return cls(tuple(CostRow(r["batch"], r["tx_leaf_bytes"], r["credit_leaf_bytes"],
                                 r["commit_messages"], r["commit_bytes"], r["reference"])
                         for r in d["rows"]))


def cost_model(batches, epoch: int = 0) -> CostModelReport:
    """Build real TX and credit trees for each batch size and measure what goes on chain.

    Each batch has one buyer per transaction, so the credit tree grows with it.
    """
    rows = []
    e = EpochIndex(epoch)
    merchant = AgentId.from_label("costmodel/merchant", Role.MERCHANT)
    for n in batches:
        if n < 0:
            raise ValueError("batch size must be non-negative")
        buyers = [AgentId.from_label(f"costmodel/buyer/{i}", Role.BUYER) for i in range(n)]
        txs = [Transaction.make(b, merchant, Amount.units(1), Amount.units(1), e, 0) for b in buyers]
        tx_leaves = [LeafRecord.from_transaction(t) for t in txs]
        credit_leaves = [LeafRecord.from_credit(b, Amount.units(10), e) for b in buyers]
        roots = [commit_batch(tx_leaves, RootKind.TX, e)[0],
                 commit_batch(credit_leaves, RootKind.CREDIT, e)[0]]
        ref = {}
        if n in REFERENCE_ROOT_GAS:
            ref["tx_root_gas"], ref["credit_root_gas"] = REFERENCE_ROOT_GAS[n]
            ref["direct_gas"], ref["batched_gas"], ref["saving_pct"] = REFERENCE_BATCH_GAS[n]
        rows.append(CostRow(n, sum(len(x.data) for x in tx_leaves),
                            sum(len(x.data) for x in credit_leaves), len(roots),
                            sum(len(r.message()) for r in roots), ref))
    return CostModelReport(tuple(rows))


# -- commands ------------------------------------------------------------------

def _emit(obj, args, out):
    out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_check(args, out) -> int:
    obj = cfgio.load_any(args.params)
    if isinstance(obj, sim.ScenarioConfig):
        raise cfgio.ConfigError(args.params, "check expects a parameter file, not a scenario")
    if args.delta is not None:
        from dataclasses import replace
        obj = replace(obj, delta=_ratio_arg(args.delta, "--delta"))
    if isinstance(obj, inc.MerchantParams):
        report = inc.check_merchant_conditions(obj)
    else:
        report = inc.check_buyer_conditions(obj)
    if args.json:
        _emit(report.to_json(), args, out)
    else:
        u = report.utilities
        out.write(f"{report.role} utilities: conform={format_ratio(u.conform)} "
                  f"late={format_ratio(u.late)} default={format_ratio(u.default)}\n")
        for c in report.conditions:
            kind = "strict" if c.strict else "weak"
            out.write(f"  {c.label():45s} margin={format_ratio(c.margin)} ({kind})\n")
        out.write("PASS\n" if report.passed else "FAIL\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_simulate(args, out) -> int:
    if args.horizon is not None and args.horizon < 1:
        raise UsageError("--horizon must be at least 1")
    config = cfgio.load_any(args.scenario, args.horizon)
    if not isinstance(config, sim.ScenarioConfig):
        config = sim.pair_scenario(config, horizon=args.horizon or 1)
    trace = sim.run_scenario(config)
    text = trace.to_csv() if args.out == "csv" else sim.trace_to_json_text(trace) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    conserved = all(r.conserved for r in trace.records)
    if not conserved:
        sys.stderr.write("value conservation violated\n")
    return EXIT_OK if conserved else EXIT_FAIL


def cmd_sweep(args, out) -> int:
    step = _ratio_arg(args.step, "--step")
    if not 0 < step < 1:
        raise UsageError("--step must lie in (0, 1)")
    obj = cfgio.load_any(args.file)
    if isinstance(obj, inc.MerchantParams):
        raise cfgio.ConfigError(args.file, "sweeps need a buyer parameter file or a scenario")
    config = obj if isinstance(obj, sim.ScenarioConfig) else sim.pair_scenario(obj)
    result = sim.sweep_delta(config, step, args.agent, workers=args.workers)
    if args.json:
        _emit(result.to_json(), args, out)
    else:
        out.write(f"{'delta':>8}  {'best':8}  default gain\n")
        for d, best, gain in result.rows():
            out.write(f"{format_ratio(d):>8}  {best.value:8}  {format_ratio(gain)}\n")
        a = "none (no deterrence)" if result.analytic is None else format_ratio(result.analytic)
        e = "none" if result.empirical is None else format_ratio(result.empirical)
        lo, hi = result.bracket
        out.write(f"analytic threshold: {a}\nempirical threshold: {e}\n"
                  f"bracket: ({'-' if lo is None else format_ratio(lo)}, {format_ratio(hi)}]\n")
    return EXIT_OK if result.brackets_analytic() else EXIT_FAIL


def _leaves(args):
    items = list(args.leaf or [])
    if args.leaves_file:
        items += [ln for ln in Path(args.leaves_file).read_text().splitlines() if ln]
    if args.hex:
        try:
            return [LeafRecord(bytes.fromhex(x)) for x in items]
        except ValueError as e:
            raise cfgio.ConfigError("--leaf", f"bad hex ({e})") from None
    return [LeafRecord(x.encode()) for x in items]


def _proof_json(root: MerkleRoot, proof: InclusionProof) -> dict:
    return {"schema": 1, "kind": int(root.kind), "epoch": root.epoch.index, "root": root.digest.hex(),
            "index": proof.index, "leaf_count": proof.leaf_count,
            "siblings": [s.hex() for s in proof.siblings]}


def cmd_merkle(args, out) -> int:
    kind, epoch = RootKind(args.kind), EpochIndex(args.epoch)
    if args.action in ("build", "prove"):
        leaves = _leaves(args)
        root, tree = commit_batch(leaves, kind, epoch)
        if args.action == "build":
            _emit({"schema": 1, "kind": int(kind), "epoch": epoch.index, "root": root.digest.hex(),
                   "leaf_count": len(leaves), "message": root.message().hex()}, args, out)
            return EXIT_OK
        if tree is None or not 0 <= args.index < len(leaves):
            raise UsageError(f"--index {args.index} out of range for {len(leaves)} leaves")
        _emit(_proof_json(root, tree.prove(args.index)), args, out)
        return EXIT_OK
    # verify
    d = cfgio.load(args.proof)
    try:
        root = MerkleRoot(bytes.fromhex(d["root"]), RootKind(d.get("kind", 1)), EpochIndex(d.get("epoch", 0)))
        proof = InclusionProof(int(d["index"]), int(d["leaf_count"]),
                               tuple(bytes.fromhex(s) for s in d["siblings"]), root.digest)
    except (KeyError, ValueError, TypeError) as e:
        raise cfgio.ConfigError(args.proof, f"malformed proof ({e})") from None
    leaves = _leaves(args)
    if len(leaves) != 1:
        raise UsageError("verify takes exactly one --leaf")
    ok = verify_inclusion(root, leaves[0], proof)
    out.write("valid\n" if ok else "invalid\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_auction(args, out) -> int:
    d = cfgio.load(args.script)
    d = cfgio._check_schema(d)
    buyer = AgentId.from_label(str(d.get("buyer", "buyer")), Role.BUYER)
    merchant = AgentId.from_label(str(d.get("merchant", "merchant")), Role.MERCHANT)
    deficit = cfgio._amount(d.get("deficit"), "$.deficit")
    cap = cfgio._rate(d.get("cap_ppm"), "$.cap_ppm")
    lock = cfgio._amount(d.get("required_lock"), "$.required_lock")
    try:
        auction = open_auction(buyer, deficit, cap, EpochIndex(d.get("epoch", 0)), AuctionRegistry(),
                               merchant, lock)
    except AuctionError as e:
        raise cfgio.ConfigError("$", f"{type(e).__name__}: {e}") from None
    bids, nonces, stakes, reveal = {}, {}, {}, set()
    for i, b in enumerate(d.get("bids", [])):
        w = f"$.bids[{i}]"
        g = AgentId.from_label(str(b.get("guarantor", f"g{i}")), Role.GUARANTOR)
        bids[g] = cfgio._rate(b.get("rate_ppm"), f"{w}.rate_ppm")
        nonces[g] = sim._nonce(g.name, i)
        stakes[g] = cfgio._amount(b.get("stake", str(auction.config.required_lock)), f"{w}.stake")
        if b.get("reveal", True):
            reveal.add(g)
    try:
        outcome = run_sealed_auction(auction, bids, nonces, stakes, reveal)
    except AuctionError as e:
        raise cfgio.ConfigError("$.bids", f"{type(e).__name__}: {e}") from None
    stakes_json = [{"guarantor": g.name, "fate": f.value, "amount": str(a)} for g, f, a in outcome.stakes]
    if isinstance(outcome, Cleared):
        report = {"result": "Cleared", "winner": outcome.winner.name, "clearing_ppm": outcome.clearing.ppm,
                  "deficit": str(outcome.deficit), "repayment": str(outcome.repayment), "stakes": stakes_json}
    else:
        report = {"result": "Failed", "reason": outcome.reason, "stakes": stakes_json}
    _emit(report, args, out)
    return EXIT_FAIL if outcome.failed else EXIT_OK


def cmd_costmodel(args, out) -> int:
    report = cost_model(args.batch)
    if args.json:
        _emit(report.to_json(), args, out)
        return EXIT_OK
    out.write(f"{'batch':>6} {'offchain B':>11} {'roots':>5} {'commit B':>8}   "
              f"reference ({REFERENCE_LABEL})\n")
    for r in report.rows:
        ref = r.reference
        note = (f"tx root gas {ref['tx_root_gas']:,}, credit root gas {ref['credit_root_gas']:,}, "
                f"batched saving {ref['saving_pct']}%" if ref else "-")
        out.write(f"{r.batch:>6} {r.offchain_bytes:>11} {r.messages:>5} {r.message_bytes:>8}   {note}\n")
    return EXIT_OK


def _ratio_arg(text, flag):
    try:
        return parse_ratio(text)
    except (ValueError, ArithmeticError, TypeError):
        raise UsageError(f"{flag}: cannot parse {text!r} as a ratio") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="microcredit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    c = sub.add_parser("check", help="evaluate incentive conditions for a parameter file")
    c.add_argument("params")
    c.add_argument("--delta", help="override the discount factor, e.g. 4/5")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="run a scenario and write its trace")
    s.add_argument("scenario")
    s.add_argument("--horizon", type=int, help="epochs to simulate (default: from file)")
    s.add_argument("--out", choices=("csv", "json"), default="csv")
    s.add_argument("--output", help="write to this file instead of stdout")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="discount-factor sweep against the analytic threshold")
    w.add_argument("file", help="buyer parameter file or scenario")
    w.add_argument("--step", default="1/100")
    w.add_argument("--agent", help="buyer to scan (default: first buyer)")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--json", action="store_true")
    w.set_defaults(func=cmd_sweep)

    m = sub.add_parser("merkle", help="build roots, produce and verify inclusion proofs")
    m.add_argument("action", choices=("build", "prove", "verify"))
    m.add_argument("--leaf", action="append", help="leaf payload (repeatable)")
    m.add_argument("--leaves-file", help="one leaf payload per line")
    m.add_argument("--hex", action="store_true", help="payloads are hex")
    m.add_argument("--index", type=int, default=0)
    m.add_argument("--proof", help="proof JSON for verify")
    m.add_argument("--kind", type=int, choices=(1, 2), default=1)
    m.add_argument("--epoch", type=int, default=0)
    m.set_defaults(func=cmd_merkle)

    a = sub.add_parser("auction", help="run a scripted over-limit auction")
    a.add_argument("script")
    a.set_defaults(func=cmd_auction)

    k = sub.add_parser("costmodel", help="on-chain commitment size versus batch size")
    k.add_argument("--batch", type=int, nargs="+", default=[1, 100, 200, 300, 400, 500])
    k.add_argument("--json", action="store_true")
    k.set_defaults(func=cmd_costmodel)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "command", None) == "merkle" and args.action == "verify" and not args.proof:
            raise UsageError("verify needs --proof")
        return args.func(args, out)
    except UsageError as e:
        sys.stderr.write(f"usage error: {e}\n")
        return EXIT_INPUT
    except cfgio.ConfigError as e:
        sys.stderr.write(f"input error: {e}\n")
        return EXIT_INPUT
    except (ValueError, OSError) as e:
        sys.stderr.write(f"input error: {e}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
