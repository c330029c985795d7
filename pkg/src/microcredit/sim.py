"""Repeated-game engine over the settlement state machine.

Each epoch runs the full pipeline: public strategies pick actions from the
public history, payments are authorised against credit (with an over-limit
auction when needed), the surviving transactions are committed to a Merkle
root, and settlement is applied only to transactions that carry a valid proof.

Two payoff models are available:

``stage``
    the exact stage utilities evaluated on the transactions that actually
    cleared, with rewards withheld while the agent is in punishment.
``worst_case``
    used for one-shot deviation scans: a buyer's conforming payoff is the
    per-epoch continuation utility and a default is worth that plus the
    worst-case exposure minus the confiscated stake.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Optional

from . import incentives as inc
from .auction import AuctionError, AuctionRegistry, open_auction, run_sealed_auction
from .commitment import LeafRecord, RootKind, RootLedger, commit_batch
from .core import (
    Action, AgentId, Amount, Conduct, EpochIndex, PublicSignal, Rate, Role, Transaction,
    format_ratio,
)
from .settlement import (
    AccountClosed, AuctionSettlement, AuthStatus, BuyerAccount, BuyerTerms, MerchantAccount,
    MerchantTerms, Punishment, SettlementConfig, SettlementState, TxTerms, authorize_payment,
    consume_over_limit, settle_epoch,
)

STAGE = "stage"
WORST_CASE = "worst_case"


# -- strategies ----------------------------------------------------------------

def _any_default(history) -> bool:
    return any(sig.defaulted for sig in history)


@dataclass(frozen=True)
class AlwaysConform:
    def decide(self, history) -> Optional[Conduct]:
        return Conduct.CONFORM


@dataclass(frozen=True)
class AlwaysLate:
    def decide(self, history) -> Optional[Conduct]:
        return Conduct.LATE


@dataclass(frozen=True)
class DefaultAtEpoch:
    epoch: int

    def decide(self, history) -> Optional[Conduct]:
        return Conduct.DEFAULT if len(history) == self.epoch else Conduct.CONFORM


@dataclass(frozen=True)
class GrimConform:
    """Conform while the public history is clean; stay away after any default."""

    def decide(self, history) -> Optional[Conduct]:
        return None if _any_default(history) else Conduct.CONFORM


@dataclass(frozen=True)
class Deviate:
    """Follow ``base`` except for one epoch, where ``conduct`` is played."""

    base: object
    epoch: int
    conduct: Conduct

    def decide(self, history) -> Optional[Conduct]:
        if len(history) == self.epoch:
            return self.conduct
        return self.base.decide(history)


def parse_strategy(spec):
    if isinstance(spec, str):
        table = {"AlwaysConform": AlwaysConform, "AlwaysLate": AlwaysLate,
                 "GrimConform": GrimConform}
        if spec not in table:
            raise ValueError(f"unknown strategy {spec!r}")
        return table[spec]()
    if isinstance(spec, dict) and len(spec) == 1:
        (name, arg), = spec.items()
        if name == "DefaultAtEpoch":
            return DefaultAtEpoch(int(arg))
        if name == "Deviate":
            return Deviate(parse_strategy(arg.get("base", "GrimConform")), int(arg["epoch"]),
                           Conduct(arg["conduct"]))
    raise ValueError(f"cannot parse strategy {spec!r}")


def strategy_json(s):
    if isinstance(s, DefaultAtEpoch):
        return {"DefaultAtEpoch": s.epoch}
    if isinstance(s, Deviate):
        return {"Deviate": {"base": strategy_json(s.base), "epoch": s.epoch,
                            "conduct": s.conduct.value}}
    return type(s).__name__


# -- scenario ------------------------------------------------------------------

@dataclass(frozen=True)
class BuyerSpec:
    name: str
    merchant: str
    params: inc.BuyerParams
    strategy: object = GrimConform()
    balance: Amount = Amount(0)
    credit_limit: Optional[Amount] = None


@dataclass(frozen=True)
class MerchantSpec:
    name: str
    params: inc.MerchantParams
    strategy: object = GrimConform()
    balance: Amount = Amount(0)
    stake: Optional[Amount] = None


@dataclass(frozen=True)
class GuarantorSpec:
    name: str
    cost: Rate
    stake: Amount
    balance: Amount = Amount(0)
    reveals: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    buyers: tuple
    merchants: tuple
    guarantors: tuple = ()
    horizon: int = 1
    delta: Fraction = Fraction(9, 10)
    settlement: SettlementConfig = SettlementConfig()
    auction_cap: Rate = Rate.bps(600)
    reward_pool: Amount = Amount.units(1_000_000)
    payoff_model: str = STAGE

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0 <= self.delta < 1:
            raise ValueError("discount factor must lie in [0, 1)")
        if self.payoff_model not in (STAGE, WORST_CASE):
            raise ValueError(f"unknown payoff model {self.payoff_model!r}")
        names = [s.name for s in self.buyers + self.merchants + self.guarantors]
        if len(set(names)) != len(names):
            raise ValueError("agent names must be unique")
        merchants = {m.name: m for m in self.merchants}
        for b in self.buyers:
            if b.merchant not in merchants:
                raise ValueError(f"buyer {b.name} names unknown merchant {b.merchant}")
        for m in self.merchants:
            mine = [b for b in self.buyers if b.merchant == m.name]
            pays = [v for b in mine for v in b.params.payments]
            if tuple(pays) != m.params.payments:
                raise ValueError(f"merchant {m.name} payments do not match its buyers' transactions")

    def agent(self, name: str):
        for s in self.buyers + self.merchants + self.guarantors:
            if s.name == name:
                return s
        raise KeyError(name)


def pair_scenario(buyer: inc.BuyerParams, merchant: Optional[inc.MerchantParams] = None,
                  horizon: int = 1, delta: Optional[Fraction] = None, **kw) -> ScenarioConfig:
    """One buyer and one merchant; a neutral merchant is synthesised if none is given."""
    if merchant is None:
        zeros = tuple(Amount(0) for _ in buyer.payments)
        merchant = inc.MerchantParams(payments=buyer.payments, fees=zeros, exec_costs=zeros,
                                      rebates=zeros, deferral_gains=zeros, late_penalties=zeros,
                                      default_penalties=zeros)
    credit = kw.pop("credit_limit", None)
    if credit is None:
        credit = max(buyer.credit_limit, sum(buyer.payments, Amount(0)))
    strategies = kw.pop("strategies", {})
    b = BuyerSpec("buyer", "merchant", buyer, strategies.get("buyer", GrimConform()),
                  credit_limit=credit)
    m = MerchantSpec("merchant", merchant, strategies.get("merchant", GrimConform()))
    return ScenarioConfig((b,), (m,), horizon=horizon,
                          delta=buyer.delta if delta is None else Fraction(delta), **kw)


def _agent_id(spec, role: Role) -> AgentId:
    return AgentId.from_label(spec.name, role)


def _tx_layout(config: ScenarioConfig):
    """Map each merchant transaction index to ``(buyer name, buyer tx index)``."""
    layout = {}
    for m in config.merchants:
        rows = []
        for b in config.buyers:
            if b.merchant == m.name:
                rows.extend((b.name, k) for k in range(b.params.n_tx))
        layout[m.name] = rows
    return layout


def initial_state(config: ScenarioConfig) -> SettlementState:
    buyers, merchants, balances, gstakes = {}, {}, {}, {}
    for b in config.buyers:
        a = _agent_id(b, Role.BUYER)
        cl = b.params.credit_limit if b.credit_limit is None else b.credit_limit
        buyers[a] = BuyerAccount(stake=b.params.stake, credit_limit=cl)
        balances[a] = b.balance
    for m in config.merchants:
        a = _agent_id(m, Role.MERCHANT)
        stake = m.stake
        if stake is None:
            stake = sum(m.params.default_penalties, Amount(0))
        merchants[a] = MerchantAccount(stake=stake)
        balances[a] = m.balance
    for g in config.guarantors:
        a = _agent_id(g, Role.GUARANTOR)
        gstakes[a] = g.stake
        balances[a] = g.balance
    buyer_terms = {
        _agent_id(b, Role.BUYER): BuyerTerms(b.params.tx_rebate, b.params.stake_reward,
                                             b.params.credit_reward, b.params.credit_penalty)
        for b in config.buyers}
    merchant_terms = {_agent_id(m, Role.MERCHANT): MerchantTerms(m.params.stake_reward)
                      for m in config.merchants}
    return SettlementState(EpochIndex(0), buyers, merchants, balances, gstakes,
                           reward_pool=config.reward_pool, config=config.settlement,
                           buyer_terms=buyer_terms, merchant_terms=merchant_terms)


# -- payoffs -------------------------------------------------------------------

def _buyer_payoff(spec: BuyerSpec, conduct, phase, kept, model: str) -> Fraction:
    p = spec.params
    punished = isinstance(phase, Punishment)
    if model == WORST_CASE:
        full = inc.buyer_utilities(p)
        ubar = p.continuation_utility()
        if conduct is Conduct.DEFAULT:
            return ubar + inc.default_gain_bound(p)
        withheld = p.suspended_rewards if punished else 0
        if conduct is Conduct.LATE:
            return ubar - (full.conform - full.late) - (p.stake_reward.as_units if punished else 0)
        return ubar - withheld
    q = p.subset(kept)
    u = inc.buyer_utilities(q)
    if conduct is Conduct.CONFORM:
        return u.conform - (q.suspended_rewards if punished else 0)
    if conduct is Conduct.LATE:
        return u.late - (q.stake_reward.as_units if punished else 0)
    return u.default


def _merchant_payoff(spec: MerchantSpec, conduct, phase, kept) -> Fraction:
    q = spec.params.subset(kept)
    u = inc.merchant_utilities(q)
    punished = isinstance(phase, Punishment)
    withheld = q.suspended_rewards if punished else 0
    if conduct is Conduct.CONFORM:
        return u.conform - withheld
    if conduct is Conduct.LATE:
        return u.late - withheld
    return u.default


# -- trace ---------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    actions: dict            # name -> Action | None
    signal: PublicSignal
    payoffs: dict            # name -> Fraction
    phases: dict             # name -> phase at epoch start
    outcomes: tuple
    holdings_before: dict
    holdings_after: dict
    value_before: Amount
    value_after: Amount
    kept: tuple              # tx ids that reached settlement
    auctions: tuple          # AuctionSettlement
    tx_root: object
    credit_root: object
    proven: tuple            # (Transaction, InclusionProof)
    agent_actions: dict      # AgentId -> Action | None, exactly as settled
    tx_terms: dict           # tx id -> TxTerms
    authorised: dict         # AgentId -> (used credit, misuse flags) going into settlement
    accounts_after: dict     # name -> snapshot dict

    @property
    def conserved(self) -> bool:
        return self.value_before == self.value_after


@dataclass(frozen=True)
class EpochTrace:
    config: ScenarioConfig
    records: tuple
    discounted: dict         # name -> sum_t delta^t u_t
    tail_bound: dict         # name -> delta^H * max|u_t| / (1 - delta)
    final_state: SettlementState

    @property
    def signals(self) -> tuple:
        return tuple(r.signal for r in self.records)

    def payoffs(self, name: str) -> list:
        return [r.payoffs.get(name, Fraction(0)) for r in self.records]

    def to_rows(self) -> list:
        rows = []
        delta = self.config.delta
        for r in self.records:
            for name in sorted(r.accounts_after):
                acct = r.accounts_after[name]
                act = r.actions.get(name)
                u = r.payoffs.get(name, Fraction(0))
                rows.append({
                    "epoch": r.epoch,
                    "agent": name,
                    "role": acct["role"],
                    "action": act.label if act else "",
                    "outcome": (r.signal.outcome_of(name).value
                                if r.signal.outcome_of(name) else ""),
                    "stage_payoff": format_ratio(u),
                    "discounted_payoff": format_ratio(delta**r.epoch * u),
                    "phase": r.phases.get(name, ""),
                    "penalties": ";".join(flag for who, flag in r.signal.penalties if who == name),
                    "trust": acct.get("trust", ""),
                    "credit_limit": acct.get("credit_limit", ""),
                    "stake": acct.get("stake", ""),
                    "alive": acct.get("alive", ""),
                    "holding_delta": (r.holdings_after.get(name, Amount(0))
                                      - r.holdings_before.get(name, Amount(0))).micros,
                })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.to_rows()
        writer = csv.DictWriter(buf, fieldnames=list(CSV_FIELDS), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "horizon": self.config.horizon,
            "delta": format_ratio(self.config.delta),
            "payoff_model": self.config.payoff_model,
            "discounted": {k: format_ratio(v) for k, v in sorted(self.discounted.items())},
            "tail_bound": {k: format_ratio(v) for k, v in sorted(self.tail_bound.items())},
            "epochs": [
                {
                    "epoch": r.epoch,
                    "signal": r.signal.to_json(),
                    "actions": {k: (v.label if v else None) for k, v in sorted(r.actions.items())},
                    "payoffs": {k: format_ratio(v) for k, v in sorted(r.payoffs.items())},
                    "phases": dict(sorted(r.phases.items())),
                    "transactions": len(r.kept),
                    "tx_root": r.tx_root.digest.hex(),
                    "credit_root": r.credit_root.digest.hex(),
                    "value_before": r.value_before.micros,
                    "value_after": r.value_after.micros,
                    "accounts": r.accounts_after,
                }
                for r in self.records
            ],
        }


CSV_FIELDS = ("epoch", "agent", "role", "action", "outcome", "stage_payoff", "discounted_payoff",
              "phase", "penalties", "trust", "credit_limit", "stake", "alive", "holding_delta")


def _snapshot(state: SettlementState) -> dict:
    out = {}
    for a, b in state.buyers.items():
        out[a.name] = {"role": "buyer", "trust": b.trust, "credit_limit": b.credit_limit.micros,
                       "stake": b.stake.micros, "alive": b.alive, "phase": str(b.phase)}
    for a, m in state.merchants.items():
        out[a.name] = {"role": "merchant", "trust": m.trust, "stake": m.stake.micros,
                       "alive": m.alive, "phase": str(m.phase)}
    for a, s in state.guarantor_stakes.items():
        out[a.name] = {"role": "guarantor", "stake": s.micros}
    return out


def _nonce(name: str, epoch: int) -> bytes:
    return hashlib.sha256(f"nonce/{name}/{epoch}".encode()).digest()


def run_scenario(config: ScenarioConfig, strategies: Optional[Mapping[str, object]] = None) -> EpochTrace:
    strategies = dict(strategies or {})
    state = initial_state(config)
    ledger = RootLedger(window_hours=config.settlement.window_hours)
    registry = AuctionRegistry()
    layout = _tx_layout(config)
    ids = {s.name: _agent_id(s, r) for group, r in ((config.buyers, Role.BUYER),
                                                    (config.merchants, Role.MERCHANT),
                                                    (config.guarantors, Role.GUARANTOR))
           for s in group}
    buyer_specs = {b.name: b for b in config.buyers}
    merchant_specs = {m.name: m for m in config.merchants}

    history = []
    records = []
    for t in range(config.horizon):
        epoch = EpochIndex(t)
        # 1. public strategies
        actions = {}
        for specs, role, accounts in ((config.buyers, Role.BUYER, state.buyers),
                                      (config.merchants, Role.MERCHANT, state.merchants)):
            for spec in specs:
                if not accounts[ids[spec.name]].alive:
                    continue
                strat = strategies.get(spec.name, spec.strategy)
                conduct = strat.decide(tuple(history))
                actions[spec.name] = None if conduct is None else Action.of(role, conduct)

        # 2. authorise payments, running an over-limit auction when needed
        kept_by_buyer = {b.name: [] for b in config.buyers}
        txs, auctions = [], []
        tx_terms = {}
        for b in config.buyers:
            if actions.get(b.name) is None or actions.get(b.merchant) is None:
                continue
            bid_, mid = ids[b.name], ids[b.merchant]
            m = merchant_specs[b.merchant]
            rows = layout[b.merchant]
            for k in range(b.params.n_tx):
                j = rows.index((b.name, k))
                tx = Transaction.make(bid_, mid, b.params.payments[k], b.params.values[k], epoch, k)
                acct = state.buyers[bid_]
                auth, acct = authorize_payment(acct, tx.payment, config.settlement.risk_bound)
                state = state.with_buyer(bid_, acct)
                if auth.status is AuthStatus.OVER_LIMIT:
                    cleared = _over_limit(config, state, registry, ids, bid_, mid, auth.deficit, epoch)
                    if cleared is None:
                        continue
                    auctions.append(AuctionSettlement(tx.id, bid_, cleared))
                    if cleared.failed:
                        continue
                    state = state.with_buyer(bid_, consume_over_limit(acct, tx.payment, auth.deficit))
                elif auth.status is AuthStatus.REJECTED:
                    continue
                txs.append(tx)
                kept_by_buyer[b.name].append(k)
                tx_terms[tx.id] = TxTerms(m.params.fees[j], m.params.rebates[j],
                                          m.params.late_penalties[j], m.params.default_penalties[j],
                                          b.params.late_penalties[k])
        state = replace(state, tx_terms=tx_terms)

        # 3. commit roots and build proofs
        leaves = [LeafRecord.from_transaction(tx) for tx in txs]
        tx_root, tree = commit_batch(leaves, RootKind.TX, epoch)
        credit_leaves = [LeafRecord.from_credit(a, acct.credit_limit - acct.used, epoch)
                         for a, acct in sorted(state.buyers.items(), key=lambda kv: kv[0].id)
                         if acct.alive]
        credit_root, _ = commit_batch(credit_leaves, RootKind.CREDIT, epoch)
        for root in (tx_root, credit_root):
            res = ledger.submit(root, epoch.end_hour)
            if not res.accepted:
                raise RuntimeError(f"root submission rejected: {res}")
        proven = tuple((tx, tree.prove(i)) for i, tx in enumerate(txs))

        # 4. settle
        phases = {}
        for a, acct in list(state.buyers.items()) + list(state.merchants.items()):
            if acct.alive:
                phases[a.name] = str(acct.phase)
        phase_objs = {a.name: acct.phase for a, acct in list(state.buyers.items())
                      + list(state.merchants.items())}
        authorised = {a: (acct.used, acct.misuse_flags) for a, acct in state.buyers.items()}
        agent_actions = {ids[n]: act for n, act in actions.items()}
        before, hold_before = state.total_value(), state.holdings()
        state, outcomes, signal = settle_epoch(state, agent_actions, proven, tx_root, auctions)
        registry.close_epoch(epoch)

        # 5. stage payoffs
        payoffs = {}
        merchant_kept = {m.name: [] for m in config.merchants}
        for b in config.buyers:
            rows = layout[b.merchant]
            merchant_kept[b.merchant].extend(rows.index((b.name, k)) for k in kept_by_buyer[b.name])
        for name, act in actions.items():
            if act is None:
                payoffs[name] = Fraction(0)
            elif name in buyer_specs:
                payoffs[name] = _buyer_payoff(buyer_specs[name], act.conduct, phase_objs[name],
                                              kept_by_buyer[name], config.payoff_model)
            else:
                payoffs[name] = _merchant_payoff(merchant_specs[name], act.conduct, phase_objs[name],
                                                 sorted(merchant_kept[name]))
        for name in list(buyer_specs) + list(merchant_specs):
            payoffs.setdefault(name, Fraction(0))

        records.append(EpochRecord(
            t, actions, signal, payoffs, phases, outcomes, hold_before, state.holdings(),
            before, state.total_value(), tuple(tx.id for tx in txs), tuple(auctions),
            tx_root, credit_root, proven, agent_actions, tx_terms, authorised, _snapshot(state)))
        history.append(signal)

    delta = config.delta
    names = list(buyer_specs) + list(merchant_specs)
    discounted = {n: sum((delta**r.epoch * r.payoffs[n] for r in records), Fraction(0)) for n in names}
    H = config.horizon
    tail = {n: delta**H * max(abs(r.payoffs[n]) for r in records) / (1 - delta) for n in names}
    return EpochTrace(config, tuple(records), discounted, tail, state)


def _over_limit(config, state, registry, ids, buyer, merchant, deficit, epoch):
    """Run the epoch's over-limit auction; ``None`` if one may not be opened."""
    try:
        auction = open_auction(buyer, deficit, config.auction_cap, epoch, registry, merchant)
    except AuctionError:
        return None
    bids, nonces, stakes, reveal = {}, {}, {}, set()
    for g in config.guarantors:
        gid = ids[g.name]
        if state.guarantor_stakes.get(gid, Amount(0)) < auction.config.required_lock:
            continue
        bids[gid] = g.cost
        nonces[gid] = _nonce(g.name, epoch.index)
        stakes[gid] = auction.config.required_lock
        if g.reveals:
            reveal.add(gid)
    return run_sealed_auction(auction, bids, nonces, stakes, reveal)


def replay_trace(trace: EpochTrace) -> tuple:
    """Re-apply the recorded settlement inputs and return the regenerated signals."""
    state = initial_state(trace.config)
    signals = []
    for r in trace.records:
        buyers = dict(state.buyers)
        for a, (used, flags) in r.authorised.items():
            if buyers[a].alive:
                buyers[a] = replace(buyers[a], used=used, misuse_flags=flags)
        state = replace(state, buyers=buyers, tx_terms=r.tx_terms)
        state, _, signal = settle_epoch(state, r.agent_actions, r.proven, r.tx_root, r.auctions)
        signals.append(signal)
    return tuple(signals)


# -- one-shot deviation analysis -----------------------------------------------

def _scan_config(config: ScenarioConfig, k: int, model: str) -> ScenarioConfig:
    s = config.settlement
    horizon = max(config.horizon, k + s.punishment_epochs + s.recovery_levels + 3)
    buyers = []
    for b in config.buyers:
        cl = b.params.credit_limit if b.credit_limit is None else b.credit_limit
        need = sum(b.params.payments, Amount(0))
        buyers.append(replace(b, credit_limit=max(cl, need)))
    return replace(config, buyers=tuple(buyers), horizon=horizon, payoff_model=model)


def _value_from(trace: EpochTrace, name: str, k: int) -> Fraction:
    """Discounted value from epoch ``k`` on, closing the horizon with a stationary tail."""
    delta = trace.config.delta
    pay = trace.payoffs(name)
    if len(pay) >= 2 and pay[-1] != pay[-2]:
        raise RuntimeError(f"{name} payoff not stationary at horizon; extend the horizon")
    head = sum((delta ** (t - k) * pay[t] for t in range(k, len(pay))), Fraction(0))
    return head + delta ** (len(pay) - k) * pay[-1] / (1 - delta)


def one_shot_deviation_scan(config: ScenarioConfig, agent: str, k: int = 0,
                            deviations=(Conduct.LATE, Conduct.DEFAULT), model: str = WORST_CASE) -> dict:
    """Gain from deviating once at epoch ``k`` while everyone else stays on path.

    Gains are valued at epoch ``k``; the conforming continuation past the
    horizon is closed analytically as ``u / (1 - delta)``.
    """
    if k < 0:
        raise ValueError("deviation epoch must be non-negative")
    cfg = _scan_config(config, k, model)
    if k >= cfg.horizon:
        raise ValueError("deviation epoch beyond horizon")
    on_path = {s.name: GrimConform() for s in cfg.buyers + cfg.merchants}
    base = run_scenario(cfg, on_path)
    v_conf = _value_from(base, agent, k)
    gains = {}
    for conduct in deviations:
        strategies = dict(on_path)
        strategies[agent] = Deviate(GrimConform(), k, conduct)
        dev = run_scenario(cfg, strategies)
        if dev.payoffs(agent)[:k] != base.payoffs(agent)[:k]:
            raise RuntimeError("paths diverged before the deviation epoch")
        gains[conduct] = _value_from(dev, agent, k) - v_conf
    return gains


@dataclass(frozen=True)
class SweepResult:
    grid: tuple
    best: tuple               # Conduct per grid point
    gains: tuple              # default gain per grid point
    empirical: Optional[Fraction]
    analytic: Optional[Fraction]
    step: Fraction

    def rows(self):
        for d, b, g in zip(self.grid, self.best, self.gains):
            yield d, b, g

    @property
    def bracket(self):
        """``(lo, hi)``: last grid point where default pays and the first where it does not.

        ``lo`` is ``None`` when conforming is best everywhere; ``hi`` is 1 when
        default pays at every grid point, since no discount factor reaches 1.
        """
        lo = max((d for d, b in zip(self.grid, self.best) if b is not Conduct.CONFORM), default=None)
        hi = self.empirical if self.empirical is not None else Fraction(1)
        return lo, hi

    def brackets_analytic(self) -> bool:
        lo, hi = self.bracket
        if self.analytic is None:
            return self.empirical is None
        return (lo is None or lo < self.analytic) and self.analytic <= hi

    def to_json(self) -> dict:
        return {
            "step": format_ratio(self.step),
            "analytic": None if self.analytic is None else format_ratio(self.analytic),
            "empirical": None if self.empirical is None else format_ratio(self.empirical),
            "bracket": [None if x is None else format_ratio(x) for x in self.bracket],
            "grid": [{"delta": format_ratio(d), "best": b.value, "default_gain": format_ratio(g)}
                     for d, b, g in self.rows()],
        }


def _sweep_point(args):
    config, agent, delta = args
    gains = one_shot_deviation_scan(replace(config, delta=delta), agent, 0, (Conduct.DEFAULT,))
    return gains[Conduct.DEFAULT]


def sweep_delta(config: ScenarioConfig, step: Fraction, agent: Optional[str] = None,
                workers: int = 1) -> SweepResult:
    step = Fraction(step)
    if step <= 0:
        raise ValueError("grid step must be positive")
    agent = agent or config.buyers[0].name
    spec = config.agent(agent)
    p = spec.params
    try:
        analytic = inc.delta_threshold(p.exposure, p.stake, p.continuation_utility()).value
    except inc.NoDeterrence:
        analytic = None
    grid = []
    d = Fraction(0)
    while d < 1:
        grid.append(d)
        d += step
    jobs = [(config, agent, d) for d in grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            gains = list(pool.map(_sweep_point, jobs))
    else:
        gains = [_sweep_point(j) for j in jobs]
    best = tuple(Conduct.CONFORM if g <= 0 else Conduct.DEFAULT for g in gains)
    empirical = next((d for d, b in zip(grid, best) if b is Conduct.CONFORM), None)
    return SweepResult(tuple(grid), best, tuple(gains), empirical, analytic, step)


def trace_to_json_text(trace: EpochTrace) -> str:
    return json.dumps(trace.to_json(), indent=2, sort_keys=True)
