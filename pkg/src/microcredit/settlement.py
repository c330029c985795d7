"""Epoch settlement: credit authorisation, rewards/penalties, punishment FSM.

Accounts and states are immutable; every operation returns new values.  Money
only ever moves between holdings (agent balances, stakes, the penalty pool and
the reward pool), so the system total is invariant across a settlement.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .auction import Cleared, StakeFate
from .commitment import InclusionProof, LeafRecord, MerkleRoot, verify_inclusion
from .core import (
    Action, AgentId, Amount, Conduct, EpochIndex, Outcome, PublicSignal, Role, Transaction,
)


class SettlementError(Exception):
    pass


class AccountClosed(SettlementError):
    pass


class UnprovenTransaction(SettlementError):
    pass


# -- punishment / recovery -----------------------------------------------------

@dataclass(frozen=True)
class Normal:
    def __str__(self):
        return "Normal"


@dataclass(frozen=True)
class Punishment:
    remaining: int

    def __post_init__(self):
        if self.remaining <= 0:
            raise ValueError("punishment needs at least one remaining epoch")

    def __str__(self):
        return f"Punishment({self.remaining})"


@dataclass(frozen=True)
class Recovery:
    level: int

    def __str__(self):
        return f"Recovery({self.level})"


def _punish(T_pun: int):
    return Punishment(T_pun) if T_pun > 0 else Recovery(0)


def step_phase(phase, conformed: bool, T_pun: int = 3, R_max: int = 3):
    if not conformed:
        return _punish(T_pun)
    if isinstance(phase, Normal):
        return phase
    if isinstance(phase, Punishment):
        return Punishment(phase.remaining - 1) if phase.remaining > 1 else Recovery(0)
    if isinstance(phase, Recovery):
        return Recovery(phase.level + 1) if phase.level < R_max else Normal()
    raise TypeError(f"unknown phase {phase!r}")


def parse_phase(text: str):
    if text == "Normal":
        return Normal()
    name, _, arg = text.partition("(")
    n = int(arg.rstrip(")"))
    return Punishment(n) if name == "Punishment" else Recovery(n)


# -- configuration and terms ---------------------------------------------------

@dataclass(frozen=True)
class SettlementConfig:
    trust_max: int = 100
    punishment_epochs: int = 3
    recovery_levels: int = 3
    risk_bound: Fraction = Fraction(1, 4)
    credit_max: Optional[Amount] = None
    credit_min: Amount = Amount(0)
    cure_hours: int = 1
    window_hours: int = 4


@dataclass(frozen=True)
class TxTerms:
    fee: Amount = Amount(0)
    rebate: Amount = Amount(0)
    late_merchant_penalty: Amount = Amount(0)
    default_merchant_penalty: Amount = Amount(0)
    late_buyer_penalty: Amount = Amount(0)


@dataclass(frozen=True)
class BuyerTerms:
    tx_rebate: Amount = Amount(0)
    stake_reward: Amount = Amount(0)
    credit_reward: Amount = Amount(0)
    credit_penalty: Amount = Amount(0)


@dataclass(frozen=True)
class MerchantTerms:
    stake_reward: Amount = Amount(0)


# -- accounts ------------------------------------------------------------------

@dataclass(frozen=True)
class BuyerAccount:
    stake: Amount
    credit_limit: Amount
    used: Amount = Amount(0)
    trust: int = 0
    phase: object = Normal()
    alive: bool = True
    misuse_flags: int = 0

    def __post_init__(self):
        for name in ("stake", "credit_limit", "used"):
            if getattr(self, name).micros < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class MerchantAccount:
    stake: Amount
    trust: int = 0
    phase: object = Normal()
    alive: bool = True


class AuthStatus(enum.Enum):
    APPROVED = "Approved"
    OVER_LIMIT = "OverLimit"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class Authorization:
    status: AuthStatus
    deficit: Amount = Amount(0)
    reason: str = ""


def authorize_payment(account: BuyerAccount, amount: Amount, risk_bound: Fraction = Fraction(1, 4)):
    """Check ``amount`` against the remaining credit.

    Returns ``(Authorization, updated account)``.  Only an approval consumes
    credit; a rejection records a misuse flag.
    """
    if not account.alive:
        raise AccountClosed("account defaulted and is closed")
    if amount.micros <= 0:
        raise ValueError("payment must be positive")
    after = account.used + amount
    if after <= account.credit_limit:
        return Authorization(AuthStatus.APPROVED), replace(account, used=after)
    deficit = after - account.credit_limit
    if deficit.as_units <= Fraction(risk_bound) * account.credit_limit.as_units:
        return Authorization(AuthStatus.OVER_LIMIT, deficit), account
    return (Authorization(AuthStatus.REJECTED, deficit, "Misuse"),
            replace(account, misuse_flags=account.misuse_flags + 1))


def consume_over_limit(account: BuyerAccount, amount: Amount, deficit: Amount) -> BuyerAccount:
    """Consume the in-limit part of a payment whose deficit a guarantor funded."""
    if not account.alive:
        raise AccountClosed("account defaulted and is closed")
    return replace(account, used=account.used + amount - deficit)


def credit_update(account: BuyerAccount, conduct: Conduct, reward: Amount, penalty: Amount,
                  cfg: SettlementConfig = SettlementConfig()) -> Amount:
    if not account.alive:
        raise AccountClosed("account defaulted and is closed")
    cl = account.credit_limit
    if conduct is Conduct.DEFAULT:
        return Amount(0)
    if conduct is Conduct.CONFORM:
        cl = cl + reward
        if cfg.credit_max is not None:
            cl = min(cl, max(cfg.credit_max, account.credit_limit))
        return cl
    floor = max(cfg.credit_min, Amount(0))
    return max(cl - penalty, min(floor, account.credit_limit))


# -- state ---------------------------------------------------------------------

PENALTY_POOL = "penalty_pool"
REWARD_POOL = "reward_pool"


@dataclass(frozen=True)
class SettlementState:
    epoch: EpochIndex
    buyers: Mapping[AgentId, BuyerAccount]
    merchants: Mapping[AgentId, MerchantAccount]
    balances: Mapping[AgentId, Amount]
    guarantor_stakes: Mapping[AgentId, Amount] = field(default_factory=dict)
    penalty_pool: Amount = Amount(0)
    reward_pool: Amount = Amount(0)
    config: SettlementConfig = SettlementConfig()
    tx_terms: Mapping[bytes, TxTerms] = field(default_factory=dict)
    buyer_terms: Mapping[AgentId, BuyerTerms] = field(default_factory=dict)
    merchant_terms: Mapping[AgentId, MerchantTerms] = field(default_factory=dict)

    def total_value(self) -> Amount:
        out = self.penalty_pool + self.reward_pool
        for a in self.balances.values():
            out += a
        for acct in self.buyers.values():
            out += acct.stake
        for acct in self.merchants.values():
            out += acct.stake
        for s in self.guarantor_stakes.values():
            out += s
        return out

    def holdings(self) -> dict:
        """Per-holder value, keyed by agent name or pool name."""
        out = {PENALTY_POOL: self.penalty_pool, REWARD_POOL: self.reward_pool}
        for agent, bal in self.balances.items():
            out[agent.name] = out.get(agent.name, Amount(0)) + bal
        for agent, acct in list(self.buyers.items()) + list(self.merchants.items()):
            out[agent.name] = out.get(agent.name, Amount(0)) + acct.stake
        for agent, s in self.guarantor_stakes.items():
            out[agent.name] = out.get(agent.name, Amount(0)) + s
        return out

    def with_buyer(self, agent: AgentId, account: BuyerAccount) -> "SettlementState":
        buyers = dict(self.buyers)
        buyers[agent] = account
        return replace(self, buyers=buyers)


@dataclass(frozen=True)
class SettlementOutcome:
    agent: AgentId
    action: Action
    rewards: tuple = ()     # ((name, Amount), ...)
    penalties: tuple = ()
    credit_delta: Amount = Amount(0)
    trust_delta: int = 0
    phase_before: object = Normal()
    phase_after: object = Normal()

    @property
    def total_rewards(self) -> Amount:
        out = Amount(0)
        for _, a in self.rewards:
            out += a
        return out

    @property
    def total_penalties(self) -> Amount:
        out = Amount(0)
        for _, a in self.penalties:
            out += a
        return out


@dataclass(frozen=True)
class AuctionSettlement:
    """An over-limit auction attached to one transaction of the epoch."""

    tx_id: bytes
    buyer: AgentId
    outcome: object  # Cleared | Failed


class _Book:
    """Mutable scratch ledger used inside one settlement."""

    def __init__(self, state: SettlementState):
        self.h = {}
        for a, v in state.balances.items():
            self.h[("bal", a)] = v
        for a, acct in state.buyers.items():
            self.h[("stake", a)] = acct.stake
        for a, acct in state.merchants.items():
            self.h[("stake", a)] = acct.stake
        for a, v in state.guarantor_stakes.items():
            self.h[("gstake", a)] = v
        self.h[PENALTY_POOL] = state.penalty_pool
        self.h[REWARD_POOL] = state.reward_pool

    def move(self, src, dst, amount: Amount):
        if amount.micros == 0:
            return
        if amount.micros < 0:
            raise ValueError("negative transfer")
        self.h[src] = self.h.get(src, Amount(0)) - amount
        self.h[dst] = self.h.get(dst, Amount(0)) + amount

    def get(self, key) -> Amount:
        return self.h.get(key, Amount(0))


def _is_punished(phase) -> bool:
    return isinstance(phase, Punishment)


def _trust_after(trust: int, phase, conduct: Conduct, cfg: SettlementConfig) -> int:
    if conduct is Conduct.DEFAULT:
        return 0
    if conduct is Conduct.LATE:
        return max(0, trust - 1)
    if _is_punished(phase):
        return trust  # no regeneration while punished
    return min(cfg.trust_max, trust + 1)


def settle_epoch(state: SettlementState, actions: Mapping[AgentId, Optional[Action]],
                 proven: Sequence, tx_root: Optional[MerkleRoot],
                 auctions: Sequence[AuctionSettlement] = ()):
    """Apply one epoch boundary.

    ``proven`` holds ``(Transaction, InclusionProof)`` pairs; each must verify
    against ``tx_root`` or the whole settlement is refused.  Agents mapped to
    ``None`` (or missing) sit the epoch out.

    Returns ``(new_state, outcomes, signal)``.
    """
    cfg = state.config
    epoch = state.epoch
    txs = []
    for tx, proof in proven:
        if not isinstance(proof, InclusionProof) or tx_root is None:
            raise UnprovenTransaction("transaction without an inclusion proof")
        if tx.epoch != epoch or tx_root.epoch != epoch:
            raise UnprovenTransaction("transaction or root belongs to another epoch")
        if not verify_inclusion(tx_root, LeafRecord.from_transaction(tx), proof):
            raise UnprovenTransaction(f"inclusion proof failed for tx {tx.id.hex()[:12]}")
        txs.append(tx)

    for agent, action in actions.items():
        if action is None:
            continue
        acct = state.buyers.get(agent) or state.merchants.get(agent)
        if acct is None:
            raise SettlementError(f"unknown agent {agent}")
        if not acct.alive:
            raise AccountClosed(f"{agent} is closed and cannot act")
        if action.role is not agent.role:
            raise SettlementError(f"{action.label} is not a {agent.role.value} action")
    for tx in txs:
        for party in (tx.buyer, tx.merchant):
            acct = state.buyers.get(party) or state.merchants.get(party)
            if acct is None or not acct.alive:
                raise AccountClosed(f"transaction party {party} is not an open account")
            if actions.get(party) is None:
                raise SettlementError(f"transaction party {party} took no action")

    book = _Book(state)
    conduct = {a: act.conduct for a, act in actions.items() if act is not None}
    rewards = {a: [] for a in conduct}
    penalties = {a: [] for a in conduct}
    penalty_flags = []
    funded = {}
    for au in auctions:
        if isinstance(au.outcome, Cleared):
            funded[au.tx_id] = au.outcome
        for g, fate, amount in au.outcome.stakes:
            if fate is StakeFate.SLASHED:
                book.move(("gstake", g), PENALTY_POOL, amount)
                penalty_flags.append((g.name, "auction_slash"))

    def reward(agent, name, amount):
        if amount.micros:
            book.move(REWARD_POOL, ("bal", agent), amount)
            rewards[agent].append((name, amount))

    def penalise(agent, name, amount, src=None):
        if amount.micros:
            book.move(src or ("bal", agent), PENALTY_POOL, amount)
            penalties[agent].append((name, amount))

    # transaction-level flows
    merchant_default_due = {}
    for tx in txs:
        terms = state.tx_terms.get(tx.id, TxTerms())
        b, m = tx.buyer, tx.merchant
        bc, mc = conduct[b], conduct[m]
        cleared = funded.get(tx.id)
        guaranteed = cleared.deficit if cleared else Amount(0)
        if cleared:
            book.move(("bal", cleared.winner), ("bal", m), guaranteed)
        if bc is not Conduct.DEFAULT:
            book.move(("bal", b), ("bal", m), tx.payment - guaranteed)
            if cleared:
                book.move(("bal", b), ("bal", cleared.winner), cleared.repayment)
            if bc is Conduct.LATE:
                penalise(b, "late_payment", terms.late_buyer_penalty)
        punished_m = _is_punished(state.merchants[m].phase)
        if mc is Conduct.DEFAULT:
            merchant_default_due[m] = merchant_default_due.get(m, Amount(0)) + terms.default_merchant_penalty
            continue
        book.move(("bal", m), REWARD_POOL, terms.fee)
        if not punished_m:
            reward(m, "fee_rebate", terms.rebate)
        if mc is Conduct.LATE:
            penalise(m, "late_delivery", terms.late_merchant_penalty)

    # epoch-level flows and account transitions
    new_buyers = dict(state.buyers)
    new_merchants = dict(state.merchants)
    outcomes = []
    signal_outcomes = []
    trust_updates = []

    for agent in sorted(state.merchants, key=lambda a: a.id):
        acct = state.merchants[agent]
        if not acct.alive:
            continue
        act = actions.get(agent)
        if act is None:
            signal_outcomes.append((agent.name, Outcome.ABSENT))
            continue
        c = act.conduct
        terms = state.merchant_terms.get(agent, MerchantTerms())
        punished = _is_punished(acct.phase)
        if c is Conduct.DEFAULT:
            due = min(merchant_default_due.get(agent, Amount(0)), book.get(("stake", agent)))
            penalise(agent, "default_confiscation", due, src=("stake", agent))
            book.move(("stake", agent), ("bal", agent), book.get(("stake", agent)))
            phase_after = acct.phase
            new = replace(acct, stake=Amount(0), trust=0, alive=False)
            signal_outcomes.append((agent.name, Outcome.FAILED))
            penalty_flags.append((agent.name, "merchant_default"))
        else:
            if not punished:
                reward(agent, "stake_reward", terms.stake_reward)
            phase_after = step_phase(acct.phase, c is Conduct.CONFORM,
                                     cfg.punishment_epochs, cfg.recovery_levels)
            new = replace(acct, trust=_trust_after(acct.trust, acct.phase, c, cfg), phase=phase_after,
                          stake=book.get(("stake", agent)))
            signal_outcomes.append((agent.name, Outcome.DELIVERED if c is Conduct.CONFORM
                                    else Outcome.DELIVERED_LATE))
            if c is Conduct.LATE:
                penalty_flags.append((agent.name, "late_delivery"))
        new_merchants[agent] = new
        if new.trust != acct.trust:
            trust_updates.append((agent.name, acct.trust, new.trust))
        outcomes.append(SettlementOutcome(agent, act, tuple(rewards[agent]), tuple(penalties[agent]),
                                          Amount(0), new.trust - acct.trust, acct.phase, phase_after))

    for agent in sorted(state.buyers, key=lambda a: a.id):
        acct = state.buyers[agent]
        if not acct.alive:
            continue
        act = actions.get(agent)
        if act is None:
            signal_outcomes.append((agent.name, Outcome.ABSENT))
            new_buyers[agent] = replace(acct, used=Amount(0))
            continue
        c = act.conduct
        terms = state.buyer_terms.get(agent, BuyerTerms())
        punished = _is_punished(acct.phase)
        if c is Conduct.DEFAULT:
            penalise(agent, "stake_confiscation", book.get(("stake", agent)), src=("stake", agent))
            new = replace(acct, stake=Amount(0), credit_limit=Amount(0), used=Amount(0), trust=0,
                          alive=False)
            phase_after = acct.phase
            signal_outcomes.append((agent.name, Outcome.DEFAULTED))
            penalty_flags.append((agent.name, "buyer_default"))
        else:
            if c is Conduct.CONFORM and not punished:
                reward(agent, "tx_rebate", terms.tx_rebate)
            if not punished:
                reward(agent, "stake_reward", terms.stake_reward)
            credit_reward = terms.credit_reward if not punished else Amount(0)
            cl = credit_update(acct, c, credit_reward, terms.credit_penalty, cfg)
            phase_after = step_phase(acct.phase, c is Conduct.CONFORM,
                                     cfg.punishment_epochs, cfg.recovery_levels)
            new = replace(acct, credit_limit=cl, used=Amount(0), phase=phase_after,
                          trust=_trust_after(acct.trust, acct.phase, c, cfg))
            signal_outcomes.append((agent.name, Outcome.PAID if c is Conduct.CONFORM
                                    else Outcome.PAID_LATE))
            if c is Conduct.LATE:
                penalty_flags.append((agent.name, "late_payment"))
        if acct.misuse_flags:
            penalty_flags.append((agent.name, "misuse"))
            new = replace(new, misuse_flags=0)
        new_buyers[agent] = new
        if new.trust != acct.trust:
            trust_updates.append((agent.name, acct.trust, new.trust))
        outcomes.append(SettlementOutcome(agent, act, tuple(rewards[agent]), tuple(penalties[agent]),
                                          new.credit_limit - acct.credit_limit, new.trust - acct.trust,
                                          acct.phase, phase_after))

    balances = {k[1]: v for k, v in book.h.items() if isinstance(k, tuple) and k[0] == "bal"}
    gstakes = {k[1]: v for k, v in book.h.items() if isinstance(k, tuple) and k[0] == "gstake"}
    new_state = replace(
        state, epoch=epoch.next(), buyers=new_buyers, merchants=new_merchants, balances=balances,
        guarantor_stakes=gstakes, penalty_pool=book.get(PENALTY_POOL), reward_pool=book.get(REWARD_POOL))
    signal = PublicSignal(epoch.index, tuple(sorted(signal_outcomes, key=lambda x: x[0])),
                          tuple(sorted(penalty_flags)), tuple(sorted(trust_updates)))
    return new_state, tuple(outcomes), signal


# -- JSON snapshots ------------------------------------------------------------

def _phase_json(p) -> str:
    return str(p)


def state_to_json(state: SettlementState) -> dict:
    def key(a):
        return a.name

    return {
        "schema": 1,
        "epoch": state.epoch.index,
        "penalty_pool": state.penalty_pool.micros,
        "reward_pool": state.reward_pool.micros,
        "buyers": {
            key(a): {"stake": b.stake.micros, "credit_limit": b.credit_limit.micros,
                     "used": b.used.micros, "trust": b.trust, "phase": _phase_json(b.phase),
                     "alive": b.alive, "misuse_flags": b.misuse_flags}
            for a, b in sorted(state.buyers.items(), key=lambda kv: kv[0].name)
        },
        "merchants": {
            key(a): {"stake": m.stake.micros, "trust": m.trust, "phase": _phase_json(m.phase),
                     "alive": m.alive}
            for a, m in sorted(state.merchants.items(), key=lambda kv: kv[0].name)
        },
        "balances": {key(a): v.micros for a, v in sorted(state.balances.items(), key=lambda kv: kv[0].name)},
        "guarantor_stakes": {key(a): v.micros
                             for a, v in sorted(state.guarantor_stakes.items(), key=lambda kv: kv[0].name)},
        "total_value": state.total_value().micros,
    }


def agent_roles(state: SettlementState) -> dict:
    out = {}
    for a in state.buyers:
        out[a.name] = Role.BUYER
    for a in state.merchants:
        out[a.name] = Role.MERCHANT
    for a in state.guarantor_stakes:
        out[a.name] = Role.GUARANTOR
    return out
