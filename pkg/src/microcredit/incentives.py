"""Exact stage utilities and incentive conditions for merchants and buyers.

All utilities and margins are :class:`fractions.Fraction` values denominated in
units.  Inputs are :class:`~microcredit.core.Amount` (micro-unit integers), so
the only source of non-integral micro-units is the buyer's credit conversion
factor, which is kept exact rather than rounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional

from .core import EPOCH_HOURS, Amount, Rate, format_ratio, rate_exact


class NoDeterrence(ValueError):
    """Continuation value is zero while the default gain is positive."""


def _u(a: Amount) -> Fraction:
    return a.as_units


def _sum(xs) -> Fraction:
    return sum((_u(x) for x in xs), Fraction(0))


def _amounts(xs) -> tuple:
    return tuple(x if isinstance(x, Amount) else Amount.units(x) for x in xs)


@dataclass(frozen=True)
class MerchantParams:
    payments: tuple = ()
    fees: tuple = ()
    exec_costs: tuple = ()
    rebates: tuple = ()
    deferral_gains: tuple = ()
    late_penalties: tuple = ()
    default_penalties: tuple = ()
    stake_reward: Amount = Amount(0)
    stake_cost: Amount = Amount(0)
    max_liability: Optional[Amount] = None
    punishment_epochs: int = 3
    loss_floor: Optional[Amount] = None
    delta: Fraction = Fraction(9, 10)

    def __post_init__(self):
        lists = ("payments", "fees", "exec_costs", "rebates", "deferral_gains",
                 "late_penalties", "default_penalties")
        for name in lists:
            object.__setattr__(self, name, _amounts(getattr(self, name)))
        lengths = {len(getattr(self, name)) for name in lists}
        if len(lengths) > 1:
            raise ValueError(f"per-transaction lists differ in length: {sorted(lengths)}")
        if self.punishment_epochs < 0:
            raise ValueError("punishment horizon must be non-negative")
        if not 0 <= self.delta < 1:
            raise ValueError("discount factor must lie in [0, 1)")

    @property
    def n_tx(self) -> int:
        return len(self.payments)

    @property
    def liability_cap(self) -> Fraction:
        if self.max_liability is None:
            return _sum(self.exec_costs)
        return _u(self.max_liability)

    @property
    def suspended_rewards(self) -> Fraction:
        """Per-epoch rewards withheld while in punishment."""
        return _sum(self.rebates) + _u(self.stake_reward)

    @property
    def per_epoch_loss_floor(self) -> Fraction:
        return self.suspended_rewards if self.loss_floor is None else _u(self.loss_floor)

    def subset(self, indices) -> "MerchantParams":
        idx = list(indices)
        pick = lambda xs: tuple(xs[i] for i in idx)  # noqa: E731
        return MerchantParams(
            pick(self.payments), pick(self.fees), pick(self.exec_costs), pick(self.rebates),
            pick(self.deferral_gains), pick(self.late_penalties), pick(self.default_penalties),
            self.stake_reward, self.stake_cost, self.max_liability, self.punishment_epochs,
            self.loss_floor, self.delta)


@dataclass(frozen=True)
class BuyerParams:
    values: tuple = ()
    payments: tuple = ()
    deferral_gains: tuple = ()
    late_penalties: tuple = ()
    tx_rebate: Amount = Amount(0)
    stake_reward: Amount = Amount(0)
    stake_cost: Amount = Amount(0)
    finance_cost: Amount = Amount(0)
    credit_reward: Amount = Amount(0)
    credit_penalty: Amount = Amount(0)
    credit_limit: Amount = Amount(0)
    stake: Amount = Amount(0)
    credit_weight: Fraction = Fraction(0)
    max_exposure: Optional[Amount] = None
    conforming_utility: Optional[Fraction] = None
    delta: Fraction = Fraction(9, 10)
    opportunity_rate: Rate = Rate(0)

    def __post_init__(self):
        lists = ("values", "payments", "deferral_gains", "late_penalties")
        for name in lists:
            object.__setattr__(self, name, _amounts(getattr(self, name)))
        lengths = {len(getattr(self, name)) for name in lists}
        if len(lengths) > 1:
            raise ValueError(f"per-transaction lists differ in length: {sorted(lengths)}")
        if self.credit_weight < 0:
            raise ValueError("credit conversion factor must be non-negative")
        if not 0 <= self.delta < 1:
            raise ValueError("discount factor must lie in [0, 1)")
        if self.max_exposure is not None and _sum(self.payments) > _u(self.max_exposure):
            raise ValueError("epoch payments exceed the exposure bound")

    @property
    def n_tx(self) -> int:
        return len(self.payments)

    @property
    def exposure(self) -> Fraction:
        """Worst-case outstanding debt in one epoch."""
        if self.max_exposure is None:
            return _sum(self.payments)
        return _u(self.max_exposure)

    @property
    def default_penalty(self) -> Amount:
        return self.stake  # full confiscation

    @property
    def suspended_rewards(self) -> Fraction:
        return _u(self.tx_rebate) + _u(self.stake_reward) + self.credit_weight * _u(self.credit_reward)

    def continuation_utility(self) -> Fraction:
        if self.conforming_utility is not None:
            return Fraction(self.conforming_utility)
        return buyer_utilities(self).conform

    def subset(self, indices) -> "BuyerParams":
        idx = list(indices)
        pick = lambda xs: tuple(xs[i] for i in idx)  # noqa: E731
        from dataclasses import replace
        return replace(self, values=pick(self.values), payments=pick(self.payments),
                       deferral_gains=pick(self.deferral_gains), late_penalties=pick(self.late_penalties))


class StageUtilities(NamedTuple):
    conform: Fraction
    late: Fraction
    default: Fraction


@dataclass(frozen=True)
class Condition:
    name: str
    holds: bool
    margin: Fraction
    strict: bool
    note: str = ""

    @classmethod
    def from_margin(cls, name: str, margin: Fraction, strict: bool) -> "Condition":
        margin = Fraction(margin)
        holds = margin > 0 if strict else margin >= 0
        note = "boundary: fails strict" if strict and margin == 0 else ""
        return cls(name, holds, margin, strict, note)

    def label(self) -> str:
        if self.note:
            return f"{self.name}: {self.note}"
        return f"{self.name}: {'pass' if self.holds else 'FAIL'}"


@dataclass(frozen=True)
class IncentiveReport:
    role: str
    utilities: StageUtilities
    conditions: tuple = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.holds for c in self.conditions)

    def __getitem__(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "role": self.role,
            "utilities": {k: format_ratio(v) for k, v in self.utilities._asdict().items()},
            "conditions": [
                {"name": c.name, "holds": c.holds, "margin": format_ratio(c.margin),
                 "strict": c.strict, "note": c.note}
                for c in self.conditions
            ],
            "passed": self.passed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "IncentiveReport":
        from .core import parse_ratio
        u = data["utilities"]
        conds = tuple(Condition(c["name"], c["holds"], parse_ratio(c["margin"]), c["strict"], c["note"])
                      for c in data["conditions"])
        return cls(data["role"], StageUtilities(*(parse_ratio(u[k]) for k in StageUtilities._fields)),
                   conds)


def _min_gap(penalties, deferral_gains) -> Condition:
    gaps = [_u(p) - _u(s) for p, s in zip(penalties, deferral_gains)]
    if not gaps:
        return Condition("late_dominated", True, Fraction(0), True, "vacuous: no transactions")
    return Condition.from_margin("late_dominated", min(gaps), strict=True)


# -- merchants -----------------------------------------------------------------

def merchant_utilities(p: MerchantParams) -> StageUtilities:
    served = sum((_u(v) - _u(f) - _u(x) + _u(r)
                  for v, f, x, r in zip(p.payments, p.fees, p.exec_costs, p.rebates)), Fraction(0))
    epoch_terms = _u(p.stake_reward) - _u(p.stake_cost)
    conform = served + epoch_terms
    late = served + _sum(p.deferral_gains) - _sum(p.late_penalties) + epoch_terms
    default = (_sum(p.payments) + _sum(p.deferral_gains) - _sum(p.default_penalties) - _u(p.stake_cost))
    return StageUtilities(conform, late, default)


def punishment_utility(p: MerchantParams) -> Fraction:
    """Conforming utility with every protocol reward withheld."""
    return merchant_utilities(p).conform - p.suspended_rewards


def check_merchant_conditions(p: MerchantParams) -> IncentiveReport:
    u = merchant_utilities(p)
    liveness_lhs = _u(p.stake_reward) + _sum(p.default_penalties)
    liveness_rhs = p.liability_cap + sum(
        (_u(f) + _u(pl) - _u(r) for f, pl, r in zip(p.fees, p.late_penalties, p.rebates)),
        Fraction(0))
    ordering_margin = min(u.conform - u.late, u.late - u.default)
    ir_margin = (_sum(p.rebates) + _u(p.stake_reward)
                 - _sum(p.exec_costs) - _sum(p.fees) - _u(p.stake_cost))
    conditions = (
        _min_gap(p.late_penalties, p.deferral_gains),
        Condition.from_margin("bounded_liability", p.liability_cap - _sum(p.exec_costs), strict=False),
        Condition.from_margin("liveness", liveness_lhs - liveness_rhs, strict=True),
        Condition.from_margin("ordering", ordering_margin, strict=True),
        Condition.from_margin("participation", ir_margin, strict=False),
    )
    return IncentiveReport("merchant", u, conditions)


def suspension_loss(delta: Fraction, T: int, floor):
    """Discounted loss of ``T`` suspended epochs at a constant per-epoch ``floor``.

    Returns ``(closed_form, direct_sum)``; they agree exactly.
    """
    delta = Fraction(delta)
    if delta >= 1 or delta < 0:
        raise ValueError("discount factor must lie in [0, 1)")
    if T < 0:
        raise ValueError("punishment horizon must be non-negative")
    floor = floor.as_units if isinstance(floor, Amount) else Fraction(floor)
    closed = (1 - delta**T) / (1 - delta) * floor
    direct = sum((delta ** (tau - 1) * floor for tau in range(1, T + 1)), Fraction(0))
    return closed, direct


def discounted_loss(delta: Fraction, losses) -> Fraction:
    """``sum_tau delta**(tau-1) * loss_tau`` for an arbitrary loss sequence."""
    delta = Fraction(delta)
    return sum((delta**i * Fraction(x) for i, x in enumerate(losses)), Fraction(0))


def verify_merchant_ppe(p: MerchantParams) -> bool:
    """Conforming is a PPE for every discount factor in [0, 1).

    The stage ordering does not involve the discount factor and the suspension
    loss is non-negative term by term whenever the per-epoch floor is, so the
    check needs no sweep over discount factors.
    """
    report = check_merchant_conditions(p)
    stage_ok = all(report[n].holds for n in ("late_dominated", "liveness", "ordering"))
    return stage_ok and p.per_epoch_loss_floor >= 0 and p.punishment_epochs >= 0


# -- buyers --------------------------------------------------------------------

def buyer_utilities(p: BuyerParams) -> StageUtilities:
    surplus = _sum(p.values) - _sum(p.payments)
    stake_cost = _u(p.stake_cost)
    conform = (surplus + _u(p.tx_rebate) + _u(p.stake_reward) - stake_cost
               + p.credit_weight * _u(p.credit_reward))
    late = (surplus + _sum(p.deferral_gains) - _sum(p.late_penalties) + _u(p.stake_reward)
            - _u(p.finance_cost) - stake_cost - p.credit_weight * _u(p.credit_penalty))
    default = (_sum(p.values) + _sum(p.deferral_gains) - _u(p.default_penalty) - stake_cost
               - p.credit_weight * _u(p.credit_limit))
    return StageUtilities(conform, late, default)


class DeltaThreshold(NamedTuple):
    value: Fraction
    over_collateralized: bool = False


def delta_threshold(max_exposure, stake, conforming_utility) -> DeltaThreshold:
    """Smallest discount factor at which the continuation value deters default."""
    conv = lambda x: x.as_units if isinstance(x, Amount) else Fraction(x)  # noqa: E731
    v, s, ubar = conv(max_exposure), conv(stake), conv(conforming_utility)
    gain = v - s
    if gain < 0:
        return DeltaThreshold(Fraction(0), True)
    if gain == 0:
        return DeltaThreshold(Fraction(0), False)
    if ubar <= 0:
        raise NoDeterrence("a non-positive continuation value cannot deter a positive default gain")
    return DeltaThreshold(gain / (gain + ubar), False)


def default_gain_bound(p: BuyerParams) -> Fraction:
    """Worst-case one-shot gain from default: exposure kept minus stake lost."""
    return p.exposure - _u(p.stake)


def continuation_value(ubar: Fraction, delta: Fraction) -> Fraction:
    return Fraction(ubar) / (1 - Fraction(delta))


def avoided_opportunity_cost(p: BuyerParams) -> Fraction:
    """Opportunity cost a fully collateralised buyer would bear for one epoch (units)."""
    principal = Amount.units(_sum(p.payments) - _u(p.stake))
    return rate_exact(principal, p.opportunity_rate, EPOCH_HOURS)


def check_buyer_conditions(p: BuyerParams) -> IncentiveReport:
    u = buyer_utilities(p)
    ubar = p.continuation_utility()
    gain = default_gain_bound(p)
    osdp_margin = p.delta * continuation_value(ubar, p.delta) - gain

    try:
        thr = delta_threshold(p.exposure, p.stake, ubar)
        deterred = Condition.from_margin("default_deterred", p.delta - thr.value, strict=False)
    except NoDeterrence:
        deterred = Condition("default_deterred", False, p.delta - 1, False, "no deterrence")

    stage_gap = u.conform - u.late
    ordering = Condition("ordering", stage_gap > 0 and deterred.holds,
                         min(stage_gap, osdp_margin), True,
                         "boundary: fails strict" if stage_gap == 0 else "")
    conditions = (
        _min_gap(p.late_penalties, p.deferral_gains),
        deterred,
        Condition.from_margin("continuation_covers_gain", osdp_margin, strict=False),
        ordering,
        Condition.from_margin("participation",
                              avoided_opportunity_cost(p) - _u(p.finance_cost), strict=False),
    )
    return IncentiveReport("buyer", u, conditions)


def verify_buyer_ppe(p: BuyerParams) -> bool:
    """Delay is stage-dominated and the discount factor clears the default threshold."""
    report = check_buyer_conditions(p)
    return report["late_dominated"].holds and report["default_deterred"].holds
