"""Shared domain primitives: money, rates, epochs, agents, actions, signals.

Money is held as signed integer micro-units (1 unit = 10**6 micro-units).
Every computation stays exact until :func:`apply_rate`, the single place
where a result is rounded (round-half-even).
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Union

MICRO = 10**6
EPOCH_HOURS = 4
HOURS_PER_YEAR = 365 * 24

# Amounts are range-checked against a signed 128-bit word so that arithmetic
# that would wrap in a fixed-width contract fails loudly here instead.
AMOUNT_MAX = 2**127 - 1
AMOUNT_MIN = -(2**127)

# Exact rationals. ``fractions.Fraction`` already keeps lowest terms with a
# positive denominator and compares exactly.
Ratio = Fraction


class AmountOverflow(OverflowError):
    pass


def _checked(micros: int) -> int:
    if not AMOUNT_MIN <= micros <= AMOUNT_MAX:
        raise AmountOverflow(f"amount {micros} micro-units outside int128 range")
    return micros


@dataclass(frozen=True, order=True)
class Amount:
    """A signed monetary amount in micro-units."""

    micros: int

    def __post_init__(self):
        if isinstance(self.micros, bool) or not isinstance(self.micros, int):
            raise TypeError(f"micro-units must be int, got {type(self.micros).__name__}")
        _checked(self.micros)

    @classmethod
    def units(cls, value: Union[int, str, Decimal, Fraction]) -> "Amount":
        """Build from a unit count; sub-micro precision is rejected, not rounded."""
        if isinstance(value, float):
            raise TypeError("floats are not accepted for money")
        if isinstance(value, str):
            value = Fraction(Decimal(value)) if "/" not in value else Fraction(value)
        elif isinstance(value, Decimal):
            value = Fraction(value)
        scaled = Fraction(value) * MICRO
        if scaled.denominator != 1:
            raise ValueError(f"{value} units is not a whole number of micro-units")
        return cls(int(scaled))

    @classmethod
    def zero(cls) -> "Amount":
        return cls(0)

    @property
    def as_units(self) -> Fraction:
        return Fraction(self.micros, MICRO)

    def __add__(self, other: "Amount") -> "Amount":
        if not isinstance(other, Amount):
            return NotImplemented
        return Amount(_checked(self.micros + other.micros))

    def __sub__(self, other: "Amount") -> "Amount":
        if not isinstance(other, Amount):
            return NotImplemented
        return Amount(_checked(self.micros - other.micros))

    def __neg__(self) -> "Amount":
        return Amount(_checked(-self.micros))

    def __mul__(self, k: int) -> "Amount":
        if isinstance(k, bool) or not isinstance(k, int):
            return NotImplemented
        return Amount(_checked(self.micros * k))

    __rmul__ = __mul__

    def __bool__(self) -> bool:
        return self.micros != 0

    def __str__(self) -> str:
        sign = "-" if self.micros < 0 else ""
        whole, frac = divmod(abs(self.micros), MICRO)
        return f"{sign}{whole}.{frac:06d}".rstrip("0").rstrip(".")


def total(amounts) -> Amount:
    out = Amount(0)
    for a in amounts:
        out = out + a
    return out


@dataclass(frozen=True, order=True)
class Rate:
    """Annualised rate in parts-per-million."""

    ppm: int

    def __post_init__(self):
        if isinstance(self.ppm, bool) or not isinstance(self.ppm, int) or self.ppm < 0:
            raise ValueError(f"rate must be a non-negative integer ppm, got {self.ppm!r}")

    @classmethod
    def bps(cls, bps: int) -> "Rate":
        return cls(bps * 100)

    @property
    def as_fraction(self) -> Fraction:
        return Fraction(self.ppm, MICRO)

    def __str__(self) -> str:
        return f"{self.ppm}ppm"


def rate_exact(principal: Amount, rate: Rate, hours: int) -> Fraction:
    """``principal * rate * hours / 8760`` in units, unrounded."""
    if hours < 0:
        raise ValueError("hours must be non-negative")
    return principal.as_units * rate.as_fraction * hours / HOURS_PER_YEAR


def apply_rate(principal: Amount, rate: Rate, hours: int) -> Amount:
    """Accrue ``rate`` on ``principal`` for ``hours`` and round to micro-units.

    This is the only rounding point in the package; ties go to even.
    """
    exact_micros = rate_exact(principal, rate, hours) * MICRO
    # Fraction.__round__ with no ndigits rounds half to even.
    return Amount(_checked(round(exact_micros)))


def parse_ratio(text: Union[str, int, Fraction]) -> Fraction:
    """Parse ``"4/5"``, ``"0.8"`` or an int into an exact ratio."""
    if isinstance(text, float):
        raise TypeError("floats are not accepted for ratios; use '4/5' or '0.8'")
    if isinstance(text, str) and "/" not in text:
        return Fraction(Decimal(text))
    return Fraction(text)


def format_ratio(r: Fraction) -> str:
    r = Fraction(r)
    return str(r.numerator) if r.denominator == 1 else f"{r.numerator}/{r.denominator}"


@dataclass(frozen=True, order=True)
class EpochIndex:
    index: int

    def __post_init__(self):
        if isinstance(self.index, bool) or not isinstance(self.index, int) or self.index < 0:
            raise ValueError(f"epoch index must be a non-negative int, got {self.index!r}")

    @property
    def start_hour(self) -> int:
        return self.index * EPOCH_HOURS

    @property
    def end_hour(self) -> int:
        return (self.index + 1) * EPOCH_HOURS

    def next(self) -> "EpochIndex":
        return EpochIndex(self.index + 1)

    def __int__(self) -> int:
        return self.index


def settlement_deadline(epoch: EpochIndex, cure_hours=0):
    """Return ``(t_due, t_cure_end)`` in model hours.

    Obligations still open after ``t_cure_end`` are classified as default.
    """
    if cure_hours < 0:
        raise ValueError("cure window must be non-negative")
    t_due = epoch.end_hour
    return t_due, t_due + cure_hours


class Role(enum.Enum):
    BUYER = "buyer"
    MERCHANT = "merchant"
    GUARANTOR = "guarantor"


@dataclass(frozen=True)
class AgentId:
    id: bytes
    role: Role
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if len(self.id) != 32:
            raise ValueError("agent id must be 32 bytes")

    @classmethod
    def from_label(cls, label: str, role: Role) -> "AgentId":
        return cls(hashlib.sha256(label.encode()).digest(), role, label)

    @property
    def name(self) -> str:
        return self.label or self.id.hex()[:12]

    def __str__(self) -> str:
        return self.name


class Conduct(enum.Enum):
    CONFORM = "conform"
    LATE = "late"
    DEFAULT = "default"


class Action(enum.Enum):
    PAY_ON_TIME = ("PayOnTime", Role.BUYER, Conduct.CONFORM)
    LATE_PAY = ("LatePay", Role.BUYER, Conduct.LATE)
    DEFAULT = ("Default", Role.BUYER, Conduct.DEFAULT)
    DELIVER_ON_TIME = ("DeliverOnTime", Role.MERCHANT, Conduct.CONFORM)
    LATE_DELIVER = ("LateDeliver", Role.MERCHANT, Conduct.LATE)
    FAIL_TO_DELIVER = ("FailToDeliver", Role.MERCHANT, Conduct.DEFAULT)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def role(self) -> Role:
        return self.value[1]

    @property
    def conduct(self) -> Conduct:
        return self.value[2]

    @classmethod
    def of(cls, role: Role, conduct: Conduct) -> "Action":
        for a in cls:
            if a.role is role and a.conduct is conduct:
                return a
        raise ValueError(f"no action for {role} / {conduct}")

    @classmethod
    def parse(cls, label: str) -> "Action":
        for a in cls:
            if a.label == label or a.name == label:
                return a
        raise ValueError(f"unknown action {label!r}")


class Outcome(enum.Enum):
    PAID = "paid"
    PAID_LATE = "late"
    DEFAULTED = "defaulted"
    DELIVERED = "delivered"
    DELIVERED_LATE = "delivered_late"
    FAILED = "failed"
    ABSENT = "absent"


@dataclass(frozen=True)
class PublicSignal:
    """Everything incentive-relevant that became public at one epoch boundary.

    Entries are sorted tuples keyed by agent name so that two signals built
    from the same facts compare equal.
    """

    epoch: int
    outcomes: tuple = ()       # ((agent, Outcome), ...)
    penalties: tuple = ()      # ((agent, trigger), ...)
    trust: tuple = ()          # ((agent, old, new), ...)

    def __post_init__(self):
        for name in ("outcomes", "penalties", "trust"):
            entries = getattr(self, name)
            object.__setattr__(self, name, tuple(sorted(entries, key=lambda e: tuple(map(str, e)))))

    def outcome_of(self, agent: str):
        for name, outcome in self.outcomes:
            if name == agent:
                return outcome
        return None

    @property
    def defaulted(self) -> tuple:
        return tuple(n for n, o in self.outcomes if o in (Outcome.DEFAULTED, Outcome.FAILED))

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "outcomes": {n: o.value for n, o in self.outcomes},
            "penalties": [[n, t] for n, t in self.penalties],
            "trust": {n: [a, b] for n, a, b in self.trust},
        }


@dataclass(frozen=True)
class Transaction:
    id: bytes
    buyer: AgentId
    merchant: AgentId
    payment: Amount
    value: Amount
    epoch: EpochIndex

    def __post_init__(self):
        if len(self.id) != 32:
            raise ValueError("transaction id must be 32 bytes")
        if self.payment.micros <= 0:
            raise ValueError("payment must be positive")
        if self.value.micros < 0:
            raise ValueError("service value must be non-negative")
        if self.buyer.role is not Role.BUYER or self.merchant.role is not Role.MERCHANT:
            raise ValueError("transaction parties must be a buyer and a merchant")

    @classmethod
    def make(cls, buyer: AgentId, merchant: AgentId, payment: Amount, value: Amount,
             epoch: EpochIndex, seq: int) -> "Transaction":
        """Deterministic id from the parties, epoch and a sequence number."""
        h = hashlib.sha256(b"tx" + buyer.id + merchant.id
                           + epoch.index.to_bytes(8, "big") + seq.to_bytes(8, "big"))
        return cls(h.digest(), buyer, merchant, payment, value, epoch)
