"""Over-limit liquidity auction: commit-reveal reverse Vickrey among guarantors.

The lowest valid rate wins and is paid the second-lowest valid rate; with a
single valid bid the buyer's cap acts as the reserve price.  Ties go to the
bytewise-lowest guarantor id.

Bid digest layout: ``SHA256(rate_ppm u64 || nonce[32] || guarantor id[32])``.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .core import EPOCH_HOURS, AgentId, Amount, EpochIndex, Rate, apply_rate


class AuctionError(Exception):
    pass


class SecondAuctionSameEpoch(AuctionError):
    pass


class ZeroDeficit(AuctionError):
    pass


class DuplicateCommit(AuctionError):
    pass


class InsufficientStake(AuctionError):
    pass


class WrongPhase(AuctionError):
    pass


class NoPriorCommit(AuctionError):
    pass


def bid_digest(rate: Rate, nonce: bytes, guarantor: AgentId) -> bytes:
    if len(nonce) != 32:
        raise ValueError("nonce must be 32 bytes")
    return hashlib.sha256(rate.ppm.to_bytes(8, "big") + nonce + guarantor.id).digest()


class Phase(enum.Enum):
    COMMIT = "commit"
    REVEAL = "reveal"
    SETTLED = "settled"


class RevealStatus(enum.Enum):
    VALID = "Valid"
    OVER_CAP = "OverCap"
    DIGEST_MISMATCH = "DigestMismatch"


class StakeFate(enum.Enum):
    LOCKED = "locked"
    RELEASED = "released"
    RELEASED_ON_COMPLETION = "released_on_completion"
    SLASHED = "slashed"


@dataclass(frozen=True)
class AuctionConfig:
    buyer: AgentId
    merchant: AgentId
    deficit: Amount
    cap: Rate
    epoch: EpochIndex
    required_lock: Amount


@dataclass(frozen=True)
class BidCommitment:
    guarantor: AgentId
    digest: bytes
    locked: Amount


@dataclass(frozen=True)
class RevealedBid:
    guarantor: AgentId
    rate: Rate
    nonce: bytes


@dataclass(frozen=True)
class Cleared:
    winner: AgentId
    clearing: Rate
    payer: AgentId
    payee: AgentId
    deficit: Amount
    repayment: Amount  # buyer -> winner at epoch end: deficit plus one epoch of interest
    stakes: tuple = ()  # ((guarantor, StakeFate, amount), ...)

    @property
    def failed(self):
        return False


@dataclass(frozen=True)
class Failed:
    reason: str = "NoAdmissibleBid"
    stakes: tuple = ()

    @property
    def failed(self):
        return True


@dataclass
class AuctionRegistry:
    """Remembers which buyers already opened an auction in which epoch."""

    opened: set = field(default_factory=set)

    def close_epoch(self, epoch: EpochIndex):
        self.opened = {(b, e) for b, e in self.opened if e > epoch}


@dataclass
class Auction:
    config: AuctionConfig
    phase: Phase = Phase.COMMIT
    commitments: dict = field(default_factory=dict)   # guarantor -> BidCommitment
    reveals: dict = field(default_factory=dict)       # guarantor -> (RevealedBid, RevealStatus)
    fates: dict = field(default_factory=dict)         # guarantor -> StakeFate
    outcome: object = None

    def close_commit(self):
        if self.phase is not Phase.COMMIT:
            raise WrongPhase(f"cannot open reveal from {self.phase.value}")
        self.phase = Phase.REVEAL

    def stake_totals(self):
        """(locked, released, slashed) over all commitments."""
        locked = released = slashed = Amount(0)
        for g, c in self.commitments.items():
            fate = self.fates[g]
            if fate is StakeFate.LOCKED:
                locked += c.locked
            elif fate is StakeFate.SLASHED:
                slashed += c.locked
            else:
                released += c.locked
        return locked, released, slashed

    @property
    def committed_stake(self) -> Amount:
        out = Amount(0)
        for c in self.commitments.values():
            out += c.locked
        return out


def open_auction(buyer: AgentId, deficit: Amount, cap: Rate, epoch: EpochIndex,
                 registry: AuctionRegistry, merchant: AgentId,
                 required_lock: Optional[Amount] = None) -> Auction:
    if deficit.micros <= 0:
        raise ZeroDeficit("over-limit auction needs a positive deficit")
    key = (buyer, epoch)
    if key in registry.opened:
        raise SecondAuctionSameEpoch(f"{buyer} already ran an auction in epoch {epoch.index}")
    registry.opened.add(key)
    lock = deficit if required_lock is None else required_lock
    return Auction(AuctionConfig(buyer, merchant, deficit, cap, epoch, lock))


def commit_bid(auction: Auction, guarantor: AgentId, digest: bytes, stake: Amount) -> None:
    if auction.phase is not Phase.COMMIT:
        raise WrongPhase("commit phase is closed")
    if guarantor in auction.commitments:
        raise DuplicateCommit(f"{guarantor} already committed")
    if stake < auction.config.required_lock:
        raise InsufficientStake(f"{guarantor} locks {stake}, needs {auction.config.required_lock}")
    auction.commitments[guarantor] = BidCommitment(guarantor, digest, stake)
    auction.fates[guarantor] = StakeFate.LOCKED


def reveal_bid(auction: Auction, guarantor: AgentId, rate: Rate, nonce: bytes) -> RevealStatus:
    if auction.phase is not Phase.REVEAL:
        raise WrongPhase("not in reveal phase")
    commitment = auction.commitments.get(guarantor)
    if commitment is None:
        raise NoPriorCommit(f"{guarantor} has no commitment")
    if guarantor in auction.reveals:
        raise AuctionError(f"{guarantor} already revealed")
    if len(nonce) != 32 or bid_digest(rate, nonce, guarantor) != commitment.digest:
        status = RevealStatus.DIGEST_MISMATCH
        auction.fates[guarantor] = StakeFate.SLASHED
    elif rate > auction.config.cap:
        status = RevealStatus.OVER_CAP
        auction.fates[guarantor] = StakeFate.RELEASED
    else:
        status = RevealStatus.VALID
    auction.reveals[guarantor] = (RevealedBid(guarantor, rate, nonce), status)
    return status


def clear(valid: list, cap: Rate):
    """Winner and price over ``[(guarantor, rate), ...]`` already known to be valid.

    Returns ``(winner, clearing_rate)`` or ``None``.  Guarantors are compared by
    their 32-byte id, so anything with an ``id`` attribute works.
    """
    if not valid:
        return None
    ranked = sorted(valid, key=lambda gr: (gr[1], gr[0].id))
    winner = ranked[0][0]
    clearing = ranked[1][1] if len(ranked) > 1 else cap
    return winner, clearing


def settle_auction(auction: Auction):
    if auction.phase is not Phase.REVEAL:
        raise WrongPhase("settlement requires a closed reveal phase")
    cfg = auction.config
    valid = [(g, bid.rate) for g, (bid, st) in auction.reveals.items() if st is RevealStatus.VALID]
    result = clear(valid, cfg.cap)

    for g in auction.commitments:
        if g not in auction.reveals:
            auction.fates[g] = StakeFate.SLASHED  # never revealed
    for g, _ in valid:
        auction.fates[g] = StakeFate.RELEASED
    if result is not None:
        auction.fates[result[0]] = StakeFate.RELEASED_ON_COMPLETION

    stakes = tuple((g, auction.fates[g], auction.commitments[g].locked)
                   for g in sorted(auction.commitments, key=lambda a: a.id))
    auction.phase = Phase.SETTLED
    if result is None:
        auction.outcome = Failed(stakes=stakes)
    else:
        winner, clearing = result
        interest = apply_rate(cfg.deficit, clearing, EPOCH_HOURS)
        auction.outcome = Cleared(winner, clearing, winner, cfg.merchant, cfg.deficit,
                                  cfg.deficit + interest, stakes)
    return auction.outcome


def run_sealed_auction(auction: Auction, bids: dict, nonces: dict, stakes: dict,
                       reveal: Optional[set] = None):
    """Drive a whole auction with honest commit/reveal for each ``guarantor -> rate``.

    ``reveal`` limits which guarantors open their bids (others forfeit).
    """
    for g, rate in bids.items():
        commit_bid(auction, g, bid_digest(rate, nonces[g], g), stakes[g])
    auction.close_commit()
    for g, rate in bids.items():
        if reveal is None or g in reveal:
            reveal_bid(auction, g, rate, nonces[g])
    return settle_auction(auction)
