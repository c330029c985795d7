"""Batch commitment: Merkle trees over epoch records and an append-only root ledger.

Byte layouts (all integers big-endian, amounts as signed 128-bit):

    leaf hash      = SHA256(0x00 || leaf bytes)
    internal hash  = SHA256(0x01 || left || right)
    empty epoch    = SHA256(0x00)

    tx leaf        = 0x01 || 0x01 || tx id[32] || buyer id[32] || merchant id[32]
                     || payment i128 || value i128 || epoch u64          (138 bytes)
    credit leaf    = 0x01 || 0x02 || agent id[32] || remaining credit i128
                     || epoch u64                                         (58 bytes)
    commitment msg = kind u8 || epoch u64 || root[32]                     (41 bytes)

An odd node at the end of a level is promoted unchanged to the next level.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import AgentId, Amount, EpochIndex, Transaction

LEAF_VERSION = 0x01
LEAF_KIND_TX = 0x01
LEAF_KIND_CREDIT = 0x02

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

COMMITMENT_MESSAGE_BYTES = 1 + 8 + 32


def _i128(x: int) -> bytes:
    return x.to_bytes(16, "big", signed=True)


def _u64(x: int) -> bytes:
    return x.to_bytes(8, "big")


def hash_leaf(data: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def hash_node(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


EMPTY_ROOT = hashlib.sha256(LEAF_PREFIX).digest()


@dataclass(frozen=True)
class LeafRecord:
    data: bytes

    @classmethod
    def from_transaction(cls, tx: Transaction) -> "LeafRecord":
        return cls(bytes([LEAF_VERSION, LEAF_KIND_TX]) + tx.id + tx.buyer.id + tx.merchant.id
                   + _i128(tx.payment.micros) + _i128(tx.value.micros) + _u64(tx.epoch.index))

    @classmethod
    def from_credit(cls, agent: AgentId, remaining: Amount, epoch: EpochIndex) -> "LeafRecord":
        return cls(bytes([LEAF_VERSION, LEAF_KIND_CREDIT]) + agent.id
                   + _i128(remaining.micros) + _u64(epoch.index))

    @property
    def kind(self) -> int:
        return self.data[1]

    def digest(self) -> bytes:
        return hash_leaf(self.data)


class RootKind(enum.IntEnum):
    TX = 1
    CREDIT = 2


@dataclass(frozen=True)
class MerkleRoot:
    digest: bytes
    kind: RootKind
    epoch: EpochIndex

    def message(self) -> bytes:
        """The on-chain commitment message; its size never depends on the batch."""
        return bytes([int(self.kind)]) + _u64(self.epoch.index) + self.digest


@dataclass(frozen=True)
class InclusionProof:
    index: int
    leaf_count: int
    siblings: tuple  # digests ordered leaf -> root
    root: bytes


class MerkleTree:
    def __init__(self, leaves: Sequence[LeafRecord]):
        self.leaves = tuple(leaves)
        level = [leaf.digest() for leaf in self.leaves]
        self.levels = [level]
        while len(level) > 1:
            nxt = [hash_node(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
            if len(level) % 2:
                nxt.append(level[-1])
            self.levels.append(nxt)
            level = nxt

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def __len__(self):
        return len(self.leaves)

    def prove(self, index: int) -> InclusionProof:
        n = len(self.leaves)
        if not 0 <= index < n:
            raise IndexError(f"leaf index {index} out of range for {n} leaves")
        siblings = []
        i = index
        for level in self.levels[:-1]:
            if i ^ 1 < len(level):
                siblings.append(level[i ^ 1])
            i //= 2
        return InclusionProof(index, n, tuple(siblings), self.root)


def build_tree(leaves: Sequence[LeafRecord], kind: RootKind = RootKind.TX,
               epoch: EpochIndex = EpochIndex(0)):
    """Return ``(MerkleRoot, MerkleTree)`` for a non-empty ordered leaf list."""
    if not leaves:
        raise ValueError("cannot build a tree from zero leaves; use empty_root()")
    tree = MerkleTree(leaves)
    return MerkleRoot(tree.root, kind, epoch), tree


def empty_root(kind: RootKind, epoch: EpochIndex) -> MerkleRoot:
    return MerkleRoot(EMPTY_ROOT, kind, epoch)


def commit_batch(leaves: Sequence[LeafRecord], kind: RootKind, epoch: EpochIndex):
    """Like :func:`build_tree` but an empty batch yields the sentinel root and no tree."""
    if not leaves:
        return empty_root(kind, epoch), None
    return build_tree(leaves, kind, epoch)


def prove_inclusion(tree: MerkleTree, index: int) -> InclusionProof:
    return tree.prove(index)


def verify_inclusion(root: MerkleRoot, leaf: LeafRecord, proof: InclusionProof) -> bool:
    try:
        n, i = proof.leaf_count, proof.index
        if not 0 <= i < n:
            return False
        h = leaf.digest()
        path = iter(proof.siblings)
        used = 0
        while n > 1:
            if i ^ 1 < n:
                sib = next(path)
                used += 1
                h = hash_node(sib, h) if i & 1 else hash_node(h, sib)
            i //= 2
            n = (n + 1) // 2
        return used == len(proof.siblings) and h == root.digest
    except (StopIteration, TypeError, AttributeError):
        return False


class Rejection(enum.Enum):
    DUPLICATE_EPOCH = "DuplicateEpoch"
    STALE_EPOCH = "StaleEpoch"
    WINDOW_CLOSED = "WindowClosed"


@dataclass(frozen=True)
class Submission:
    accepted: bool
    reason: Optional[Rejection] = None

    def __str__(self):
        return "Accepted" if self.accepted else f"Rejected({self.reason.value})"


ACCEPTED = Submission(True)


@dataclass(frozen=True)
class LedgerEntry:
    epoch: EpochIndex
    kind: RootKind
    digest: bytes
    at_time: int


@dataclass
class RootLedger:
    """One root per epoch per kind, strictly increasing, never rewritten.

    Roots for epoch ``t`` are accepted during ``[end of t, end of t + window_hours]``.
    Both kinds share that window but are accepted independently.
    """

    window_hours: int = 4
    _entries: list = field(default_factory=list)

    @property
    def entries(self) -> tuple:
        return tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def last_epoch(self, kind: RootKind) -> Optional[EpochIndex]:
        for e in reversed(self._entries):
            if e.kind is kind:
                return e.epoch
        return None

    def root_for(self, epoch: EpochIndex, kind: RootKind) -> Optional[MerkleRoot]:
        for e in self._entries:
            if e.epoch == epoch and e.kind is kind:
                return MerkleRoot(e.digest, e.kind, e.epoch)
        return None

    def window(self, epoch: EpochIndex):
        return epoch.end_hour, epoch.end_hour + self.window_hours

    def submit(self, root: MerkleRoot, at_time) -> Submission:
        last = self.last_epoch(root.kind)
        if last is not None and root.epoch < last:
            return Submission(False, Rejection.STALE_EPOCH)
        if self.root_for(root.epoch, root.kind) is not None:
            return Submission(False, Rejection.DUPLICATE_EPOCH)
        start, end = self.window(root.epoch)
        if not start <= at_time <= end:
            return Submission(False, Rejection.WINDOW_CLOSED)
        self._entries.append(LedgerEntry(root.epoch, root.kind, root.digest, at_time))
        return ACCEPTED


def submit_root(ledger: RootLedger, epoch: EpochIndex, digest: bytes, kind: RootKind,
                at_time) -> Submission:
    return ledger.submit(MerkleRoot(digest, kind, epoch), at_time)


# -- untrusted aggregator model ------------------------------------------------

@dataclass(frozen=True)
class Honest:
    pass


@dataclass(frozen=True)
class OmitLeaf:
    index: int


@dataclass(frozen=True)
class StaleRoot:
    pass


@dataclass(frozen=True)
class Equivocate:
    pass


@dataclass(frozen=True)
class PendingBatch:
    epoch: EpochIndex
    leaves: tuple
    at_time: int
    kind: RootKind = RootKind.TX


@dataclass(frozen=True)
class AggregatorReport:
    behavior: object
    submissions: tuple      # ((MerkleRoot, Submission), ...)
    committed: Optional[MerkleRoot]
    included: tuple         # batch indices whose inclusion verifies against the committed root
    excluded: tuple
    ledger_before: tuple
    ledger_after: tuple

    @property
    def prefix_preserved(self) -> bool:
        return self.ledger_after[: len(self.ledger_before)] == self.ledger_before

    @property
    def accepted_count(self) -> int:
        return sum(1 for _, s in self.submissions if s.accepted)


def _check_batch(batch: PendingBatch, committed: Optional[MerkleRoot], tree: Optional[MerkleTree]):
    honest_tree = MerkleTree(batch.leaves) if batch.leaves else None
    included, excluded = [], []
    for i, leaf in enumerate(batch.leaves):
        ok = False
        if committed is not None and tree is not None and leaf in tree.leaves:
            ok = verify_inclusion(committed, leaf, tree.prove(tree.leaves.index(leaf)))
        elif committed is not None and honest_tree is not None:
            # the honest tree's proof is the best a claimant could present
            ok = verify_inclusion(committed, leaf, honest_tree.prove(i))
        (included if ok else excluded).append(i)
    return tuple(included), tuple(excluded)


def adversarial_aggregator_step(ledger: RootLedger, batch: PendingBatch, behavior) -> AggregatorReport:
    """Let an untrusted aggregator act on ``batch`` and report what the ledger allowed."""
    before = ledger.entries
    submissions = []
    committed, tree = None, None

    if isinstance(behavior, Honest):
        root, tree = commit_batch(batch.leaves, batch.kind, batch.epoch)
        submissions.append((root, ledger.submit(root, batch.at_time)))
    elif isinstance(behavior, OmitLeaf):
        if not 0 <= behavior.index < len(batch.leaves):
            raise IndexError("omitted leaf index out of range")
        kept = batch.leaves[: behavior.index] + batch.leaves[behavior.index + 1:]
        root, tree = commit_batch(kept, batch.kind, batch.epoch)
        submissions.append((root, ledger.submit(root, batch.at_time)))
    elif isinstance(behavior, StaleRoot):
        last = ledger.last_epoch(batch.kind)
        if last is None or last.index == 0:
            raise ValueError("a stale submission needs a committed epoch after epoch 0")
        root, _ = commit_batch(batch.leaves, batch.kind, EpochIndex(last.index - 1))
        submissions.append((root, ledger.submit(root, batch.at_time)))
    elif isinstance(behavior, Equivocate):
        root_a, tree_a = commit_batch(batch.leaves, batch.kind, batch.epoch)
        rival = tuple(reversed(batch.leaves)) + (LeafRecord(b"\x01\xffequivocation"),)
        root_b, tree_b = commit_batch(rival, batch.kind, batch.epoch)
        for root, t in ((root_a, tree_a), (root_b, tree_b)):
            res = ledger.submit(root, batch.at_time)
            submissions.append((root, res))
            if res.accepted and tree is None:
                tree = t
    else:
        raise TypeError(f"unknown aggregator behavior {behavior!r}")

    for root, res in submissions:
        if res.accepted:
            committed = root
    if committed is None:
        tree = None
    included, excluded = _check_batch(batch, committed, tree)
    return AggregatorReport(behavior, tuple(submissions), committed, included, excluded,
                            before, ledger.entries)
