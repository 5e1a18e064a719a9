"""Transactions, blocks, and the per-node chain store.

A transaction either calls a public contract function or carries a
privacy marker (a group id plus the hash of an encrypted payload that
travels off-chain).  Blocks are finalized with a quorum of commit seals
over the block hash; the store verifies seals against the validator key
set fixed at genesis and refuses conflicting blocks at the same height.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .encoding import (
    ADDRESS_LEN,
    HASH_LEN,
    TAG_BLOCK,
    TAG_SEAL,
    TAG_TX,
    Cursor,
    digest,
    enc_bytes,
    enc_fixed,
    enc_list,
    enc_str,
    enc_u8,
    enc_u64,
)
from .identity import Credential, KeyRegistry, verify

ZERO_HASH = b"\x00" * HASH_LEN

PAYLOAD_PUBLIC = 0
PAYLOAD_MARKER = 1


class LedgerError(Exception):
    """Base class for chain validation failures."""


class HeightGap(LedgerError):
    """Block height is not head + 1."""


class DuplicateHeight(LedgerError):
    """A different block is already finalized at this height."""


class InsufficientSeals(LedgerError):
    """Fewer distinct valid seals than the required quorum."""


class UnknownValidatorSeal(LedgerError):
    """A seal claims an address outside the validator set."""


class InvalidBlock(LedgerError):
    """Structural or signature failure inside the block."""


@dataclass(frozen=True)
class PublicCall:
    contract: str
    function: str
    args: bytes

    def encode(self) -> bytes:
        return enc_u8(PAYLOAD_PUBLIC) + enc_str(self.contract) + enc_str(self.function) + enc_bytes(self.args)


@dataclass(frozen=True)
class PrivacyMarker:
    group_id: bytes
    payload_hash: bytes

    def encode(self) -> bytes:
        return (
            enc_u8(PAYLOAD_MARKER)
            + enc_fixed(self.group_id, HASH_LEN)
            + enc_fixed(self.payload_hash, HASH_LEN)
        )


def decode_payload(cur: Cursor) -> PublicCall | PrivacyMarker:
    kind = cur.u8()
    if kind == PAYLOAD_PUBLIC:
        return PublicCall(contract=cur.str_(), function=cur.str_(), args=cur.bytes_())
    if kind == PAYLOAD_MARKER:
        return PrivacyMarker(group_id=cur.fixed(HASH_LEN), payload_hash=cur.fixed(HASH_LEN))
    raise ValueError(f"unknown payload kind {kind}")


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    sender_pubkey: bytes
    nonce: int
    gas_limit: int
    payload: PublicCall | PrivacyMarker
    signature: bytes
    tx_id: bytes

    def body(self) -> bytes:
        return (
            enc_fixed(self.sender, ADDRESS_LEN)
            + enc_fixed(self.sender_pubkey, 32)
            + enc_u64(self.nonce)
            + enc_u64(self.gas_limit)
            + self.payload.encode()
        )

    def sign_preimage(self) -> bytes:
        return TAG_TX + self.body()

    def encode(self) -> bytes:
        return self.body() + enc_bytes(self.signature)

    def verify_signature(self) -> bool:
        from .identity import address_of

        if address_of(self.sender_pubkey) != self.sender:
            return False
        return verify(self.sender_pubkey, self.sign_preimage(), self.signature)


def make_transaction(
    credential: Credential,
    nonce: int,
    gas_limit: int,
    payload: PublicCall | PrivacyMarker,
) -> Transaction:
    unsigned = Transaction(
        sender=credential.address,
        sender_pubkey=credential.public_key,
        nonce=nonce,
        gas_limit=gas_limit,
        payload=payload,
        signature=b"",
        tx_id=b"",
    )
    sig = credential.sign(unsigned.sign_preimage())
    tx_id = digest(unsigned.sign_preimage() + sig)
    return Transaction(
        sender=credential.address,
        sender_pubkey=credential.public_key,
        nonce=nonce,
        gas_limit=gas_limit,
        payload=payload,
        signature=sig,
        tx_id=tx_id,
    )


def decode_transaction(cur: Cursor) -> Transaction:
    sender = cur.fixed(ADDRESS_LEN)
    pubkey = cur.fixed(32)
    nonce = cur.u64()
    gas_limit = cur.u64()
    payload = decode_payload(cur)
    signature = cur.bytes_()
    unsigned = Transaction(sender, pubkey, nonce, gas_limit, payload, b"", b"")
    tx_id = digest(unsigned.sign_preimage() + signature)
    return Transaction(sender, pubkey, nonce, gas_limit, payload, signature, tx_id)


@dataclass(frozen=True)
class Block:
    height: int
    timestamp: int
    parent_hash: bytes
    proposer: bytes
    round: int
    txs: tuple[Transaction, ...]
    seals: tuple[tuple[bytes, bytes], ...] = ()

    def header_and_body(self) -> bytes:
        # The round is deliberately left out: a block re-proposed under a
        # prepared certificate in a later round is the same block, and
        # seals gathered in different rounds must agree on its hash.
        return (
            enc_u64(self.height)
            + enc_u64(self.timestamp)
            + enc_fixed(self.parent_hash, HASH_LEN)
            + enc_fixed(self.proposer, ADDRESS_LEN)
            + enc_list(tx.encode() for tx in self.txs)
        )

    def with_seals(self, seals: tuple[tuple[bytes, bytes], ...]) -> "Block":
        return Block(
            height=self.height,
            timestamp=self.timestamp,
            parent_hash=self.parent_hash,
            proposer=self.proposer,
            round=self.round,
            txs=self.txs,
            seals=seals,
        )


def hash_block(block: Block) -> bytes:
    # Seals are excluded so every round variant of the same content,
    # and every seal subset, agree on the hash being committed to.
    preimage = TAG_BLOCK + block.header_and_body()
    return hashlib.sha256(preimage).digest()


def block_wire(block: Block) -> bytes:
    """Full serialized form of a block as it travels between nodes."""
    return (
        block.header_and_body()
        + enc_u64(block.round)
        + enc_list(enc_fixed(sealer, ADDRESS_LEN) + enc_bytes(sig) for sealer, sig in block.seals)
    )


def seal_preimage(block_hash: bytes) -> bytes:
    return TAG_SEAL + enc_fixed(block_hash, HASH_LEN)


def make_seal(credential: Credential, block_hash: bytes) -> tuple[bytes, bytes]:
    return (credential.address, credential.sign(seal_preimage(block_hash)))


def genesis_block() -> Block:
    return Block(
        height=0,
        timestamp=0,
        parent_hash=ZERO_HASH,
        proposer=b"\x00" * ADDRESS_LEN,
        round=0,
        txs=(),
    )


class ChainStore:
    """Finalized blocks of one node, genesis upward, no gaps."""

    def __init__(self, validator_keys: KeyRegistry, quorum: int):
        self.validator_keys = validator_keys
        self.quorum = quorum
        self.blocks: list[Block] = [genesis_block()]
        self.hashes: list[bytes] = [hash_block(self.blocks[0])]

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.head.height

    def block_at(self, height: int) -> Block:
        return self.blocks[height]

    def hash_at(self, height: int) -> bytes:
        return self.hashes[height]

    def verify_seals(self, block: Block, block_hash: bytes) -> None:
        seen: set[bytes] = set()
        preimage = seal_preimage(block_hash)
        for sealer, sig in block.seals:
            if sealer in seen:
                raise InvalidBlock(f"duplicate seal from {sealer.hex()}")
            seen.add(sealer)
            pub = self.validator_keys.public_key_of(sealer)
            if pub is None:
                raise UnknownValidatorSeal(f"seal from non-validator {sealer.hex()}")
            if not verify(pub, preimage, sig):
                raise InvalidBlock(f"bad seal signature from {sealer.hex()}")
        if len(seen) < self.quorum:
            raise InsufficientSeals(f"{len(seen)} seals, need {self.quorum}")

    def append_block(self, block: Block) -> bool:
        """Validate and append a sealed block.

        Returns True when appended, False when the identical block was
        already stored.  Raises DuplicateHeight when a *different* block
        is finalized at an occupied height: that is a consensus safety
        violation and the caller must not continue silently.
        """
        block_hash = hash_block(block)
        if block.height <= self.height:
            if self.hashes[block.height] == block_hash:
                return False
            raise DuplicateHeight(
                f"conflicting block at height {block.height}: "
                f"{self.hashes[block.height].hex()[:16]} vs {block_hash.hex()[:16]}"
            )
        if block.height != self.height + 1:
            raise HeightGap(f"got height {block.height}, head is {self.height}")
        if block.parent_hash != self.hashes[-1]:
            raise InvalidBlock("parent hash does not match head")
        if block.timestamp < self.head.timestamp:
            raise InvalidBlock("timestamp went backwards")
        self.verify_seals(block, block_hash)
        for tx in block.txs:
            if not tx.verify_signature():
                raise InvalidBlock(f"bad tx signature in block {block.height}")
        self.blocks.append(block)
        self.hashes.append(block_hash)
        return True

    def dump(self) -> list[dict]:
        """Chain as plain dicts for traces and debugging output."""
        out = []
        for block, h in zip(self.blocks, self.hashes):
            out.append(
                {
                    "height": block.height,
                    "hash": h.hex(),
                    "parent": block.parent_hash.hex(),
                    "timestamp": block.timestamp,
                    "proposer": block.proposer.hex(),
                    "round": block.round,
                    "txs": [tx.tx_id.hex() for tx in block.txs],
                    "sealers": sorted(s.hex() for s, _ in block.seals),
                }
            )
        return out


@dataclass
class _PoolEntry:
    tx: Transaction
    arrival: int
    oversized_attempts: int = 0


class TxPool:
    """Pending transactions with FIFO, nonce-sequential block packing."""

    MAX_OVERSIZED_ATTEMPTS = 3

    def __init__(self):
        self._entries: dict[bytes, _PoolEntry] = {}
        self._next_nonce: dict[bytes, int] = {}
        self.warnings: list[str] = []

    def __len__(self) -> int:
        return len(self._entries)

    def note_executed_nonce(self, sender: bytes, nonce: int) -> None:
        cur = self._next_nonce.get(sender, 0)
        if nonce + 1 > cur:
            self._next_nonce[sender] = nonce + 1

    def add(self, tx: Transaction, now: int) -> bool:
        if tx.tx_id in self._entries:
            return False
        if tx.nonce < self._next_nonce.get(tx.sender, 0):
            return False
        self._entries[tx.tx_id] = _PoolEntry(tx=tx, arrival=now)
        return True

    def remove_included(self, txs: tuple[Transaction, ...]) -> None:
        for tx in txs:
            self._entries.pop(tx.tx_id, None)
            self.note_executed_nonce(tx.sender, tx.nonce)
        # Anything now stale (nonce already executed elsewhere) is dead weight.
        stale = [
            tid
            for tid, e in self._entries.items()
            if e.tx.nonce < self._next_nonce.get(e.tx.sender, 0)
        ]
        for tid in stale:
            del self._entries[tid]

    def select(self, block_gas_limit: int) -> list[Transaction]:
        """Greedy packing by arrival order, ties broken by tx id bytes.

        Each slot goes to the earliest-arrived transaction that fits
        the remaining gas and whose sender has no earlier nonce still
        pending, re-scanned from the front after every inclusion so an
        early arrival blocked only by its own predecessor regains its
        place the moment the predecessor is taken.  A transaction
        larger than the whole block can never be packed and is dropped
        with a warning after a fixed number of attempts.
        """
        ordered = sorted(self._entries.values(), key=lambda e: (e.arrival, e.tx.tx_id))
        expected = dict(self._next_nonce)
        chosen: list[Transaction] = []
        gas_used = 0
        to_drop: list[bytes] = []

        for entry in ordered:
            if entry.tx.gas_limit > block_gas_limit:
                entry.oversized_attempts += 1
                if entry.oversized_attempts >= self.MAX_OVERSIZED_ATTEMPTS:
                    to_drop.append(entry.tx.tx_id)
                    self.warnings.append(
                        f"dropping tx {entry.tx.tx_id.hex()[:16]}: gas limit "
                        f"{entry.tx.gas_limit} exceeds block gas limit {block_gas_limit}"
                    )

        remaining = [e.tx for e in ordered]
        progressed = True
        while progressed:
            progressed = False
            for i, tx in enumerate(remaining):
                if tx.gas_limit > block_gas_limit:
                    continue
                if tx.nonce != expected.get(tx.sender, 0):
                    continue
                if gas_used + tx.gas_limit > block_gas_limit:
                    continue
                chosen.append(tx)
                expected[tx.sender] = tx.nonce + 1
                gas_used += tx.gas_limit
                del remaining[i]
                progressed = True
                break

        for tid in to_drop:
            self._entries.pop(tid, None)
        return chosen
