"""Validator agreement on blocks.

Four-phase rounds (proposal, prepare, commit, finalize) with rotating
proposers, a quorum of 2f+1 out of n = 3f+1 validators, and round
changes on timeout with exponentially growing timeouts.  A proposal is
implicitly its proposer's prepare vote.  Once a validator has prepared
a block it carries that block in its round-change messages, and a new
proposer holding such a certificate must re-propose the same block, so
a block that may have been committed anywhere can never be displaced.

Finalized blocks are broadcast, fully sealed, to every node.  That is
how non-validator nodes follow the chain, how a validator that fell
behind catches up, and where a conflicting finalization at the same
height would be caught.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

from .encoding import (
    HASH_LEN,
    TAG_MSG,
    enc_bytes,
    enc_fixed,
    enc_u32,
    enc_u64,
    enc_u8,
)
from .identity import Credential, KeyRegistry, verify
from .ledger import Block, ChainStore, block_wire, hash_block, make_seal, seal_preimage
from .simulation import Network, Simulator

if TYPE_CHECKING:
    from .node import NodeRuntime

MSG_PREPREPARE = 1
MSG_PREPARE = 2
MSG_COMMIT = 3
MSG_ROUND_CHANGE = 4

FUTURE_BUFFER_FACTOR = 4


def fault_tolerance(n: int) -> int:
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    return 2 * fault_tolerance(n) + 1


@dataclass(frozen=True)
class ValidatorSet:
    addresses: tuple[bytes, ...]

    @property
    def n(self) -> int:
        return len(self.addresses)

    @property
    def quorum(self) -> int:
        return quorum_size(self.n)

    def proposer_for(self, height: int, round_: int) -> bytes:
        return self.addresses[(height + round_) % self.n]

    def __contains__(self, address: bytes) -> bool:
        return address in self.addresses


def _vote_preimage(msg_type: int, height: int, round_: int, digest: bytes) -> bytes:
    return TAG_MSG + enc_u8(msg_type) + enc_u64(height) + enc_u32(round_) + enc_fixed(digest, HASH_LEN)


@dataclass(frozen=True)
class PrePrepare:
    height: int
    round: int
    block: Block
    rc_cert: tuple["RoundChange", ...]
    sender: bytes
    signature: bytes

    @staticmethod
    def preimage(height: int, round_: int, digest: bytes) -> bytes:
        return _vote_preimage(MSG_PREPREPARE, height, round_, digest)


@dataclass(frozen=True)
class Prepare:
    height: int
    round: int
    digest: bytes
    sender: bytes
    signature: bytes

    @staticmethod
    def preimage(height: int, round_: int, digest: bytes) -> bytes:
        return _vote_preimage(MSG_PREPARE, height, round_, digest)


@dataclass(frozen=True)
class Commit:
    height: int
    round: int
    digest: bytes
    seal: bytes
    sender: bytes
    signature: bytes

    @staticmethod
    def preimage(height: int, round_: int, digest: bytes, seal: bytes) -> bytes:
        return _vote_preimage(MSG_COMMIT, height, round_, digest) + enc_bytes(seal)


@dataclass(frozen=True)
class PreparedCert:
    """Proof that a block gathered a prepare quorum in some round.

    The proposer's proposal signature stands in for its prepare, so the
    quorum is that signature plus the explicit prepare messages.
    """

    block: Block
    round: int
    proposer_sig: bytes
    prepares: tuple[Prepare, ...]

    def verify(self, height: int, validators: ValidatorSet, registry: KeyRegistry) -> bool:
        digest = hash_block(self.block)
        proposer = validators.proposer_for(height, self.round)
        pub = registry.public_key_of(proposer)
        if pub is None or not verify(pub, PrePrepare.preimage(height, self.round, digest), self.proposer_sig):
            return False
        senders = {proposer}
        for p in self.prepares:
            if p.height != height or p.round != self.round or p.digest != digest:
                return False
            if p.sender in senders or p.sender not in validators:
                return False
            pub = registry.public_key_of(p.sender)
            if pub is None or not verify(pub, Prepare.preimage(p.height, p.round, p.digest), p.signature):
                return False
            senders.add(p.sender)
        return len(senders) >= validators.quorum


@dataclass(frozen=True)
class RoundChange:
    height: int
    target_round: int
    prepared: PreparedCert | None
    sender: bytes
    signature: bytes

    @staticmethod
    def preimage(height: int, target_round: int, prepared: PreparedCert | None) -> bytes:
        base = TAG_MSG + enc_u8(MSG_ROUND_CHANGE) + enc_u64(height) + enc_u32(target_round)
        if prepared is None:
            return base + enc_u8(0)
        return (
            base
            + enc_u8(1)
            + enc_u32(prepared.round)
            + enc_fixed(hash_block(prepared.block), HASH_LEN)
        )


Message = PrePrepare | Prepare | Commit | RoundChange


def message_wire(msg: Message) -> bytes:
    """Serialized form of a consensus message as it crosses the network."""
    if isinstance(msg, PrePrepare):
        return (
            PrePrepare.preimage(msg.height, msg.round, hash_block(msg.block))
            + enc_bytes(msg.signature)
            + block_wire(msg.block)
            + b"".join(message_wire(rc) for rc in msg.rc_cert)
        )
    if isinstance(msg, Prepare):
        return Prepare.preimage(msg.height, msg.round, msg.digest) + enc_bytes(msg.signature)
    if isinstance(msg, Commit):
        return Commit.preimage(msg.height, msg.round, msg.digest, msg.seal) + enc_bytes(msg.signature)
    wire = RoundChange.preimage(msg.height, msg.target_round, msg.prepared) + enc_bytes(msg.signature)
    if msg.prepared is not None:
        cert = msg.prepared
        wire += block_wire(cert.block) + enc_bytes(cert.proposer_sig)
        wire += b"".join(message_wire(p) for p in cert.prepares)
    return wire


class ByzantineStrategy:
    """Hook points for a misbehaving validator."""

    name = "honest"

    def propose_variants(self, v: "IbftValidator", block: Block) -> list[Block] | None:
        """Return per-peer-group proposal variants, or None for honest."""
        return None

    def suppress_all_sends(self) -> bool:
        return False

    def reactive_only(self) -> bool:
        """If True, the honest state machine is bypassed entirely."""
        return False

    def on_receive(self, v: "IbftValidator", msg: Message) -> None:
        pass


class EquivocateStrategy(ByzantineStrategy):
    """As proposer, show different peers different blocks."""

    name = "equivocate"

    def propose_variants(self, v: "IbftValidator", block: Block) -> list[Block] | None:
        twin = Block(
            height=block.height,
            timestamp=block.timestamp + 1,
            parent_hash=block.parent_hash,
            proposer=block.proposer,
            round=block.round,
            txs=block.txs,
        )
        return [block, twin]


class EchoStrategy(ByzantineStrategy):
    """Vote for every digest seen, without any validation."""

    name = "echo"

    def reactive_only(self) -> bool:
        return True

    def on_receive(self, v: "IbftValidator", msg: Message) -> None:
        if isinstance(msg, PrePrepare):
            digest = hash_block(msg.block)
            height, round_ = msg.height, msg.round
        elif isinstance(msg, (Prepare, Commit)):
            digest = msg.digest
            height, round_ = msg.height, msg.round
        else:
            return
        v.send_prepare(height, round_, digest)
        v.send_commit(height, round_, digest)


class WithholdStrategy(ByzantineStrategy):
    """Receive everything, send nothing."""

    name = "withhold"

    def suppress_all_sends(self) -> bool:
        return True


STRATEGIES: dict[str, Callable[[], ByzantineStrategy]] = {
    "equivocate": EquivocateStrategy,
    "echo": EchoStrategy,
    "withhold": WithholdStrategy,
}


@dataclass
class _HeightState:
    height: int
    round: int = 0
    started_at: int = 0
    proposals: dict[int, tuple[Block, bytes, PrePrepare]] = field(default_factory=dict)
    prepares: dict[tuple[int, bytes], dict[bytes, Prepare | None]] = field(default_factory=dict)
    commits: dict[tuple[int, bytes], dict[bytes, Commit]] = field(default_factory=dict)
    round_changes: dict[int, dict[bytes, RoundChange]] = field(default_factory=dict)
    prepared: PreparedCert | None = None
    sent_prepare: set[int] = field(default_factory=set)
    sent_commit: set[int] = field(default_factory=set)
    proposed_rounds: set[int] = field(default_factory=set)


class IbftValidator:
    """One validator's consensus engine, driven by network events."""

    def __init__(
        self,
        node: "NodeRuntime",
        credential: Credential,
        validators: ValidatorSet,
        registry: KeyRegistry,
        sim: Simulator,
        network: Network,
        block_interval: int,
        base_round_timeout: int,
        block_gas_limit: int,
        peers: tuple[str, ...],
        strategy: ByzantineStrategy | None = None,
    ):
        self.node = node
        self.credential = credential
        self.address = credential.address
        self.validators = validators
        self.registry = registry
        self.sim = sim
        self.network = network
        self.block_interval = block_interval
        self.base_round_timeout = base_round_timeout
        self.block_gas_limit = block_gas_limit
        self.peers = peers
        self.strategy = strategy or ByzantineStrategy()
        self.halted = False
        self.future: dict[int, list[Message]] = {}
        self.state = _HeightState(height=0)
        self.dropped_invalid = 0

    @property
    def store(self) -> ChainStore:
        return self.node.store

    @property
    def name(self) -> str:
        return self.node.name

    # -- lifecycle ----------------------------------------------------

    def start(self) -> None:
        self._enter_height()

    def halt(self) -> None:
        self.halted = True

    def _enter_height(self) -> None:
        h = self.store.height + 1
        if self.state.height == h:
            return
        parent = self.store.head
        start_at = max(self.sim.now, parent.timestamp + self.block_interval)
        self.state = _HeightState(height=h, started_at=start_at)
        self.sim.trace("height_start", node=self.name, height=h, at=start_at)
        if self.validators.proposer_for(h, 0) == self.address:
            self.sim.schedule_at(start_at, self._guarded(h, 0, self._propose_fresh))
        self.sim.schedule_at(start_at + self.base_round_timeout, self._guarded(h, 0, self._on_timeout))
        for msg in self.future.pop(h, []):
            self._process(msg)

    def _guarded(self, height: int, round_: int, fn: Callable[[], None]) -> Callable[[], None]:
        def run() -> None:
            if self.halted or self.state.height != height or self.state.round != round_:
                return
            if self.store.height >= height:
                return
            fn()

        return run

    # -- sending ------------------------------------------------------

    def _broadcast(self, msg: Message) -> None:
        if self.strategy.suppress_all_sends():
            return
        wire = message_wire(msg) if self.network.capture_wire else None
        for peer in self.peers:
            self.network.send(
                self.name, peer, "consensus",
                lambda m=msg, p=peer: self.node.cluster.deliver_consensus(p, m),
                wire=wire,
            )
        self._process(msg)

    def _sign_vote(self, preimage: bytes) -> bytes:
        return self.credential.sign(preimage)

    def send_prepare(self, height: int, round_: int, digest: bytes) -> None:
        msg = Prepare(
            height=height,
            round=round_,
            digest=digest,
            sender=self.address,
            signature=self._sign_vote(Prepare.preimage(height, round_, digest)),
        )
        self._broadcast(msg)

    def send_commit(self, height: int, round_: int, digest: bytes) -> None:
        seal = self.credential.sign(seal_preimage(digest))
        msg = Commit(
            height=height,
            round=round_,
            digest=digest,
            seal=seal,
            sender=self.address,
            signature=self._sign_vote(Commit.preimage(height, round_, digest, seal)),
        )
        self._broadcast(msg)

    def _send_round_change(self, target: int) -> None:
        msg = RoundChange(
            height=self.state.height,
            target_round=target,
            prepared=self.state.prepared,
            sender=self.address,
            signature=self._sign_vote(RoundChange.preimage(self.state.height, target, self.state.prepared)),
        )
        self._broadcast(msg)

    # -- proposing ----------------------------------------------------

    def _build_block(self, round_: int) -> Block:
        parent = self.store.head
        timestamp = max(self.sim.now, parent.timestamp + self.block_interval)
        txs = tuple(self.node.pool.select(self.block_gas_limit))
        return Block(
            height=self.state.height,
            timestamp=timestamp,
            parent_hash=self.store.hash_at(self.store.height),
            proposer=self.address,
            round=round_,
            txs=txs,
        )

    def _propose_fresh(self) -> None:
        self._propose(0, ())

    def _propose(self, round_: int, rc_cert: tuple[RoundChange, ...]) -> None:
        if round_ in self.state.proposed_rounds or self.strategy.suppress_all_sends():
            return
        self.state.proposed_rounds.add(round_)
        block = None
        if rc_cert:
            best = _highest_prepared(rc_cert)
            if best is not None:
                block = Block(
                    height=best.block.height,
                    timestamp=best.block.timestamp,
                    parent_hash=best.block.parent_hash,
                    proposer=best.block.proposer,
                    round=round_,
                    txs=best.block.txs,
                )
        if block is None:
            block = self._build_block(round_)

        variants = self.strategy.propose_variants(self, block)
        height = self.state.height
        if variants is None:
            digest = hash_block(block)
            msg = PrePrepare(
                height=height,
                round=round_,
                block=block,
                rc_cert=rc_cert,
                sender=self.address,
                signature=self._sign_vote(PrePrepare.preimage(height, round_, digest)),
            )
            self._broadcast(msg)
            return

        # Equivocation: split the peer list across the variants and keep
        # the first variant for ourselves.
        msgs = []
        for variant in variants:
            digest = hash_block(variant)
            msgs.append(
                PrePrepare(
                    height=height,
                    round=round_,
                    block=variant,
                    rc_cert=rc_cert,
                    sender=self.address,
                    signature=self._sign_vote(PrePrepare.preimage(height, round_, digest)),
                )
            )
        half = (len(self.peers) + 1) // 2
        for i, peer in enumerate(self.peers):
            msg = msgs[0] if i < half else msgs[-1]
            self.network.send(
                self.name, peer, "consensus",
                lambda m=msg, p=peer: self.node.cluster.deliver_consensus(p, m),
                wire=message_wire(msg) if self.network.capture_wire else None,
            )
        self._process(msgs[0])

    # -- receiving ----------------------------------------------------

    def on_message(self, msg: Message) -> None:
        if self.halted:
            return
        self.strategy.on_receive(self, msg)
        if self.strategy.reactive_only():
            return
        self._process(msg)

    def _process(self, msg: Message) -> None:
        h = self.state.height
        if msg.height < h:
            return
        if msg.height > h:
            buf = self.future.setdefault(msg.height, [])
            if len(buf) < FUTURE_BUFFER_FACTOR * self.validators.n:
                buf.append(msg)
            return
        if msg.sender not in self.validators:
            self.dropped_invalid += 1
            return
        if isinstance(msg, PrePrepare):
            self._on_preprepare(msg)
        elif isinstance(msg, Prepare):
            self._on_prepare(msg)
        elif isinstance(msg, Commit):
            self._on_commit(msg)
        else:
            self._on_round_change(msg)

    def _verify_sig(self, msg: Message, preimage: bytes) -> bool:
        if msg.sender == self.address:
            return True
        pub = self.registry.public_key_of(msg.sender)
        ok = pub is not None and verify(pub, preimage, msg.signature)
        if not ok:
            self.dropped_invalid += 1
        return ok

    def _on_preprepare(self, msg: PrePrepare) -> None:
        st = self.state
        digest = hash_block(msg.block)
        if not self._verify_sig(msg, PrePrepare.preimage(msg.height, msg.round, digest)):
            return
        if msg.sender != self.validators.proposer_for(msg.height, msg.round):
            self.dropped_invalid += 1
            return
        if msg.round < st.round or msg.round in st.proposals:
            return
        block = msg.block
        if block.height != msg.height or block.proposer != msg.sender:
            self.dropped_invalid += 1
            return
        if block.parent_hash != self.store.hash_at(self.store.height):
            self.dropped_invalid += 1
            return
        if block.timestamp < self.store.head.timestamp:
            self.dropped_invalid += 1
            return
        if msg.round > 0:
            if not self._verify_rc_cert(msg.rc_cert, msg.round, digest):
                self.dropped_invalid += 1
                return
        if msg.round > st.round:
            self._advance_round(msg.round, send_rc=False)
        st.proposals[msg.round] = (block, digest, msg)
        # The proposal is the proposer's prepare.
        self._add_prepare_vote(msg.round, digest, msg.sender, None)
        if msg.round not in st.sent_prepare and msg.sender != self.address:
            st.sent_prepare.add(msg.round)
            self.send_prepare(msg.height, msg.round, digest)
        elif msg.sender == self.address:
            st.sent_prepare.add(msg.round)
        self._check_prepare_quorum(msg.round, digest)
        self._check_commit_quorum(msg.round, digest)

    def _verify_rc_cert(self, cert: tuple[RoundChange, ...], round_: int, digest: bytes) -> bool:
        h = self.state.height
        senders: set[bytes] = set()
        best: PreparedCert | None = None
        for rc in cert:
            if rc.height != h or rc.target_round != round_:
                return False
            if rc.sender in senders or rc.sender not in self.validators:
                return False
            pub = self.registry.public_key_of(rc.sender)
            if pub is None or not verify(pub, RoundChange.preimage(rc.height, rc.target_round, rc.prepared), rc.signature):
                return False
            if rc.prepared is not None:
                if not rc.prepared.verify(h, self.validators, self.registry):
                    return False
                if best is None or rc.prepared.round > best.round:
                    best = rc.prepared
            senders.add(rc.sender)
        if len(senders) < self.validators.quorum:
            return False
        # A proposer holding a prepared certificate is bound to its block.
        if best is not None and hash_block(best.block) != digest:
            return False
        return True

    def _add_prepare_vote(self, round_: int, digest: bytes, sender: bytes, msg: Prepare | None) -> None:
        self.state.prepares.setdefault((round_, digest), {})[sender] = msg

    def _on_prepare(self, msg: Prepare) -> None:
        if not self._verify_sig(msg, Prepare.preimage(msg.height, msg.round, msg.digest)):
            return
        self._add_prepare_vote(msg.round, msg.digest, msg.sender, msg)
        self._check_prepare_quorum(msg.round, msg.digest)

    def _on_commit(self, msg: Commit) -> None:
        if not self._verify_sig(msg, Commit.preimage(msg.height, msg.round, msg.digest, msg.seal)):
            return
        pub = self.registry.public_key_of(msg.sender)
        if msg.sender != self.address and (pub is None or not verify(pub, seal_preimage(msg.digest), msg.seal)):
            self.dropped_invalid += 1
            return
        self.state.commits.setdefault((msg.round, msg.digest), {})[msg.sender] = msg
        self._check_commit_quorum(msg.round, msg.digest)

    def _check_prepare_quorum(self, round_: int, digest: bytes) -> None:
        st = self.state
        if round_ != st.round:
            return
        entry = st.proposals.get(round_)
        if entry is None or entry[1] != digest:
            return
        votes = st.prepares.get((round_, digest), {})
        if len(votes) < self.validators.quorum:
            return
        if st.prepared is None or st.prepared.round < round_:
            block, _, preprepare = entry
            proofs = tuple(v for v in votes.values() if v is not None)
            st.prepared = PreparedCert(
                block=block,
                round=round_,
                proposer_sig=preprepare.signature,
                prepares=proofs,
            )
        if round_ not in st.sent_commit:
            st.sent_commit.add(round_)
            self.send_commit(st.height, round_, digest)

    def _check_commit_quorum(self, round_: int, digest: bytes) -> None:
        st = self.state
        entry = st.proposals.get(round_)
        if entry is None or entry[1] != digest:
            return
        commits = st.commits.get((round_, digest), {})
        if len(commits) < self.validators.quorum:
            return
        block = entry[0]
        seals = tuple(sorted(((c.sender, c.seal) for c in commits.values()), key=lambda s: s[0]))
        sealed = block.with_seals(seals)
        self.sim.trace("finalize", node=self.name, height=block.height, round=round_)
        self.node.on_self_finalized(sealed)

    # -- round changes ------------------------------------------------

    def _on_timeout(self) -> None:
        st = self.state
        self.sim.trace("round_timeout", node=self.name, height=st.height, round=st.round)
        self._advance_round(st.round + 1, send_rc=True)

    def _advance_round(self, target: int, send_rc: bool) -> None:
        st = self.state
        if target <= st.round:
            return
        st.round = target
        delay = self.base_round_timeout * (2**target)
        self.sim.schedule(delay, self._guarded(st.height, target, self._on_timeout))
        if send_rc:
            self._send_round_change(target)
        self._maybe_propose_for(target)
        entry = st.proposals.get(target)
        if entry is not None:
            _, digest, _ = entry
            if target not in st.sent_prepare:
                st.sent_prepare.add(target)
                self.send_prepare(st.height, target, digest)
            self._check_prepare_quorum(target, digest)
            self._check_commit_quorum(target, digest)

    def _on_round_change(self, msg: RoundChange) -> None:
        if not self._verify_sig(msg, RoundChange.preimage(msg.height, msg.target_round, msg.prepared)):
            return
        if msg.prepared is not None and not msg.prepared.verify(msg.height, self.validators, self.registry):
            self.dropped_invalid += 1
            return
        st = self.state
        st.round_changes.setdefault(msg.target_round, {})[msg.sender] = msg

        # Catch up when f+1 validators are already past this round.
        later_senders: set[bytes] = set()
        min_later: int | None = None
        for t, senders in st.round_changes.items():
            if t > st.round:
                later_senders.update(senders)
                if min_later is None or t < min_later:
                    min_later = t
        if min_later is not None and len(later_senders) >= fault_tolerance(self.validators.n) + 1:
            self._advance_round(min_later, send_rc=True)

        self._maybe_propose_for(msg.target_round)

    def _maybe_propose_for(self, target: int) -> None:
        st = self.state
        if self.validators.proposer_for(st.height, target) != self.address:
            return
        if target < st.round or target in st.proposed_rounds:
            return
        senders = st.round_changes.get(target, {})
        if len(senders) >= self.validators.quorum:
            if target > st.round:
                self._advance_round(target, send_rc=True)
            cert = tuple(senders.values())
            self._propose(target, cert)

    # -- external finality --------------------------------------------

    def on_chain_extended(self) -> None:
        """The store advanced (own finalize or sealed-block sync)."""
        if not self.halted:
            self._enter_height()


def _highest_prepared(rc_cert: tuple[RoundChange, ...]) -> PreparedCert | None:
    best: PreparedCert | None = None
    for rc in rc_cert:
        if rc.prepared is not None and (best is None or rc.prepared.round > best.round):
            best = rc.prepared
    return best
