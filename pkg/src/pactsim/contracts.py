"""Contract rules: public registry flow and the private breach ledger.

Public side: domains register a role, providers publish services (at
most five each, metadata digests unique per provider), consumers select
a published service, and privacy markers anchor off-chain payloads.
Gas is metered against a fixed schedule with price zero, so gas caps
block capacity without moving balances.

Private side: each privacy group runs a breach ledger whose operations
(initialize, record a breach, commit a batch) travel encrypted and are
replayed by every group member; every operation checks membership
before touching state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .encoding import (
    ADDRESS_LEN,
    HASH_LEN,
    TAG_STATE,
    Cursor,
    digest,
    enc_bytes,
    enc_fixed,
    enc_list,
    enc_str,
    enc_u8,
    enc_u32,
    enc_u64,
    dec_args,
)
from .ledger import PrivacyMarker, PublicCall, Transaction

MAX_SERVICES_PER_PROVIDER = 5


class Role(enum.IntEnum):
    PROVIDER = 1
    CONSUMER = 2


@dataclass(frozen=True)
class GasSchedule:
    base: int = 21_000
    per_write: int = 20_000
    per_read: int = 2_100

    def cost(self, writes: int, reads: int) -> int:
        return self.base + writes * self.per_write + reads * self.per_read


# (writes, reads) per public operation; marker anchoring is one write.
OP_IO = {
    ("registry", "register"): (1, 0),
    ("catalog", "publish"): (2, 0),
    ("selection", "select"): (1, 2),
    ("marker", "anchor"): (1, 0),
}

ABI: dict[str, dict[str, tuple[tuple[str, str], ...]]] = {
    "registry": {"register": (("role", "u8"),)},
    "catalog": {"publish": (("name", "str"), ("sla_hash", "hash"))},
    "selection": {"select": (("provider", "address"), ("service_index", "u64"))},
}


def abi_arg_schema(contract: str, function: str) -> tuple[str, ...]:
    return tuple(t for _, t in ABI[contract][function])


def abi_description(schedule: GasSchedule | None = None) -> str:
    """Stable text rendering of the public call surface."""
    schedule = schedule or GasSchedule()
    lines = ["public contract interface", ""]
    for contract in sorted(ABI):
        for function in sorted(ABI[contract]):
            params = ", ".join(f"{n}: {t}" for n, t in ABI[contract][function])
            writes, reads = OP_IO[(contract, function)]
            lines.append(
                f"{contract}.{function}({params})"
                f"  [writes={writes} reads={reads} gas={schedule.cost(writes, reads)}]"
            )
    writes, reads = OP_IO[("marker", "anchor")]
    lines.append(
        "privacy marker (group_id: hash, payload_hash: hash)"
        f"  [writes={writes} reads={reads} gas={schedule.cost(writes, reads)}]"
    )
    return "\n".join(lines) + "\n"


class ExecError(Exception):
    """Rule violation; the transaction fails but still consumes gas."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Receipt:
    tx_id: bytes
    ok: bool
    gas_used: int
    reason: str | None = None


@dataclass(frozen=True)
class ServiceRecord:
    provider: bytes
    name: str
    sla_hash: bytes

    def encode(self) -> bytes:
        return enc_fixed(self.provider, ADDRESS_LEN) + enc_str(self.name) + enc_fixed(self.sla_hash, HASH_LEN)


@dataclass(frozen=True)
class SelectionRecord:
    """Public fact that a consumer selected a provider's service."""

    consumer: bytes
    provider: bytes
    service_index: int

    def encode(self) -> bytes:
        return (
            enc_fixed(self.consumer, ADDRESS_LEN)
            + enc_fixed(self.provider, ADDRESS_LEN)
            + enc_u64(self.service_index)
        )


@dataclass(frozen=True)
class AgreementRecord:
    """The agreement as the two parties privately record it.

    The terms text is the part that never touches the public chain;
    publicly only the fact of selection is visible.
    """

    consumer: bytes
    provider: bytes
    service_index: int
    terms: str

    def encode(self) -> bytes:
        return (
            enc_fixed(self.consumer, ADDRESS_LEN)
            + enc_fixed(self.provider, ADDRESS_LEN)
            + enc_u64(self.service_index)
            + enc_str(self.terms)
        )


class PublicState:
    """World state replicated by every node through block execution."""

    def __init__(self, schedule: GasSchedule):
        self.schedule = schedule
        self.roles: dict[bytes, Role] = {}
        self.services: dict[bytes, list[ServiceRecord]] = {}
        self.agreements: list[SelectionRecord] = []
        self.markers: list[tuple[bytes, bytes]] = []
        self.nonces: dict[bytes, int] = {}

    # -- operations ---------------------------------------------------

    def _op_register(self, sender: bytes, args: bytes) -> None:
        (role_val,) = dec_args(abi_arg_schema("registry", "register"), args)
        if sender in self.roles:
            raise ExecError("already registered")
        try:
            role = Role(role_val)
        except ValueError:
            raise ExecError(f"unknown role {role_val}") from None
        self.roles[sender] = role

    def _op_publish(self, sender: bytes, args: bytes) -> None:
        if self.roles.get(sender) != Role.PROVIDER:
            raise ExecError("publish requires provider role")
        name, sla_hash = dec_args(abi_arg_schema("catalog", "publish"), args)
        existing = self.services.setdefault(sender, [])
        if len(existing) >= MAX_SERVICES_PER_PROVIDER:
            raise ExecError(f"provider already has {MAX_SERVICES_PER_PROVIDER} services")
        if any(s.sla_hash == sla_hash for s in existing):
            raise ExecError("duplicate service metadata")
        existing.append(ServiceRecord(provider=sender, name=name, sla_hash=sla_hash))

    def _op_select(self, sender: bytes, args: bytes) -> None:
        if self.roles.get(sender) != Role.CONSUMER:
            raise ExecError("select requires consumer role")
        provider, index = dec_args(abi_arg_schema("selection", "select"), args)
        if self.roles.get(provider) != Role.PROVIDER:
            raise ExecError("selection target is not a provider")
        services = self.services.get(provider, [])
        if index >= len(services):
            raise ExecError(f"provider has no service {index}")
        self.agreements.append(SelectionRecord(consumer=sender, provider=provider, service_index=index))

    def _op_marker(self, sender: bytes, marker: PrivacyMarker) -> None:
        self.markers.append((marker.group_id, marker.payload_hash))

    # -- execution ----------------------------------------------------

    def execute(self, tx: Transaction) -> Receipt:
        expected = self.nonces.get(tx.sender, 0)
        if tx.nonce != expected:
            return Receipt(tx.tx_id, False, 0, f"nonce {tx.nonce}, expected {expected}")
        # A sequenced transaction consumes its nonce whether or not the
        # call succeeds.
        self.nonces[tx.sender] = expected + 1

        if isinstance(tx.payload, PrivacyMarker):
            op = ("marker", "anchor")
        else:
            op = (tx.payload.contract, tx.payload.function)
        io = OP_IO.get(op)
        if io is None:
            return Receipt(tx.tx_id, False, self.schedule.base, f"unknown call {op[0]}.{op[1]}")
        cost = self.schedule.cost(*io)
        if tx.gas_limit < cost:
            return Receipt(tx.tx_id, False, tx.gas_limit, "out of gas")

        try:
            if isinstance(tx.payload, PrivacyMarker):
                self._op_marker(tx.sender, tx.payload)
            elif op == ("registry", "register"):
                self._op_register(tx.sender, tx.payload.args)
            elif op == ("catalog", "publish"):
                self._op_publish(tx.sender, tx.payload.args)
            else:
                self._op_select(tx.sender, tx.payload.args)
        except (ExecError, ValueError) as err:
            reason = err.reason if isinstance(err, ExecError) else f"malformed args: {err}"
            return Receipt(tx.tx_id, False, self.schedule.base, reason)
        return Receipt(tx.tx_id, True, cost)

    # -- snapshots ----------------------------------------------------

    def encode(self) -> bytes:
        roles = enc_list(
            enc_fixed(a, ADDRESS_LEN) + enc_u8(int(r)) for a, r in sorted(self.roles.items())
        )
        services = enc_list(
            enc_fixed(p, ADDRESS_LEN) + enc_list(s.encode() for s in recs)
            for p, recs in sorted(self.services.items())
        )
        agreements = enc_list(a.encode() for a in self.agreements)
        markers = enc_list(
            enc_fixed(g, HASH_LEN) + enc_fixed(h, HASH_LEN) for g, h in self.markers
        )
        nonces = enc_list(
            enc_fixed(a, ADDRESS_LEN) + enc_u64(n) for a, n in sorted(self.nonces.items())
        )
        return TAG_STATE + roles + services + agreements + markers + nonces

    def state_digest(self) -> bytes:
        return digest(self.encode())


# -- private breach ledger --------------------------------------------

OP_INIT = 0
OP_BREACH = 1
OP_BATCH = 2


@dataclass(frozen=True)
class BreachRecord:
    reporter: bytes
    details: str
    reported_at: int

    def encode(self) -> bytes:
        return enc_fixed(self.reporter, ADDRESS_LEN) + enc_str(self.details) + enc_u64(self.reported_at)

    @classmethod
    def decode(cls, cur: Cursor) -> "BreachRecord":
        return cls(reporter=cur.fixed(ADDRESS_LEN), details=cur.str_(), reported_at=cur.u64())


@dataclass(frozen=True)
class OpInit:
    agreement: AgreementRecord

    def encode(self) -> bytes:
        return enc_u8(OP_INIT) + self.agreement.encode()


@dataclass(frozen=True)
class OpBreach:
    record: BreachRecord

    def encode(self) -> bytes:
        return enc_u8(OP_BREACH) + self.record.encode()


@dataclass(frozen=True)
class OpBatch:
    records: tuple[BreachRecord, ...]

    def encode(self) -> bytes:
        return enc_u8(OP_BATCH) + enc_list(r.encode() for r in self.records)


PrivateOp = OpInit | OpBreach | OpBatch


def decode_private_op(data: bytes) -> PrivateOp:
    cur = Cursor(data)
    kind = cur.u8()
    if kind == OP_INIT:
        consumer = cur.fixed(ADDRESS_LEN)
        provider = cur.fixed(ADDRESS_LEN)
        index = cur.u64()
        terms = cur.str_()
        op: PrivateOp = OpInit(AgreementRecord(consumer, provider, index, terms))
    elif kind == OP_BREACH:
        op = OpBreach(BreachRecord.decode(cur))
    elif kind == OP_BATCH:
        count = cur.count()
        op = OpBatch(tuple(BreachRecord.decode(cur) for _ in range(count)))
    else:
        raise ValueError(f"unknown private op {kind}")
    cur.finish()
    return op


@dataclass(frozen=True)
class BatchSummary:
    summary_hash: bytes
    count: int

    def encode(self) -> bytes:
        return enc_fixed(self.summary_hash, HASH_LEN) + enc_u32(self.count)


@dataclass
class BreachLedger:
    """Per-group private state, replicated only at group members."""

    group_id: bytes
    members: frozenset[bytes]
    agreement: AgreementRecord | None = None
    records: list[BreachRecord] = field(default_factory=list)
    batches: list[BatchSummary] = field(default_factory=list)
    halted: bool = False

    def check_member(self, sender: bytes) -> None:
        # Membership gates every operation before any state is read.
        if sender not in self.members:
            raise ExecError("sender is not a group member")

    def apply(self, sender: bytes, op: PrivateOp, payload_hash: bytes) -> None:
        self.check_member(sender)
        if self.halted:
            raise ExecError("group is halted")
        if isinstance(op, OpInit):
            if self.agreement is not None:
                raise ExecError("ledger already initialized")
            self.agreement = op.agreement
        elif isinstance(op, OpBreach):
            if self.agreement is None:
                raise ExecError("ledger not initialized")
            if op.record.reporter != sender:
                raise ExecError("breach reporter must be the sender")
            self.records.append(op.record)
        else:
            if self.agreement is None:
                raise ExecError("ledger not initialized")
            self.records.extend(op.records)
            self.batches.append(BatchSummary(summary_hash=payload_hash, count=len(op.records)))

    def encode(self) -> bytes:
        agreement = self.agreement.encode() if self.agreement is not None else b""
        return (
            TAG_STATE
            + enc_fixed(self.group_id, HASH_LEN)
            + enc_list(enc_fixed(m, ADDRESS_LEN) for m in sorted(self.members))
            + enc_bytes(agreement)
            + enc_list(r.encode() for r in self.records)
            + enc_list(b.encode() for b in self.batches)
            + enc_u8(1 if self.halted else 0)
        )

    def state_digest(self) -> bytes:
        return digest(self.encode())
