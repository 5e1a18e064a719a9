"""Post-run audits over a finished scenario.

These inspect the final object graph the way an examiner would inspect
captured disk and memory images: raw bytes for the isolation scan,
independent re-derivation for authorization, and cross-node comparison
for convergence.  They return findings instead of raising, so tests
can assert emptiness and tools can report details.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ledger import PrivacyMarker
from .scenario import RunResult


@dataclass(frozen=True)
class Finding:
    check: str
    node: str
    detail: str


def node_byte_image(result: RunResult, name: str) -> bytes:
    """Everything a node persists: chain, world state, enclave store."""
    node = result.cluster.nodes[name]
    chain = b"".join(
        block.header_and_body() + b"".join(addr + sig for addr, sig in block.seals)
        for block in node.store.blocks
    )
    return chain + node.state.encode() + node.enclave.dump_bytes()


def isolation_scan(result: RunResult) -> list[Finding]:
    """Look for private plaintext or group keys outside the group.

    For every private payload, every node that hosts neither group
    member must show no trace of the plaintext bytes or the group key
    anywhere in its byte image.  When the run captured wire traffic,
    every message is scanned as well: keys and plaintexts must never
    cross the network at all, only ciphertext does.
    """
    findings: list[Finding] = []
    if result.driver is None:
        return findings
    images = {name: node_byte_image(result, name) for name in result.cluster.node_names}
    wire_log = result.cluster.network.wire_log
    wire_image = b"\x00".join(w for _, _, w in wire_log) if wire_log else b""
    for group in result.directory.by_id.values():
        outsiders = [n for n in result.cluster.node_names if n not in group.member_nodes]
        plaintexts = [p for gid, p in result.driver.payload_log if gid == group.group_id]
        for name in outsiders:
            image = images[name]
            if group.key in image:
                findings.append(Finding("isolation", name, f"group key of {group.group_id.hex()[:16]} present"))
            for i, plaintext in enumerate(plaintexts):
                if plaintext in image:
                    findings.append(
                        Finding("isolation", name, f"plaintext {i} of group {group.group_id.hex()[:16]} present")
                    )
        if group.key in wire_image:
            findings.append(Finding("isolation", "wire", f"group key of {group.group_id.hex()[:16]} on the wire"))
        for i, plaintext in enumerate(plaintexts):
            if plaintext in wire_image:
                findings.append(
                    Finding("isolation", "wire", f"plaintext {i} of group {group.group_id.hex()[:16]} on the wire")
                )
    return findings


def member_state_consistency(result: RunResult) -> list[Finding]:
    """Each group's private ledger must be byte-identical at both members."""
    findings: list[Finding] = []
    for group in result.directory.by_id.values():
        encodings = {}
        for name in group.member_nodes:
            ledger = result.cluster.nodes[name].read_private_state(group.group_id)
            if ledger is None:
                findings.append(Finding("member-state", name, f"no ledger for group {group.group_id.hex()[:16]}"))
                continue
            encodings[name] = ledger.encode()
        values = set(encodings.values())
        if len(values) > 1:
            findings.append(
                Finding(
                    "member-state",
                    ",".join(sorted(encodings)),
                    f"divergent private state for group {group.group_id.hex()[:16]}",
                )
            )
    return findings


def convergence(result: RunResult) -> list[Finding]:
    """All nodes must agree on the chain and the public world state."""
    findings: list[Finding] = []
    nodes = result.cluster.nodes
    heights = {name: node.store.height for name, node in nodes.items()}
    alive = [n for n in nodes if n not in result.cluster.network.crashed]
    reference = min(heights[n] for n in alive)
    ref_node = alive[0]
    for name in alive:
        node = nodes[name]
        for h in range(reference + 1):
            if node.store.hash_at(h) != nodes[ref_node].store.hash_at(h):
                findings.append(Finding("convergence", name, f"chain hash differs at height {h}"))
                break
    # State digests may only be compared between nodes at equal height.
    by_height: dict[int, dict[str, bytes]] = {}
    for name in alive:
        by_height.setdefault(heights[name], {})[name] = nodes[name].state.state_digest()
    for height, digests in by_height.items():
        if len(set(digests.values())) > 1:
            findings.append(
                Finding("convergence", ",".join(sorted(digests)), f"state digest differs at height {height}")
            )
    return findings


def authorization_replay(result: RunResult) -> list[Finding]:
    """Re-derive every authorization decision from chain and group data.

    Every anchored marker for a known group must have been sent by a
    group member, and every breach record in a member ledger must name
    a member as its reporter.
    """
    findings: list[Finding] = []
    directory = result.directory
    ref_name = result.cluster.node_names[0]
    ref_node = result.cluster.nodes[ref_name]
    for block in ref_node.store.blocks:
        for tx in block.txs:
            if isinstance(tx.payload, PrivacyMarker):
                group = directory.by_id.get(tx.payload.group_id)
                if group is not None and tx.sender not in group.members:
                    findings.append(
                        Finding(
                            "authorization",
                            ref_name,
                            f"marker at height {block.height} sent by non-member {tx.sender.hex()[:12]}",
                        )
                    )
    for name, node in result.cluster.nodes.items():
        for gid, ledger in node.group_ledgers.items():
            for i, record in enumerate(ledger.records):
                if record.reporter not in ledger.members:
                    findings.append(
                        Finding("authorization", name, f"record {i} in group {gid.hex()[:16]} from non-member")
                    )
    return findings
