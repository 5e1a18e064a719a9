"""Discrete-event kernel: virtual clock, RNG streams, and the network.

Everything in a run happens on one thread against an integer
millisecond clock.  Events fire in (time, insertion order), so a run is
a pure function of the scenario seed and configuration.  Randomness is
organized as named substreams of one root seed; components that must
not disturb each other (for example enclave transfer times versus
consensus link jitter) draw from separate streams derived with stable
integer keys.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

MAX_EVENTS = 10_000_000

STREAM_CONSENSUS = 1
STREAM_RPC = 2
STREAM_ENCLAVE = 3
STREAM_WORKLOAD = 4
STREAM_KEYS = 5


class LivelockError(RuntimeError):
    """The run exceeded the event budget without going idle."""


class RngHub:
    """Root of all randomness for one run.

    `stream(tag)` returns the shared generator for a subsystem;
    `derived(tag, *key)` returns an independent generator bound to a
    stable integer key, so the sequence an entity sees does not depend
    on how many draws other entities made before it.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[tuple[int, ...], np.random.Generator] = {}

    def _get(self, key: tuple[int, ...]) -> np.random.Generator:
        gen = self._streams.get(key)
        if gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
            gen = np.random.Generator(np.random.PCG64(ss))
            self._streams[key] = gen
        return gen

    def stream(self, tag: int) -> np.random.Generator:
        return self._get((tag,))

    def derived(self, tag: int, *key: int) -> np.random.Generator:
        return self._get((tag, *key))


@dataclass(frozen=True)
class Fixed:
    value: int

    def sample(self, rng: np.random.Generator) -> int:
        return self.value


@dataclass(frozen=True)
class Uniform:
    low: int
    high: int

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high, endpoint=True))


@dataclass(frozen=True)
class LogNormal:
    """Lognormal with the given median (ms) and shape sigma."""

    median: float
    sigma: float

    def sample(self, rng: np.random.Generator) -> int:
        return max(0, int(round(rng.lognormal(mean=np.log(self.median), sigma=self.sigma))))


LatencyModel = Fixed | Uniform | LogNormal


def latency_from_config(spec: dict) -> LatencyModel:
    kind = spec.get("kind")
    if kind == "fixed":
        return Fixed(value=int(spec["value"]))
    if kind == "uniform":
        return Uniform(low=int(spec["low"]), high=int(spec["high"]))
    if kind == "lognormal":
        return LogNormal(median=float(spec["median"]), sigma=float(spec["sigma"]))
    raise ValueError(f"unknown latency model kind: {kind!r}")


@dataclass(order=True)
class _Event:
    fire_at: int
    seq: int
    action: Callable[[], None] = field(compare=False)


class Simulator:
    """Event loop with tracing hooks."""

    def __init__(self, trace_enabled: bool = False, max_events: int = MAX_EVENTS):
        self.now = 0
        self._queue: list[_Event] = []
        self._seq = 0
        self._fired = 0
        self.max_events = max_events
        self.trace_enabled = trace_enabled
        self.trace_log: list[dict] = []
        self._stopped = False

    def schedule(self, delay: int, action: Callable[[], None]) -> None:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, _Event(self.now + delay, self._seq, action))
        self._seq += 1

    def schedule_at(self, when: int, action: Callable[[], None]) -> None:
        self.schedule(max(0, when - self.now), action)

    def stop(self) -> None:
        self._stopped = True

    def run(self, until: int | None = None) -> None:
        """Drain the queue, optionally not past virtual time `until`."""
        while self._queue and not self._stopped:
            if until is not None and self._queue[0].fire_at > until:
                self.now = until
                return
            event = heapq.heappop(self._queue)
            self._fired += 1
            if self._fired > self.max_events:
                raise LivelockError(
                    f"exceeded {self.max_events} events at t={self.now}ms; "
                    "the scenario is not making progress"
                )
            self.now = event.fire_at
            event.action()
        if until is not None and not self._stopped:
            self.now = max(self.now, until)

    def trace(self, kind: str, **fields) -> None:
        if self.trace_enabled:
            self.trace_log.append({"t": self.now, "kind": kind, **fields})


class Network:
    """Point-to-point message fabric with crashes and partitions.

    Delivery delay is drawn per message from the channel's latency
    model.  A message is dropped if either endpoint is crashed at send
    time, if the destination is crashed at delivery time, or if the two
    endpoints are in different partition groups at send time.
    """

    def __init__(self, sim: Simulator, rng_hub: RngHub):
        self.sim = sim
        self.rng_hub = rng_hub
        self.channels: dict[str, tuple[LatencyModel, np.random.Generator]] = {}
        self.crashed: set[str] = set()
        self.partition: list[set[str]] | None = None
        self.delivered = 0
        self.dropped_crash = 0
        self.dropped_partition = 0
        # When set, every message offered to the fabric is recorded as
        # (src, dst, wire bytes), including messages later dropped.
        self.wire_log: list[tuple[str, str, bytes]] | None = None

    @property
    def capture_wire(self) -> bool:
        return self.wire_log is not None

    def add_channel(self, name: str, model: LatencyModel, stream_tag: int) -> None:
        self.channels[name] = (model, self.rng_hub.stream(stream_tag))

    def crash(self, node: str) -> None:
        self.crashed.add(node)
        self.sim.trace("crash", node=node)

    def set_partition(self, groups: Iterable[Iterable[str]] | None) -> None:
        self.partition = [set(g) for g in groups] if groups is not None else None
        self.sim.trace("partition", groups=[sorted(g) for g in self.partition] if self.partition else None)

    def _connected(self, src: str, dst: str) -> bool:
        if self.partition is None:
            return True
        for group in self.partition:
            if src in group and dst in group:
                return True
        return False

    def send(
        self,
        src: str,
        dst: str,
        channel: str,
        deliver: Callable[[], None],
        wire: bytes | None = None,
    ) -> None:
        model, rng = self.channels[channel]
        # The draw happens even for dropped messages so that crashing a
        # node does not shift every later delay on the shared stream.
        delay = model.sample(rng)
        self._dispatch(src, dst, delay, deliver, wire)

    def send_after(
        self,
        src: str,
        dst: str,
        delay: int,
        deliver: Callable[[], None],
        wire: bytes | None = None,
    ) -> None:
        self._dispatch(src, dst, delay, deliver, wire)

    def _dispatch(
        self,
        src: str,
        dst: str,
        delay: int,
        deliver: Callable[[], None],
        wire: bytes | None = None,
    ) -> None:
        if self.wire_log is not None and wire is not None:
            self.wire_log.append((src, dst, wire))
        if src in self.crashed or dst in self.crashed:
            self.dropped_crash += 1
            return
        if not self._connected(src, dst):
            self.dropped_partition += 1
            return

        def arrive() -> None:
            if dst in self.crashed:
                self.dropped_crash += 1
                return
            self.delivered += 1
            deliver()

        self.sim.schedule(delay, arrive)
