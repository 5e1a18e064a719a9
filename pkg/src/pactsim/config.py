"""Scenario configuration: schema, presets, validation, YAML loading.

A configuration fully determines a run together with the seed.  The
`paper-default` preset models a small permissioned deployment: four
validators, three member nodes hosting the provider and consumer
domains, five-second blocks, and enclave transfer times that dominate
private-payload delivery.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import yaml

from .contracts import GasSchedule
from .simulation import Fixed, LatencyModel, Uniform, latency_from_config


class ConfigError(ValueError):
    """The configuration is structurally or semantically invalid."""


PRESETS: dict[str, dict] = {
    "paper-default": {
        "validators": 4,
        "member_nodes": 3,
        "block_interval_ms": 5000,
        "base_round_timeout_ms": 10000,
        "block_gas_limit": 8_000_000,
        "gas": {"base": 21_000, "per_write": 20_000, "per_read": 2_100},
        "latency": {
            "consensus": {"kind": "uniform", "low": 600, "high": 1000},
            "rpc": {"kind": "fixed", "value": 50},
            "enclave_transfer": {"kind": "uniform", "low": 400, "high": 2600},
        },
        "enclave_retry_probability": 0.15,
        "workload": {
            "providers": 40,
            "consumers": 40,
            "publishes_per_provider": 2,
            "selects_per_consumer": 2,
            "breaches_per_group": 3,
            "batches_per_group": 0,
            "batch_size": 10,
        },
        "faults": {},
        "run": {"max_virtual_ms": 3_600_000, "grace_ms": 5000},
    },
    "smoke": {
        "validators": 4,
        "member_nodes": 3,
        "block_interval_ms": 1000,
        "base_round_timeout_ms": 4000,
        "block_gas_limit": 8_000_000,
        "gas": {"base": 21_000, "per_write": 20_000, "per_read": 2_100},
        "latency": {
            "consensus": {"kind": "uniform", "low": 600, "high": 1000},
            "rpc": {"kind": "fixed", "value": 50},
            "enclave_transfer": {"kind": "uniform", "low": 400, "high": 2600},
        },
        "enclave_retry_probability": 0.15,
        "workload": {
            "providers": 2,
            "consumers": 2,
            "publishes_per_provider": 1,
            "selects_per_consumer": 1,
            "breaches_per_group": 1,
            "batches_per_group": 0,
            "batch_size": 3,
        },
        "faults": {},
        "run": {"max_virtual_ms": 600_000, "grace_ms": 5000},
    },
}

STRATEGY_NAMES = ("equivocate", "echo", "withhold")


@dataclass(frozen=True)
class WorkloadSpec:
    providers: int = 0
    consumers: int = 0
    publishes_per_provider: int = 0
    selects_per_consumer: int = 0
    breaches_per_group: int = 0
    batches_per_group: int = 0
    batch_size: int = 10

    @property
    def empty(self) -> bool:
        return self.providers == 0 and self.consumers == 0

    @property
    def has_private(self) -> bool:
        return self.selects_per_consumer > 0 and self.consumers > 0


@dataclass(frozen=True)
class CrashSpec:
    at_ms: int
    node: str | None = None
    proposer_of_height: int | None = None


@dataclass(frozen=True)
class ByzantineSpec:
    node: str
    strategy: str


@dataclass(frozen=True)
class PartitionSpec:
    from_ms: int
    to_ms: int
    groups: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class FaultPlan:
    crashes: tuple[CrashSpec, ...] = ()
    byzantine: tuple[ByzantineSpec, ...] = ()
    partitions: tuple[PartitionSpec, ...] = ()


@dataclass(frozen=True)
class RunSpec:
    max_virtual_ms: int = 3_600_000
    grace_ms: int = 5000
    target_heights: int | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    validators: int
    member_nodes: int
    block_interval_ms: int
    base_round_timeout_ms: int
    block_gas_limit: int
    gas: GasSchedule
    consensus_latency: LatencyModel
    rpc_latency: LatencyModel
    enclave_transfer: Uniform
    enclave_retry_probability: float
    workload: WorkloadSpec
    faults: FaultPlan
    run: RunSpec

    @property
    def validator_names(self) -> tuple[str, ...]:
        return tuple(f"v{i}" for i in range(self.validators))

    @property
    def member_names(self) -> tuple[str, ...]:
        return tuple(f"m{i}" for i in range(self.member_nodes))

    @property
    def node_names(self) -> tuple[str, ...]:
        return self.validator_names + self.member_names


def deep_merge(base: dict, overlay: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return copy.deepcopy(PRESETS[name])


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _int_field(raw: dict, key: str, minimum: int, maximum: int | None = None) -> int:
    value = raw.get(key)
    _require(isinstance(value, int) and not isinstance(value, bool), f"{key} must be an integer")
    _require(value >= minimum, f"{key} must be >= {minimum}")
    if maximum is not None:
        _require(value <= maximum, f"{key} must be <= {maximum}")
    return value


def config_from_dict(raw: dict) -> ScenarioConfig:
    _require(isinstance(raw, dict), "configuration must be a mapping")
    raw = dict(raw)
    preset = raw.pop("preset", None)
    if preset is not None:
        raw = deep_merge(preset_dict(preset), raw)

    unknown = set(raw) - {
        "validators", "member_nodes", "block_interval_ms", "base_round_timeout_ms",
        "block_gas_limit", "gas", "latency", "enclave_retry_probability",
        "workload", "faults", "run",
    }
    _require(not unknown, f"unknown configuration keys: {', '.join(sorted(unknown))}")

    validators = _int_field(raw, "validators", 1, 64)
    member_nodes = _int_field(raw, "member_nodes", 0, 64)
    interval = _int_field(raw, "block_interval_ms", 1)
    timeout = _int_field(raw, "base_round_timeout_ms", 1)
    gas_limit = _int_field(raw, "block_gas_limit", 1)

    gas_raw = raw.get("gas", {})
    _require(isinstance(gas_raw, dict), "gas must be a mapping")
    gas = GasSchedule(
        base=int(gas_raw.get("base", 21_000)),
        per_write=int(gas_raw.get("per_write", 20_000)),
        per_read=int(gas_raw.get("per_read", 2_100)),
    )
    _require(gas.base > 0 and gas.per_write > 0 and gas.per_read > 0, "gas costs must be positive")
    _require(gas_limit >= gas.base, "block_gas_limit below the base transaction cost")

    latency_raw = raw.get("latency", {})
    _require(isinstance(latency_raw, dict), "latency must be a mapping")
    try:
        consensus = latency_from_config(latency_raw.get("consensus", {"kind": "uniform", "low": 600, "high": 1000}))
        rpc = latency_from_config(latency_raw.get("rpc", {"kind": "fixed", "value": 50}))
        enclave = latency_from_config(latency_raw.get("enclave_transfer", {"kind": "uniform", "low": 400, "high": 2600}))
    except (ValueError, KeyError, TypeError) as err:
        raise ConfigError(f"bad latency model: {err}") from None
    for name, model in (("consensus", consensus), ("rpc", rpc), ("enclave_transfer", enclave)):
        if isinstance(model, Uniform):
            _require(0 <= model.low <= model.high, f"latency.{name}: low must be in [0, high]")
        elif isinstance(model, Fixed):
            _require(model.value >= 0, f"latency.{name}: value must be >= 0")
    _require(isinstance(enclave, Uniform), "latency.enclave_transfer must be a uniform model")

    retry = raw.get("enclave_retry_probability", 0.15)
    _require(isinstance(retry, (int, float)) and 0.0 <= float(retry) < 1.0,
             "enclave_retry_probability must be in [0, 1)")

    workload = _parse_workload(raw.get("workload", {}))
    node_names = tuple(f"v{i}" for i in range(validators)) + tuple(f"m{i}" for i in range(member_nodes))
    faults = _parse_faults(raw.get("faults", {}), node_names, validators)
    run = _parse_run(raw.get("run", {}))

    if not workload.empty:
        _require(member_nodes >= 1, "workload requires at least one member node")
    if workload.has_private:
        _require(member_nodes >= 2,
                 "private workload requires at least two member nodes so group members sit on distinct nodes")

    return ScenarioConfig(
        validators=validators,
        member_nodes=member_nodes,
        block_interval_ms=interval,
        base_round_timeout_ms=timeout,
        block_gas_limit=gas_limit,
        gas=gas,
        consensus_latency=consensus,
        rpc_latency=rpc,
        enclave_transfer=enclave,
        enclave_retry_probability=float(retry),
        workload=workload,
        faults=faults,
        run=run,
    )


def _parse_workload(raw: dict) -> WorkloadSpec:
    _require(isinstance(raw, dict), "workload must be a mapping")
    unknown = set(raw) - {
        "providers", "consumers", "publishes_per_provider", "selects_per_consumer",
        "breaches_per_group", "batches_per_group", "batch_size",
    }
    _require(not unknown, f"unknown workload keys: {', '.join(sorted(unknown))}")
    spec = WorkloadSpec(
        providers=int(raw.get("providers", 0)),
        consumers=int(raw.get("consumers", 0)),
        publishes_per_provider=int(raw.get("publishes_per_provider", 0)),
        selects_per_consumer=int(raw.get("selects_per_consumer", 0)),
        breaches_per_group=int(raw.get("breaches_per_group", 0)),
        batches_per_group=int(raw.get("batches_per_group", 0)),
        batch_size=int(raw.get("batch_size", 10)),
    )
    for name in ("providers", "consumers", "publishes_per_provider", "selects_per_consumer",
                 "breaches_per_group", "batches_per_group"):
        _require(getattr(spec, name) >= 0, f"workload.{name} must be >= 0")
    _require(spec.batch_size >= 1, "workload.batch_size must be >= 1")
    if spec.selects_per_consumer > 0:
        _require(spec.providers > 0, "selections require at least one provider")
        _require(spec.publishes_per_provider > 0, "selections require published services")
    _require(spec.publishes_per_provider <= 5, "a provider may offer at most five services")
    return spec


def _parse_faults(raw: dict, node_names: tuple[str, ...], validators: int) -> FaultPlan:
    _require(isinstance(raw, dict), "faults must be a mapping")
    unknown = set(raw) - {"crashes", "byzantine", "partitions"}
    _require(not unknown, f"unknown fault keys: {', '.join(sorted(unknown))}")

    crashes = []
    for item in raw.get("crashes", []):
        _require(isinstance(item, dict), "each crash must be a mapping")
        node = item.get("node")
        height = item.get("proposer_of_height")
        _require((node is None) != (height is None),
                 "a crash names either a node or a proposer_of_height")
        if node is not None:
            _require(node in node_names, f"crash target {node!r} is not a node")
        else:
            _require(isinstance(height, int) and height >= 1, "proposer_of_height must be >= 1")
        at_ms = item.get("at_ms")
        _require(isinstance(at_ms, int) and at_ms >= 0, "crash at_ms must be a non-negative integer")
        crashes.append(CrashSpec(at_ms=at_ms, node=node, proposer_of_height=height))

    byzantine = []
    byz_nodes = set()
    for item in raw.get("byzantine", []):
        _require(isinstance(item, dict), "each byzantine entry must be a mapping")
        node = item.get("node")
        strategy = item.get("strategy")
        _require(node in node_names[:validators], f"byzantine node {node!r} is not a validator")
        _require(strategy in STRATEGY_NAMES, f"unknown byzantine strategy {strategy!r}")
        _require(node not in byz_nodes, f"duplicate byzantine entry for {node!r}")
        byz_nodes.add(node)
        byzantine.append(ByzantineSpec(node=node, strategy=strategy))

    partitions = []
    for item in raw.get("partitions", []):
        _require(isinstance(item, dict), "each partition must be a mapping")
        from_ms = item.get("from_ms")
        to_ms = item.get("to_ms")
        groups = item.get("groups")
        _require(isinstance(from_ms, int) and isinstance(to_ms, int) and 0 <= from_ms < to_ms,
                 "partition needs 0 <= from_ms < to_ms")
        _require(isinstance(groups, list) and len(groups) >= 2, "partition needs at least two groups")
        seen: set[str] = set()
        tidy = []
        for group in groups:
            _require(isinstance(group, list) and group, "partition groups must be non-empty lists")
            for name in group:
                _require(name in node_names, f"partition member {name!r} is not a node")
                _require(name not in seen, f"node {name!r} appears in two partition groups")
                seen.add(name)
            tidy.append(tuple(group))
        _require(seen == set(node_names), "partition groups must cover every node")
        partitions.append(PartitionSpec(from_ms=from_ms, to_ms=to_ms, groups=tuple(tidy)))

    return FaultPlan(crashes=tuple(crashes), byzantine=tuple(byzantine), partitions=tuple(partitions))


def _parse_run(raw: dict) -> RunSpec:
    _require(isinstance(raw, dict), "run must be a mapping")
    unknown = set(raw) - {"max_virtual_ms", "grace_ms", "target_heights"}
    _require(not unknown, f"unknown run keys: {', '.join(sorted(unknown))}")
    max_virtual = int(raw.get("max_virtual_ms", 3_600_000))
    grace = int(raw.get("grace_ms", 5000))
    target = raw.get("target_heights")
    _require(max_virtual > 0, "run.max_virtual_ms must be positive")
    _require(grace >= 0, "run.grace_ms must be >= 0")
    if target is not None:
        _require(isinstance(target, int) and target >= 1, "run.target_heights must be >= 1")
    return RunSpec(max_virtual_ms=max_virtual, grace_ms=grace, target_heights=target)


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"invalid YAML in {path}: {err}") from None
    if raw is None:
        raw = {}
    return config_from_dict(raw)
