"""Configuration schema: presets, merging, validation, YAML loading."""

import pytest

from pactsim.config import (
    ConfigError,
    STRATEGY_NAMES,
    config_from_dict,
    deep_merge,
    load_config,
    preset_dict,
)
from pactsim.simulation import Fixed, Uniform


def cfg(**overrides):
    return config_from_dict({"preset": "smoke", **overrides})


# -- presets and merging ----------------------------------------------


def test_paper_default_preset_values():
    c = config_from_dict({"preset": "paper-default"})
    assert c.validators == 4
    assert c.member_nodes == 3
    assert c.block_interval_ms == 5000
    assert c.base_round_timeout_ms == 10000
    assert c.block_gas_limit == 8_000_000
    assert (c.gas.base, c.gas.per_write, c.gas.per_read) == (21_000, 20_000, 2_100)
    assert isinstance(c.consensus_latency, Uniform)
    assert (c.consensus_latency.low, c.consensus_latency.high) == (600, 1000)
    assert isinstance(c.rpc_latency, Fixed) and c.rpc_latency.value == 50
    assert (c.enclave_transfer.low, c.enclave_transfer.high) == (400, 2600)
    assert c.enclave_retry_probability == 0.15
    assert c.workload.providers == 40
    assert c.workload.consumers == 40
    assert c.workload.publishes_per_provider == 2
    assert c.workload.selects_per_consumer == 2
    assert c.workload.breaches_per_group == 3
    assert c.run.max_virtual_ms == 3_600_000
    assert c.run.target_heights is None


def test_node_name_layout():
    c = config_from_dict({"preset": "paper-default"})
    assert c.validator_names == ("v0", "v1", "v2", "v3")
    assert c.member_names == ("m0", "m1", "m2")
    assert c.node_names == ("v0", "v1", "v2", "v3", "m0", "m1", "m2")


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError, match="unknown preset"):
        config_from_dict({"preset": "huge"})


def test_overlay_merges_nested_mappings():
    c = cfg(block_interval_ms=250, workload={"providers": 9})
    assert c.block_interval_ms == 250
    assert c.workload.providers == 9
    assert c.workload.consumers == 2  # sibling keys survive the merge


def test_deep_merge_does_not_mutate_inputs():
    base = {"a": {"b": 1, "c": 2}}
    merged = deep_merge(base, {"a": {"b": 7}})
    assert merged == {"a": {"b": 7, "c": 2}}
    assert base == {"a": {"b": 1, "c": 2}}


def test_preset_dict_returns_a_copy():
    d = preset_dict("smoke")
    d["validators"] = 99
    assert preset_dict("smoke")["validators"] == 4


def test_strategy_names_frozen():
    assert STRATEGY_NAMES == ("equivocate", "echo", "withhold")


# -- scalar validation ------------------------------------------------


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="unknown configuration keys: block_size"):
        cfg(block_size=100)


@pytest.mark.parametrize(
    "overrides, fragment",
    [
        ({"validators": 0}, "validators must be >= 1"),
        ({"validators": 65}, "validators must be <= 64"),
        ({"validators": True}, "validators must be an integer"),
        ({"validators": "4"}, "validators must be an integer"),
        ({"member_nodes": -1}, "member_nodes must be >= 0"),
        ({"block_interval_ms": 0}, "block_interval_ms must be >= 1"),
        ({"base_round_timeout_ms": 0}, "base_round_timeout_ms must be >= 1"),
        ({"block_gas_limit": 0}, "block_gas_limit must be >= 1"),
    ],
)
def test_scalar_bounds(overrides, fragment):
    with pytest.raises(ConfigError, match=fragment):
        cfg(**overrides)


def test_gas_costs_must_be_positive():
    with pytest.raises(ConfigError, match="gas costs must be positive"):
        cfg(gas={"base": 0})


def test_gas_limit_must_cover_base_cost():
    with pytest.raises(ConfigError, match="below the base transaction cost"):
        cfg(block_gas_limit=20_000)


@pytest.mark.parametrize("retry", [-0.1, 1.0, 1.5, "0.5"])
def test_retry_probability_range(retry):
    with pytest.raises(ConfigError, match="enclave_retry_probability"):
        cfg(enclave_retry_probability=retry)


# -- latency models ---------------------------------------------------


def test_unknown_latency_kind():
    with pytest.raises(ConfigError, match="bad latency model"):
        cfg(latency={"rpc": {"kind": "gaussian", "mu": 1}})


def test_uniform_bounds_checked():
    with pytest.raises(ConfigError, match="latency.consensus"):
        cfg(latency={"consensus": {"kind": "uniform", "low": 900, "high": 100}})


def test_fixed_must_be_non_negative():
    with pytest.raises(ConfigError, match="latency.rpc"):
        cfg(latency={"rpc": {"kind": "fixed", "value": -5}})


def test_enclave_transfer_must_be_uniform():
    with pytest.raises(ConfigError, match="enclave_transfer must be a uniform model"):
        cfg(latency={"enclave_transfer": {"kind": "fixed", "value": 900}})


# -- workload ---------------------------------------------------------


def test_unknown_workload_key():
    with pytest.raises(ConfigError, match="unknown workload keys: tempo"):
        cfg(workload={"tempo": 3})


@pytest.mark.parametrize(
    "overrides, fragment",
    [
        ({"providers": -1}, "workload.providers must be >= 0"),
        ({"batch_size": 0}, "batch_size must be >= 1"),
        ({"publishes_per_provider": 6}, "at most five services"),
        ({"providers": 0, "selects_per_consumer": 1}, "at least one provider"),
        ({"publishes_per_provider": 0, "selects_per_consumer": 1}, "published services"),
    ],
)
def test_workload_consistency(overrides, fragment):
    with pytest.raises(ConfigError, match=fragment):
        cfg(workload=overrides)


def test_workload_needs_member_nodes():
    with pytest.raises(ConfigError, match="at least one member node"):
        cfg(member_nodes=0)


def test_private_workload_needs_two_member_nodes():
    with pytest.raises(ConfigError, match="two member nodes"):
        cfg(member_nodes=1)


def test_empty_workload_allows_zero_member_nodes():
    c = cfg(member_nodes=0, workload={"providers": 0, "consumers": 0,
                                      "publishes_per_provider": 0,
                                      "selects_per_consumer": 0,
                                      "breaches_per_group": 0})
    assert c.workload.empty
    assert not c.workload.has_private


# -- faults -----------------------------------------------------------


def test_crash_requires_exactly_one_target_form():
    with pytest.raises(ConfigError, match="either a node or a proposer_of_height"):
        cfg(faults={"crashes": [{"at_ms": 5, "node": "v0", "proposer_of_height": 1}]})
    with pytest.raises(ConfigError, match="either a node or a proposer_of_height"):
        cfg(faults={"crashes": [{"at_ms": 5}]})


def test_crash_target_must_exist():
    with pytest.raises(ConfigError, match="not a node"):
        cfg(faults={"crashes": [{"at_ms": 5, "node": "v9"}]})


def test_crash_needs_at_ms():
    with pytest.raises(ConfigError, match="at_ms"):
        cfg(faults={"crashes": [{"node": "v0"}]})


def test_byzantine_must_name_a_validator():
    with pytest.raises(ConfigError, match="not a validator"):
        cfg(faults={"byzantine": [{"node": "m0", "strategy": "echo"}]})


def test_byzantine_strategy_checked():
    with pytest.raises(ConfigError, match="unknown byzantine strategy"):
        cfg(faults={"byzantine": [{"node": "v1", "strategy": "stall"}]})


def test_duplicate_byzantine_rejected():
    with pytest.raises(ConfigError, match="duplicate byzantine"):
        cfg(faults={"byzantine": [
            {"node": "v1", "strategy": "echo"},
            {"node": "v1", "strategy": "withhold"},
        ]})


def test_partition_validation():
    nodes = ["v0", "v1", "v2", "v3", "m0", "m1", "m2"]
    with pytest.raises(ConfigError, match="from_ms < to_ms"):
        cfg(faults={"partitions": [{"from_ms": 10, "to_ms": 10, "groups": [nodes[:4], nodes[4:]]}]})
    with pytest.raises(ConfigError, match="at least two groups"):
        cfg(faults={"partitions": [{"from_ms": 0, "to_ms": 10, "groups": [nodes]}]})
    with pytest.raises(ConfigError, match="appears in two partition groups"):
        cfg(faults={"partitions": [{"from_ms": 0, "to_ms": 10, "groups": [nodes, nodes]}]})
    with pytest.raises(ConfigError, match="cover every node"):
        cfg(faults={"partitions": [{"from_ms": 0, "to_ms": 10, "groups": [nodes[:3], nodes[3:6]]}]})


def test_valid_fault_plan_parses():
    c = cfg(faults={
        "crashes": [{"at_ms": 500, "proposer_of_height": 2}],
        "byzantine": [{"node": "v1", "strategy": "equivocate"}],
        "partitions": [{"from_ms": 0, "to_ms": 10,
                        "groups": [["v0", "v1"], ["v2", "v3", "m0", "m1", "m2"]]}],
    })
    assert c.faults.crashes[0].proposer_of_height == 2
    assert c.faults.byzantine[0].strategy == "equivocate"
    assert c.faults.partitions[0].groups == (("v0", "v1"), ("v2", "v3", "m0", "m1", "m2"))


# -- run section ------------------------------------------------------


def test_run_section_validation():
    with pytest.raises(ConfigError, match="unknown run keys"):
        cfg(run={"wall_ms": 5})
    with pytest.raises(ConfigError, match="max_virtual_ms must be positive"):
        cfg(run={"max_virtual_ms": 0})
    with pytest.raises(ConfigError, match="grace_ms"):
        cfg(run={"grace_ms": -1})
    with pytest.raises(ConfigError, match="target_heights"):
        cfg(run={"target_heights": 0})
    assert cfg(run={"target_heights": 3}).run.target_heights == 3


# -- YAML loading -----------------------------------------------------


def test_load_config_from_yaml(tmp_path):
    path = tmp_path / "scenario.yaml"
    path.write_text(
        "preset: smoke\n"
        "block_interval_ms: 750\n"
        "workload:\n"
        "  providers: 3\n"
    )
    c = load_config(str(path))
    assert c.block_interval_ms == 750
    assert c.workload.providers == 3
    assert c.workload.consumers == 2


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/scenario.yaml")


def test_load_config_bad_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("workload: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(str(path))


def test_load_config_empty_file_lacks_required_fields(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    with pytest.raises(ConfigError, match="validators must be an integer"):
        load_config(str(path))
