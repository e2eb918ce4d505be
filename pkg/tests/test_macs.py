import numpy as np
import pytest

from attnssm.config import ModelConfig, preset
from attnssm.macs import instrumented_ssm_stage, network_macs, scan_cost_report, ssm_stage_macs
from attnssm.tensor import ConfigError


def test_components_by_hand():
    t = ssm_stage_macs(L=10, E=4, d=2, directions=1)
    assert t["x_proj"] == 10 * 4 * 8
    assert t["discretize"] == t["recurrence"] == 2 * 10 * 4 * 2
    assert t["readout"] == 10 * 4 * 2 + 10 * 4
    assert t["total"] == sum(v for k, v in t.items() if k != "total")


@pytest.mark.parametrize("n", [1, 2, 4])
def test_directions_scale_linearly(n):
    assert ssm_stage_macs(100, 8, 4, n)["total"] == n * ssm_stage_macs(100, 8, 4, 1)["total"]


def test_semantic_versus_single_within_one_percent():
    rep = scan_cost_report(preset("v2-toy"), 4, 64, 64)
    assert rep["ratio_multi_vs_single"] == pytest.approx(4.0, rel=0.01)
    assert rep["ratio_semantic_vs_single"] == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("n,semantic", [(1, False), (2, False), (4, False), (1, True)])
def test_instrumented_counter_agrees(n, semantic):
    got = instrumented_ssm_stage(6, 5, 8, 4, n, semantic=semantic)
    assert got["macs:ssm"] == ssm_stage_macs(30, 8, 4, n, semantic)["total"]
    assert got["scan_calls"] == n


def test_invalid_directions():
    with pytest.raises(ConfigError):
        ssm_stage_macs(10, 4, 2, 3)
    with pytest.raises(ConfigError):
        ssm_stage_macs(10, 4, 2, 2, semantic=True)


def test_network_table_sums_to_total():
    t = network_macs(ModelConfig(), 16, 16)
    assert t["total"] == sum(v for k, v in t.items() if k != "total")
    assert all(v > 0 for v in t.values())
