from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conflux.adversary import AttackPlan
from conflux.config import ConfigParseError, format_sim_config, parse_attack_plan, parse_sim_config
from conflux.errors import ConfigInvalid
from conflux.simnet import SimConfig

SCENARIO = """
# three nodes on an uneven network
num_nodes = 3
lambda = 0.5        # blocks per second
delay_model = matrix
d = 2
delay_matrix = 0,1,2; 1,0,1; 2,1,0
; full-line comments may also start with a semicolon
rule = ghost
"""


def test_parse_scenario():
    cfg = parse_sim_config(SCENARIO)
    assert cfg.num_nodes == 3 and cfg.lambda_ == 0.5 and cfg.rule == "ghost"
    assert cfg.delay_matrix == ((0.0, 1.0, 2.0), (1.0, 0.0, 1.0), (2.0, 1.0, 0.0))
    assert cfg.seed == 0  # unspecified keys keep their defaults


def test_empty_file_is_defaults():
    assert parse_sim_config("") == SimConfig()


@pytest.mark.parametrize(
    "text, line",
    [
        ("num_nodes = 3\nthis is not a pair\n", 2),
        ("num_nodes = 3\nseed = 1\nnum_nodes = 4\n", 3),
    ],
)
def test_malformed_reports_line(text, line):
    with pytest.raises(ConfigParseError, match=f"line {line}"):
        parse_sim_config(text, "x.cfg")


def test_section_headers_rejected():
    with pytest.raises(ConfigParseError):
        parse_sim_config("[other]\nseed = 1\n")


@pytest.mark.parametrize("text", ["nodes = 3", "lambda_ = 1", "seed = many", "num_nodes = 0", "delay_matrix = 0,x"])
def test_invalid_values(text):
    with pytest.raises(ConfigInvalid) as err:
        parse_sim_config(text)
    assert not isinstance(err.value, ConfigParseError)


def test_plan():
    plan = parse_attack_plan("strategy = withhold_release\ntarget = none\nwithhold_horizon = 30\n")
    assert plan == AttackPlan("withhold_release", None, 30.0, "heavier")
    assert parse_attack_plan("target = 42").target == 42
    with pytest.raises(ConfigInvalid):
        parse_attack_plan("strategy = selfish")
    with pytest.raises(ConfigInvalid):
        parse_attack_plan("victim = 3")


configs = st.builds(
    SimConfig,
    num_nodes=st.integers(1, 50),
    lambda_=st.floats(0.01, 10.0),
    attacker_q=st.floats(0.0, 0.9),
    delay_model=st.sampled_from(["constant", "uniform"]),
    d=st.floats(0.0, 60.0),
    duration=st.floats(1.0, 1e5),
    seed=st.integers(0, 2**31),
    rule=st.sampled_from(["conflux", "ghost", "longest"]),
    confirm_tolerance=st.floats(1e-12, 0.5),
)


@settings(max_examples=100, deadline=None)
@given(configs)
def test_format_roundtrip(cfg):
    assert parse_sim_config(format_sim_config(cfg)) == cfg


def test_format_roundtrip_matrix():
    cfg = parse_sim_config(SCENARIO)
    assert parse_sim_config(format_sim_config(cfg)) == cfg
