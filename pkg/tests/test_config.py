import pytest
from hypothesis import given, strategies as st

from ciguard.config import ConfigError, RunConfig, load_config, parse_config
from ciguard.dtree import TreeParams
from ciguard.pipeline import Policy


def test_defaults():
    cfg = RunConfig()
    pc = cfg.pipeline()
    assert (pc.global_support, pc.local_support, pc.target_error_rate) == (0.10, 0.10, 0.30)
    assert pc.policy is Policy.CONSERVATIVE
    assert cfg.tree == TreeParams()
    assert "*.rb" in cfg.filter_patterns and "Gemfile" in cfg.filter_patterns


def test_load_none_is_default():
    assert load_config(None) == RunConfig()


def test_toml_round_trip():
    cfg = RunConfig(policy="either", budget=3, seed=7, global_support=0.125, tree=TreeParams(max_depth=5))
    assert parse_config(cfg.to_toml()) == cfg


@given(
    st.floats(0.01, 1.0),
    st.floats(0.01, 0.99),
    st.integers(0, 50),
    st.sampled_from([p.value for p in Policy]),
)
def test_toml_round_trip_property(support, target, budget, policy):
    cfg = RunConfig(global_support=support, target_error_rate=target, budget=budget, policy=policy)
    again = parse_config(cfg.to_toml())
    assert again == cfg and again.digest() == cfg.digest()


def test_partial_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('policy = "global_priority"\n[tree]\nmax_depth = 3\n')
    cfg = load_config(p)
    assert cfg.policy == "global_priority" and cfg.tree.max_depth == 3 and cfg.tree.min_leaf == 2


def test_digest_changes():
    assert RunConfig().digest() != RunConfig(budget=9).digest()
    assert RunConfig().digest() == RunConfig().digest()


@pytest.mark.parametrize(
    "text,match",
    [
        ("nonsense = 1", "unknown config key"),
        ("[tree]\nwidth = 2", "unknown tree key"),
        ('policy = "sometimes"', "unknown policy"),
        ("global_support = 0.0", "global_support"),
        ("target_error_rate = 1.0", "target_error_rate"),
        ("budget = -1", "budget"),
        ("filter_patterns = []", "filter_patterns"),
        ("budget = ", "invalid TOML"),
    ],
)
def test_rejects(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)
