import pytest

from plansieve.config import (
    EstimatorSpec,
    ExperimentSpec,
    ModelConfig,
    config_hash,
    experiment_from_dict,
    to_dict,
)
from plansieve.errors import ConfigError


def test_to_dict_recurses_into_nested_configs():
    spec = ExperimentSpec(
        estimator=EstimatorSpec(
            kind="ensemble", members=[EstimatorSpec(kind="rand_est", seed=3)], seed=5
        )
    )
    values = to_dict(spec)
    assert "name" not in values
    assert values["model"] == to_dict(spec.model)
    assert values["model"]["embed_dim"] == 32
    assert values["estimator"]["members"] == [to_dict(EstimatorSpec(kind="rand_est", seed=3))]
    assert values["mutation"]["value_source"] == "sample"


def test_experiment_round_trips_through_a_mapping():
    spec = ExperimentSpec(target_count=12, model=ModelConfig(heads=2, embed_dim=8))
    rebuilt = experiment_from_dict(to_dict(spec))
    assert to_dict(rebuilt) == to_dict(spec)
    assert config_hash(rebuilt) == config_hash(spec)


def test_unknown_experiment_keys_are_rejected():
    with pytest.raises(ConfigError):
        experiment_from_dict({"target_cnt": 3})


def test_config_hash_ignores_the_output_directory():
    first = ExperimentSpec(out_dir="a")
    assert config_hash(first) == config_hash(ExperimentSpec(out_dir="b"))
    assert config_hash(first) != config_hash(ExperimentSpec(out_dir="a", seed=1))


def test_preset_keeps_seed_override():
    spec = experiment_from_dict({"model_preset": "job_light", "model": {"seed": 4}})
    assert spec.model.embed_dim == 64
    assert spec.model.max_len == 23
    assert spec.model.seed == 4
