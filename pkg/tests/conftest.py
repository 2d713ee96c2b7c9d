import pytest

from plansieve.catalog import SchemaSpec, generate_catalog
from plansieve.config import ExperimentSpec, ModelConfig, TrainConfig
from plansieve.planspace import JoinEdge, Query, Selection

S3_SCHEMA = {
    "seed": 42,
    "tables": [
        {
            "name": "A",
            "rows": 100,
            "columns": [
                {"name": "id", "kind": "key"},
                {"name": "x", "kind": "int", "lo": 1, "hi": 50},
            ],
        },
        {
            "name": "B",
            "rows": 300,
            "columns": [
                {"name": "id", "kind": "key"},
                {"name": "aid", "kind": "fk", "target": "A.id"},
                {"name": "y", "kind": "int", "lo": 1, "hi": 20},
            ],
        },
        {
            "name": "C",
            "rows": 200,
            "columns": [
                {"name": "id", "kind": "key"},
                {"name": "aid", "kind": "fk", "target": "A.id"},
                {"name": "z", "kind": "int", "lo": 1, "hi": 30},
            ],
        },
    ],
}

AB = JoinEdge("A", "id", "B", "aid")
AC = JoinEdge("A", "id", "C", "aid")


@pytest.fixture
def s3_schema():
    return SchemaSpec.from_dict(S3_SCHEMA)


@pytest.fixture(scope="session")
def s3_catalog():
    return generate_catalog(SchemaSpec.from_dict(S3_SCHEMA))


@pytest.fixture
def s3_query():
    return Query("s3", ("A", "B", "C"), (AB, AC), (Selection("A", "x", "<", 30),))


@pytest.fixture
def s3_templates():
    return [
        Query("t1", ("A", "B"), (AB,), (Selection("A", "x", "<", 40), Selection("B", "y", ">", 3))),
        Query("t2", ("A", "C"), (AC,), (Selection("C", "z", "<=", 20),)),
        Query("t3", ("A", "B", "C"), (AB, AC), (Selection("A", "x", ">=", 10),)),
    ]


@pytest.fixture
def tiny_model_config():
    return ModelConfig(
        layers=1,
        heads=2,
        embed_dim=8,
        max_len=16,
        vocab_size=12,
        mlp_hidden=8,
        dropout_rate=0.0,
        seed=0,
    )


@pytest.fixture
def tiny_spec(tiny_model_config):
    return ExperimentSpec(
        model=tiny_model_config,
        train=TrainConfig(epochs=3, batch_size=16, replicas=2),
        mix_fractions=[0.0, 0.5, 1.0],
        baseline_depths=[1, 2],
        baseline_folds=2,
        stream_window=5,
    ).validate()
