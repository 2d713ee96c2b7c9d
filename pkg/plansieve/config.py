"""
Configuration objects for every stage of the laboratory.

All of them are ``param.Parameterized`` classes, so bounds and choices are
checked when a value is assigned.  Cross-field rules live in ``validate``.
"""

import hashlib
import json
import math

import param

from .errors import ConfigError


class SubOptConfig(param.Parameterized):
    """
    Threshold that turns a P-error into an optimal / sub-optimal label.
    """

    c = param.Number(default=1.0, bounds=(1, None), doc="P-error ratio threshold.")
    eps = param.Number(
        default=1e-9, bounds=(0, None), doc="Relative tolerance on the threshold."
    )


class EstimatorSpec(param.Parameterized):
    """
    Describes a cardinality estimator: the third-party surrogate estimator of
    the collector, or the optimizer's own "system default" estimator.
    """

    kind = param.ObjectSelector(
        default="independence",
        objects=["independence", "rand_est", "reversed_tc", "ensemble"],
    )
    seed = param.Integer(default=0, bounds=(0, None))
    noise_sigma = param.Number(
        default=0.0,
        bounds=(0, None),
        doc="Multiplies each estimate by exp(N(0, sigma)), seeded per subplan.",
    )
    rand_low = param.Integer(
        default=1, bounds=(0, None), doc="Lower bound of rand_est draws."
    )
    members = param.List(default=[], doc="Member specs of an ensemble estimator.")

    def validate(self):
        if self.kind == "ensemble":
            if not self.members:
                raise ConfigError("ensemble estimator needs at least one member")
            for member in self.members:
                if not isinstance(member, EstimatorSpec):
                    raise ConfigError("ensemble members must be EstimatorSpec objects")
                if member.kind == "ensemble":
                    raise ConfigError("ensembles cannot be nested")
                member.validate()
        return self


class CollectorConfig(param.Parameterized):
    """
    How the cardinality collector folds a new observation into a cache entry.
    """

    policy = param.ObjectSelector(default="mean", objects=["mean", "recency"])
    alpha = param.Number(
        default=0.25,
        bounds=(0, 1),
        inclusive_bounds=(False, True),
        doc="Weight of the newest observation under the recency policy.",
    )


_MODEL_PRESETS = {
    "stats_ceb": dict(layers=6, heads=8, embed_dim=128, max_len=27),
    "job_light": dict(layers=4, heads=8, embed_dim=64, max_len=23),
}


class ModelConfig(param.Parameterized):
    """
    Shape of the transformer + MLP classifier.
    """

    layers = param.Integer(default=2, bounds=(1, None))
    heads = param.Integer(default=4, bounds=(1, None))
    embed_dim = param.Integer(default=32, bounds=(1, None))
    max_len = param.Integer(default=23, bounds=(3, None))
    vocab_size = param.Integer(
        default=68, bounds=(5, None), doc="Rows of the token embedding table."
    )
    mlp_hidden = param.Integer(default=32, bounds=(1, None))
    ffn_multiplier = param.Integer(default=4, bounds=(1, None))
    dropout_rate = param.Number(default=0.1, bounds=(0, 1), inclusive_bounds=(True, False))
    seed = param.Integer(default=0, bounds=(0, None))

    @classmethod
    def preset(cls, name, **overrides):
        """
        Returns one of the shipped configurations, "stats_ceb" or "job_light".
        """
        if name not in _MODEL_PRESETS:
            raise ConfigError(
                "invalid model preset. expected one of the following: %s"
                % sorted(_MODEL_PRESETS)
            )
        values = dict(_MODEL_PRESETS[name])
        values.update(overrides)
        return cls(**values).validate()

    @property
    def head_dim(self):
        return self.embed_dim // self.heads

    def validate(self):
        if self.embed_dim % self.heads:
            raise ConfigError(
                "embed_dim {} is not divisible by heads {}".format(
                    self.embed_dim, self.heads
                )
            )
        return self


class TrainConfig(param.Parameterized):
    """
    Optimizer, schedule, split and augmentation settings for training.
    """

    epochs = param.Integer(default=30, bounds=(1, None))
    batch_size = param.Integer(default=32, bounds=(1, None))
    learning_rate = param.Number(default=3e-3, bounds=(0, None), doc="Peak rate.")
    weight_decay = param.Number(default=0.01, bounds=(0, None))
    pct_start = param.Number(
        default=0.3,
        bounds=(0, 1),
        inclusive_bounds=(False, False),
        doc="Fraction of steps spent warming up to the peak rate.",
    )
    anneal_strategy = param.ObjectSelector(
        default="cos", objects=["cos", "linear"], doc="Shape of the decay after warmup."
    )
    train_fraction = param.Number(
        default=0.70, bounds=(0, 1), inclusive_bounds=(False, False)
    )
    replicas = param.Integer(
        default=4, bounds=(0, None), doc="Augmentation replicas per training query."
    )
    fixed_fraction = param.Number(
        default=0.5,
        bounds=(0, 1),
        doc="Share of each k-group, rounded up, whose positions stay fixed.",
    )
    decision_threshold = param.Number(default=0.5, bounds=(0, 1))
    deterministic = param.Boolean(
        default=True, doc="Single-threaded reference path with bit-stable results."
    )
    seed = param.Integer(default=0, bounds=(0, None))


class MutationPolicy(param.Parameterized):
    """
    Per-slot mutation probabilities used by the workload generator.
    """

    keep = param.Number(default=0.4, bounds=(0, 1))
    revalue = param.Number(default=0.4, bounds=(0, 1))
    drop = param.Number(default=0.2, bounds=(0, 1))
    value_source = param.ObjectSelector(
        default="sample", objects=["sample", "range", "out_of_domain"]
    )
    ops = param.List(default=["=", "<", ">", "<=", ">="])
    modify_joins = param.Boolean(default=False)

    def validate(self):
        if not math.isclose(self.keep + self.revalue + self.drop, 1.0, abs_tol=1e-9):
            raise ConfigError("keep + revalue + drop must sum to 1")
        unknown = set(self.ops) - {"=", "<", ">", "<=", ">="}
        if unknown or not self.ops:
            raise ConfigError(
                "invalid comparison ops. expected a subset of the following: %s"
                % ["=", "<", ">", "<=", ">="]
            )
        return self


class ExperimentSpec(param.Parameterized):
    """
    Everything one experiment needs: inputs, estimators, model and training
    settings, mixing scenarios and where to write results.
    """

    catalog_spec = param.String(default=None, allow_None=True)
    workload = param.String(default=None, allow_None=True, doc="Workload file.")
    templates = param.String(
        default=None, allow_None=True, doc="Template workload for scaling."
    )
    target_count = param.Integer(default=200, bounds=(1, None))
    domain_store = param.String(default=None, allow_None=True)
    mutation = param.ClassSelector(class_=MutationPolicy, default=MutationPolicy())
    estimator = param.ClassSelector(
        class_=EstimatorSpec, default=EstimatorSpec(kind="independence", seed=1)
    )
    default_estimator = param.ClassSelector(
        class_=EstimatorSpec,
        default=EstimatorSpec(kind="independence", seed=0, noise_sigma=1.0),
    )
    collector = param.ClassSelector(class_=CollectorConfig, default=CollectorConfig())
    mix_fractions = param.List(default=[0.0, 0.25, 0.5, 0.75, 1.0])
    model_preset = param.String(default=None, allow_None=True)
    model = param.ClassSelector(class_=ModelConfig, default=ModelConfig())
    train = param.ClassSelector(class_=TrainConfig, default=TrainConfig())
    c = param.Number(default=1.0, bounds=(1, None))
    eps = param.Number(default=1e-9, bounds=(0, None))
    left_deep = param.Boolean(default=False)
    baseline_depths = param.List(default=[1, 2, 3, 4, 5, 6, 8])
    baseline_folds = param.Integer(default=5, bounds=(2, None))
    stream_window = param.Integer(default=20, bounds=(1, None))
    seed = param.Integer(default=0, bounds=(0, None))
    out_dir = param.String(default="plansieve_out")

    def subopt(self):
        return SubOptConfig(c=self.c, eps=self.eps)

    def apply_seed(self, seed):
        """
        Derives every component seed from one master seed.  The surrogate
        estimator always gets a different seed than the system default one.
        """
        self.seed = seed
        self.model.seed = seed
        self.train.seed = seed
        self.default_estimator.seed = 2 * seed
        self.estimator.seed = 2 * seed + 1
        for offset, member in enumerate(self.estimator.members):
            member.seed = 2 * seed + 3 + 2 * offset
        return self

    def validate(self):
        fractions = list(self.mix_fractions)
        if any(f < 0 or f > 1 for f in fractions):
            raise ConfigError("mix fractions must lie in [0, 1]")
        if fractions != sorted(fractions):
            raise ConfigError("mix fractions must be sorted ascending")
        if self.estimator is self.default_estimator:
            raise ConfigError("surrogate and default estimators must be distinct objects")
        if (
            self.estimator.kind == self.default_estimator.kind
            and self.estimator.seed == self.default_estimator.seed
        ):
            raise ConfigError("surrogate and default estimators must use distinct seeds")
        self.estimator.validate()
        self.default_estimator.validate()
        self.mutation.validate()
        self.model.validate()
        return self


_NESTED = {
    "mutation": MutationPolicy,
    "estimator": EstimatorSpec,
    "default_estimator": EstimatorSpec,
    "collector": CollectorConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}


def to_dict(obj):
    """
    Returns the parameter values of a Parameterized object as plain data,
    recursing into nested configuration objects.
    """
    values = {}
    for name, value in obj.param.values().items():
        if name == "name":
            continue
        if isinstance(value, param.Parameterized):
            value = to_dict(value)
        elif isinstance(value, list):
            value = [to_dict(v) if isinstance(v, param.Parameterized) else v for v in value]
        values[name] = value
    return values


def _estimator_from_dict(mapping):
    mapping = dict(mapping)
    members = [_estimator_from_dict(m) for m in mapping.pop("members", [])]
    return EstimatorSpec(members=members, **mapping)


def experiment_from_dict(mapping):
    """
    Builds an ExperimentSpec from a nested mapping such as a parsed YAML file.
    """
    mapping = dict(mapping or {})
    kwargs = {}
    for key, cls in _NESTED.items():
        if key in mapping:
            nested = mapping.pop(key) or {}
            if cls is EstimatorSpec:
                kwargs[key] = _estimator_from_dict(nested)
            else:
                kwargs[key] = cls(**nested)
    known = set(ExperimentSpec.param.values())
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(
            "invalid experiment keys %s. expected some of the following: %s"
            % (unknown, sorted(known - {"name"}))
        )
    if "mix_fractions" in mapping:
        mapping["mix_fractions"] = [float(f) for f in mapping["mix_fractions"]]
    kwargs.update(mapping)
    spec = ExperimentSpec(**kwargs)
    if spec.model_preset:
        overrides = {
            k: v for k, v in to_dict(spec.model).items() if k in ("vocab_size", "seed")
        }
        spec.model = ModelConfig.preset(spec.model_preset, **overrides)
    return spec


def config_hash(obj, exclude=("out_dir",)):
    """
    Returns a short sha256 digest of the canonical JSON form of a configuration.
    Keys in ``exclude`` do not change the result.
    """
    values = {k: v for k, v in to_dict(obj).items() if k not in exclude}
    text = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
