"""
Experiment protocols over the whole pipeline (dataset building, offline
and online evaluation, stream simulation, single-query L1 reports) and
the ``plansieve`` command line.
"""

import argparse
import logging
import math
import sys
import time
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd
import xarray as xr
from dask import delayed
from scipy import stats

from .baseline import confusion, train_baseline_dt
from .catalog import execute_query, true_cardinality
from .collector import SOURCES
from .config import config_hash
from .errors import (
    CapacityError,
    ConfigError,
    DegenerateCostError,
    PlanSieveError,
    SingleClassWarning,
)
from .estimators import EstimationContext, build_estimator
from .l1error import displaced_subplans, query_l1
from .model import predict
from .planspace import (
    LABELS,
    CardinalityAssignment,
    all_subplans,
    enumerate_subplans,
    evaluate_plans,
    infer_join_closure,
    label_from_p_error,
)
from .training import augment_permute, classify, make_example, split_queries
from .utils import derive_seed, progress_bar, provenance

logger = logging.getLogger(__name__)

CELLS = ["tp", "tn", "fp", "fn"]
L1_STATS = ["count", "mean", "variance", "min", "max", "skewness", "kurtosis"]
MIX_SOURCES = list(SOURCES) + ["true"]


@dataclass
class QueryAnalysis:
    """
    Everything the offline pipeline knows about one query: its subplans, the
    true and the default-estimated cardinalities, both plans and the label.
    """

    query: object
    graph: object
    by_k: Dict[int, list]
    truth: CardinalityAssignment
    est: CardinalityAssignment
    chosen_plan: object
    optimal_plan: object
    p_error: float
    label: str

    @property
    def truth_map(self):
        return dict(self.truth.values)


def analyze_query(query, catalog, default_estimator, subopt, left_deep=False):
    """
    Returns the QueryAnalysis of ``query``: oracle cardinalities, the default
    estimator's cardinalities, the plan each one leads to and the label.
    """
    graph = infer_join_closure(query)
    by_k = enumerate_subplans(graph)
    subplans = [s for k in sorted(by_k) for s in by_k[k]]
    truth = CardinalityAssignment.from_function(
        subplans, lambda s: true_cardinality(catalog, s), tag="true"
    )
    context = EstimationContext(query.id, dict(truth.values))
    est = CardinalityAssignment.from_function(
        subplans, lambda s: default_estimator(s, context), tag="estimated"
    )
    evaluation = evaluate_plans(graph, est, truth, left_deep=left_deep)
    return QueryAnalysis(
        query=query,
        graph=graph,
        by_k=by_k,
        truth=truth,
        est=est,
        chosen_plan=evaluation.chosen_plan,
        optimal_plan=evaluation.optimal_plan,
        p_error=evaluation.p_error,
        label=label_from_p_error(evaluation.p_error, subopt),
    )


def analyze_workload(spec, catalog, queries):
    """
    Returns the analyses of ``queries`` in order, skipping (with a log
    warning) queries whose optimal plan has zero cost.
    """
    default_estimator = build_estimator(spec.default_estimator, catalog)
    analyses = []
    for query in queries:
        try:
            analyses.append(
                analyze_query(query, catalog, default_estimator, spec.subopt(), spec.left_deep)
            )
        except DegenerateCostError as err:
            logger.warning("skipping query %s: %s", query.id, err)
    return analyses


#####################################################################


@dataclass
class DatasetBuild:
    examples: List = field(default_factory=list)
    analyses: List = field(default_factory=list)
    split: Dict[str, str] = field(default_factory=dict)
    class_balance: Dict[str, int] = field(default_factory=dict)

    def originals(self, split=None):
        return [
            e for e in self.examples if e.replica_id == 0 and (split is None or e.split == split)
        ]


def required_length(queries):
    """
    Returns the longest token sequence any of ``queries`` encodes to.
    """
    longest = 3
    for query in queries:
        by_k = enumerate_subplans(infer_join_closure(query))
        longest = max(longest, 2 * sum(len(v) for v in by_k.values()) + 3)
    return longest


def build_dataset(spec, catalog, queries, vocab, max_len, split=None, augment=True):
    """
    Returns a DatasetBuild: one labeled example per query (rho from the
    truth, rho_hat from the default estimator), a query-level train/test
    split, and augmentation replicas for training queries only.
    """
    analyses = analyze_workload(spec, catalog, queries)
    if split is None:
        split = split_queries([a.query.id for a in analyses], spec.train.train_fraction, spec.seed)
    examples = []
    for analysis in analyses:
        pairs, _ = query_l1(analysis.by_k, analysis.truth, analysis.est)
        part = split.get(analysis.query.id, "test")
        example = make_example(pairs, vocab, max_len, analysis.label, analysis.query.id, split=part)
        if part == "train" and augment and spec.train.replicas > 1:
            examples.extend(
                augment_permute(
                    example,
                    vocab,
                    spec.train.replicas,
                    spec.train.seed,
                    fixed_fraction=spec.train.fixed_fraction,
                    max_len=max_len,
                )
            )
        else:
            examples.append(example)

    balance = Counter(a.label for a in analyses)
    class_balance = {name: balance.get(name, 0) for name in LABELS}
    logger.info("dataset of %d queries, class balance %s", len(analyses), class_balance)
    if analyses and len(balance) < 2:
        warnings.warn(
            "every query is labeled {}".format(analyses[0].label), SingleClassWarning
        )
    return DatasetBuild(examples, analyses, split, class_balance)


#####################################################################


def _summary(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return [0.0] + [math.nan] * 6
    if values.size == 1:
        return [1.0, float(values[0]), math.nan, float(values[0]), float(values[0]), math.nan, math.nan]
    described = stats.describe(values)
    return [
        float(described.nobs),
        float(described.mean),
        float(described.variance),
        float(described.minmax[0]),
        float(described.minmax[1]),
        float(described.skewness),
        float(described.kurtosis),
    ]


def _report(matrices, l1_values, spec, attrs=None):
    """
    Returns an evaluation report Dataset with one confusion matrix per
    scenario and the distribution of the aggregate L1.
    """
    scenarios = list(matrices)
    counts = np.array(
        [[getattr(matrices[s], c) for c in CELLS] for s in scenarios], dtype=np.int64
    ).reshape(len(scenarios), len(CELLS))
    report = xr.Dataset(
        {
            "confusion": (("scenario", "cell"), counts),
            "accuracy": (("scenario",), np.array([matrices[s].accuracy for s in scenarios], dtype=np.float64)),
            "suboptimal_accuracy": (
                ("scenario",),
                np.array([matrices[s].suboptimal_accuracy for s in scenarios], dtype=np.float64),
            ),
            "l1_summary": (("stat",), np.array(_summary(l1_values), dtype=np.float64)),
        },
        coords={"scenario": scenarios, "cell": CELLS, "stat": L1_STATS},
    )
    report.attrs = {
        "config_hash": config_hash(spec),
        "c": float(spec.c),
        "eps": float(spec.eps),
        "left_deep": int(spec.left_deep),
        "estimator": spec.estimator.kind,
        "estimator_seed": int(spec.estimator.seed),
        "default_estimator_seed": int(spec.default_estimator.seed),
        "default_estimator_noise": float(spec.default_estimator.noise_sigma),
        "model_seed": int(spec.model.seed),
        "train_seed": int(spec.train.seed),
    }
    report.attrs.update(attrs or {})
    return report


@provenance("eval_offline")
def eval_offline(spec, model, build, baseline=None):
    """
    Returns the offline report of a trained model (and optionally the L1-only
    baseline tree) on the held-out original examples of a dataset build.
    """
    test = build.originals("test")
    labels = [e.label for e in test]
    started = time.perf_counter()
    predictions, _ = classify(model, test, spec.train.decision_threshold) if test else ([], [])
    elapsed = time.perf_counter() - started
    if test:
        logger.info("prediction overhead: %.3f ms per query", 1000.0 * elapsed / len(test))
    matrices = {"model": confusion(predictions, labels)}
    if baseline is not None:
        matrices["baseline_dt"] = confusion(baseline.predict([e.l1_aggregate for e in test]), labels)
    attrs = {"evaluated_queries": len(test)}
    if baseline is not None:
        attrs["baseline_depth"] = baseline.max_depth
    return _report(matrices, [e.l1_aggregate for e in test], spec, attrs)


def fit_baseline(spec, build):
    """
    Returns the L1-only decision tree fitted on the training queries.
    """
    train = build.originals("train")
    return train_baseline_dt(
        [e.l1_aggregate for e in train],
        [e.label for e in train],
        spec.baseline_depths,
        spec.baseline_folds,
        seed=spec.seed,
    )


@provenance("train_baseline")
def baseline_report(spec, build, tree):
    """
    Returns the report of a baseline tree on the training and the held-out
    queries.
    """
    train = build.originals("train")
    test = build.originals("test")
    matrices = {
        "baseline_dt_train": confusion(tree.predict([e.l1_aggregate for e in train]), [e.label for e in train]),
        "baseline_dt": confusion(tree.predict([e.l1_aggregate for e in test]), [e.label for e in test]),
    }
    return _report(matrices, [e.l1_aggregate for e in test], spec, {"baseline_depth": tree.max_depth})


#####################################################################


def mix_order(query_id, subplans, seed):
    """
    Returns the subplans in the seeded order in which they switch from
    collector values to true values as the mix fraction grows.
    """
    rng = np.random.default_rng(derive_seed("mix", seed, query_id))
    return [subplans[i] for i in rng.permutation(len(subplans))]


def collect_cardinalities(query, collector, estimator, catalog, truth=None, fraction=None, seed=0, graph=None):
    """
    Returns ``(values, sources)``: the cardinality used for every subplan of
    ``query`` and a count per source.  With ``fraction`` the first
    ceil(fraction * N) subplans of the seeded mix order take their true
    value; the rest, and all subplans without a fraction, come from the
    collector (cache hit or surrogate).
    """
    graph = graph or infer_join_closure(query)
    subplans = all_subplans(graph)
    truth_map = None
    if truth is not None:
        truth_map = dict(truth.values) if isinstance(truth, CardinalityAssignment) else dict(truth)
    context = EstimationContext(query.id, truth_map)
    if not hasattr(estimator, "estimate"):
        estimator = build_estimator(estimator, catalog)

    from_truth = set()
    if fraction is not None:
        if truth_map is None:
            raise ConfigError("mixing true cardinalities needs the truth")
        take = math.ceil(fraction * len(subplans))
        from_truth = {s.key for s in mix_order(query.id, subplans, seed)[:take]}

    values, sources = {}, Counter()
    for subplan in subplans:
        if subplan.key in from_truth:
            values[subplan.key] = truth_map[subplan.key]
            sources["true"] += 1
        else:
            found = collector.lookup(subplan, estimator, catalog, context)
            values[subplan.key] = found.value
            sources[found.source] += 1
    return values, sources


def _scenario_name(fraction):
    return "f={:.2f}".format(fraction)


def _eval_fraction(spec, model, vocab, catalog, analyses, collector, fraction):
    estimator = build_estimator(spec.estimator, catalog)
    predictions, labels, l1_values = [], [], []
    sources = Counter()
    for analysis in analyses:
        values, used = collect_cardinalities(
            analysis.query,
            collector,
            estimator,
            catalog,
            truth=analysis.truth,
            fraction=fraction,
            seed=spec.seed,
            graph=analysis.graph,
        )
        sources.update(used)
        result = predict(
            model,
            analysis.query,
            values,
            analysis.est,
            vocab,
            threshold=spec.train.decision_threshold,
            graph=analysis.graph,
        )
        predictions.append(result.label)
        labels.append(analysis.label)
        l1_values.append(result.report.aggregate)
    return confusion(predictions, labels), l1_values, sources


@progress_bar
def _eval_scenarios(spec, model, vocab, catalog, analyses, collector):
    tasks = [
        delayed(_eval_fraction)(spec, model, vocab, catalog, analyses, collector, f)
        for f in spec.mix_fractions
    ]
    return delayed(list)(tasks)


@provenance("eval_online")
def eval_online(spec, model, vocab, catalog, analyses, collector, quiet=True):
    """
    Returns the online report: for each mix fraction one confusion matrix of
    predictions made from collector values with that share of subplans
    replaced by true cardinalities.
    """
    model.eval()
    results = _eval_scenarios(spec, model, vocab, catalog, analyses, collector, quiet=quiet)
    matrices, l1_values, mix = {}, [], {}
    for fraction, (cm, l1s, sources) in zip(spec.mix_fractions, results):
        name = _scenario_name(fraction)
        matrices[name] = cm
        mix[name] = sources
        if fraction == spec.mix_fractions[0]:
            l1_values = l1s
    report = _report(matrices, l1_values, spec, {"evaluated_queries": len(analyses)})
    shares = np.array(
        [[mix[s].get(src, 0) for src in MIX_SOURCES] for s in matrices], dtype=np.int64
    ).reshape(len(matrices), len(MIX_SOURCES))
    report["source_counts"] = (("scenario", "source"), shares)
    report = report.assign_coords(source=MIX_SOURCES)
    return report


@provenance("simulate_stream")
def stream_report(spec, matrices, l1_values, frame):
    report = _report(matrices, l1_values, spec, {"evaluated_queries": len(frame)})
    window = spec.stream_window
    if len(frame):
        rolling = frame["correct"].astype(float).rolling(window, min_periods=min(window, len(frame))).mean()
        rolling = rolling.dropna()
        ends = rolling.index.to_numpy() + 1
        accuracies = rolling.to_numpy()
        sums = frame[MIX_SOURCES].rolling(window, min_periods=min(window, len(frame))).sum().dropna()
        shares = sums.div(sums.sum(axis=1).replace(0, 1), axis=0).to_numpy()
    else:
        ends = np.zeros(0, dtype=np.int64)
        accuracies = np.zeros(0)
        shares = np.zeros((0, len(MIX_SOURCES)))
    report = report.assign_coords(window=ends.astype(np.int64), source=MIX_SOURCES)
    report["window_accuracy"] = (("window",), accuracies.astype(np.float64))
    report["window_source_share"] = (("window", "source"), shares.astype(np.float64))
    report.attrs["stream_window"] = int(window)
    return report


def simulate_stream(spec, model, vocab, catalog, analyses, collector):
    """
    Processes queries in order: predict from the current cache (surrogates on
    a miss), then execute the plan the optimizer picked and ingest its log.
    Returns ``(report, collector)``; the collector is updated in place.
    """
    estimator = build_estimator(spec.estimator, catalog)
    rows, predictions, labels, l1_values = [], [], [], []
    for analysis in analyses:
        values, sources = collect_cardinalities(
            analysis.query, collector, estimator, catalog, truth=analysis.truth, graph=analysis.graph
        )
        result = predict(
            model,
            analysis.query,
            values,
            analysis.est,
            vocab,
            threshold=spec.train.decision_threshold,
            graph=analysis.graph,
        )
        predictions.append(result.label)
        labels.append(analysis.label)
        l1_values.append(result.report.aggregate)
        row = {"query_id": analysis.query.id, "correct": result.label == analysis.label}
        row.update({src: sources.get(src, 0) for src in MIX_SOURCES})
        rows.append(row)
        collector.ingest_log(execute_query(catalog, analysis.chosen_plan, analysis.query.id))
    frame = pd.DataFrame(rows, columns=["query_id", "correct"] + MIX_SOURCES)
    matrices = {"stream": confusion(predictions, labels)}
    return stream_report(spec, matrices, l1_values, frame), collector


#####################################################################


def l1_report(analysis, top=5):
    """
    Returns the text L1 report of one query: both orderings per join size,
    the per-size and aggregate L1, and the most displaced subplans.
    """
    pairs, report = query_l1(analysis.by_k, analysis.truth, analysis.est)
    out = ["query {}  label {}  p_error {:.6g}".format(analysis.query.id, analysis.label, analysis.p_error)]
    for pair in pairs:
        out.append("")
        out.append("k={}  N_k={}  L1_k={}".format(pair.k, pair.n, report.per_k[pair.k]))
        width = max(len(str(s)) for s in pair.subplans)
        for subplan, r, r_hat in zip(pair.subplans, pair.rho, pair.rho_hat):
            out.append(
                "  {}  rho={:>3d}  rho_hat={:>3d}  true={}  est={:.6g}".format(
                    str(subplan).ljust(width), r, r_hat, analysis.truth[subplan], analysis.est[subplan]
                )
            )
    out.append("")
    out.append("aggregate L1 {:.6g} of at most {:.6g}".format(report.aggregate, report.scale))
    displaced = displaced_subplans(pairs, top)
    if displaced:
        out.append("most displaced: " + ", ".join("{} ({})".format(s, d) for s, d in displaced))
    return "\n".join(out) + "\n"


#####################################################################
# command line


EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(parser):
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--config", default=None, help="experiment config (YAML)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")


def build_parser():
    parser = _Parser(prog="plansieve", description="Sub-optimal plan detection laboratory.")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    cmd = commands.add_parser("gen-catalog", help="generate a catalog and summarize it")
    _common(cmd)
    cmd.add_argument("--schema", default=None)

    cmd = commands.add_parser("gen-workload", help="scale template queries into a workload")
    _common(cmd)
    cmd.add_argument("--templates", default=None)
    cmd.add_argument("--target", type=int, default=None)

    cmd = commands.add_parser("build-dataset", help="label a workload and write its examples")
    _common(cmd)
    cmd.add_argument("--workload", default=None)

    cmd = commands.add_parser("train", help="train the classifier")
    _common(cmd)
    cmd.add_argument("--workload", default=None)

    cmd = commands.add_parser("train-baseline", help="train the L1-only decision tree")
    _common(cmd)
    cmd.add_argument("--workload", default=None)

    cmd = commands.add_parser("eval-offline", help="evaluate a checkpoint on held-out queries")
    _common(cmd)
    cmd.add_argument("--checkpoint", default=None)
    cmd.add_argument("--workload", default=None, help="evaluate on another workload instead")

    cmd = commands.add_parser("eval-online", help="evaluate with surrogate/true mixing")
    _common(cmd)
    cmd.add_argument("--checkpoint", default=None)
    cmd.add_argument("--cache", default=None)

    cmd = commands.add_parser("simulate-stream", help="run queries sequentially through the cache")
    _common(cmd)
    cmd.add_argument("--checkpoint", default=None)
    cmd.add_argument("--cache", default=None)

    cmd = commands.add_parser("l1", help="L1 report of a single query")
    _common(cmd)
    cmd.add_argument("--query", required=True)
    cmd.add_argument("--workload", default=None)
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else (logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def run(args):
    """
    Runs one parsed command and returns its exit code.
    """
    from .core import Laboratory

    lab = Laboratory.from_config(args.config, seed=args.seed, out_dir=args.out)
    lab.quiet = args.quiet
    command = args.command
    if getattr(args, "workload", None) and command != "eval-offline":
        lab.spec.workload = args.workload

    if command == "gen-catalog":
        if args.schema:
            lab.spec.catalog_spec = args.schema
        path = lab.write_catalog_summary()
        print("Saved! Catalog summary written to " + path)
    elif command == "gen-workload":
        if args.templates:
            lab.spec.templates = args.templates
        if args.target:
            lab.spec.target_count = args.target
        workload = lab.scale_workload()
        print("Saved! {} queries written to {}".format(len(workload), lab.path("workload.jsonl")))
        if not workload.complete:
            return EXIT_BUDGET
    elif command == "build-dataset":
        lab.build_dataset()
        print("Saved! Dataset written to " + lab.path("dataset.jsonl"))
    elif command == "train":
        lab.train()
        print("Saved! Checkpoint written to " + lab.path("model.psv1"))
    elif command == "train-baseline":
        _, report = lab.train_baseline()
        print(lab.export(report, "baseline")[0])
    elif command == "eval-offline":
        lab.load_model(args.checkpoint)
        report = lab.eval_offline(workload=args.workload)
        print(lab.export(report, "offline")[0])
    elif command == "eval-online":
        lab.load_model(args.checkpoint)
        lab.load_cache(args.cache)
        report = lab.eval_online()
        print(lab.export(report, "online")[0])
    elif command == "simulate-stream":
        lab.load_model(args.checkpoint)
        lab.load_cache(args.cache)
        report = lab.simulate_stream()
        print(lab.export(report, "stream")[0])
    elif command == "l1":
        sys.stdout.write(lab.l1(args.query))
    return EXIT_OK


def main(argv=None):
    """
    Entry point of the ``plansieve`` command.  Exit codes: 0 success, 1 usage
    error, 2 data error, 3 budget or validation failure.
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        sys.stderr.write("usage error: {}\n".format(err))
        return EXIT_USAGE
    if not args.command:
        sys.stderr.write("usage error: a command is required\n")
        return EXIT_USAGE
    _configure_logging(args)
    try:
        return run(args)
    except (UsageError, ConfigError) as err:
        sys.stderr.write("usage error: {}\n".format(err))
        return EXIT_USAGE
    except CapacityError as err:
        sys.stderr.write("validation failure: {}\n".format(err))
        return EXIT_BUDGET
    except (PlanSieveError, FileNotFoundError, ValueError, KeyError) as err:
        sys.stderr.write("data error: {}\n".format(err))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
