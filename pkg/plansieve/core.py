import logging
import os

import pandas as pd

from . import harness
from .catalog import generate_catalog
from .collector import CardinalityCollector
from .config import ExperimentSpec, ModelConfig, to_dict
from .data_export import write_cache, write_dataset, write_history, write_report, write_workload
from .data_loaders import read_cache, read_config, read_domain_store, read_schema, read_workload
from .errors import CapacityError, ConfigError, UnknownReferenceError
from .featurize import Vocabulary, vocab_for_catalog
from .model import load_checkpoint, save_checkpoint
from .planspace import all_subplans, infer_join_closure
from .training import train
from .workloadgen import scale_workload

logger = logging.getLogger(__name__)


class Laboratory(object):
    """
    The main control center of the library.  Holds one experiment's spec
    and the artifacts each stage produces: generate the catalog, scale a
    workload, build the dataset, train, evaluate and export reports.
    Stages run on demand when a later stage needs their output.
    """

    def __init__(self, spec=None):
        self.spec = (spec or ExperimentSpec()).validate()
        self.quiet = True
        self._catalog = None
        self._queries = None
        self._vocab = None
        self.build = None
        self.model = None
        self.history = None
        self.baseline = None
        self.collector = None

    @classmethod
    def from_config(cls, path=None, seed=None, out_dir=None):
        """
        Returns a Laboratory for the experiment config at ``path`` (defaults
        when None), with the master seed and output directory overridden
        when given.
        """
        spec = read_config(path) if path else ExperimentSpec()
        if seed is not None:
            spec.apply_seed(seed)
        if out_dir is not None:
            spec.out_dir = out_dir
        return cls(spec)

    def path(self, name):
        return os.path.join(self.spec.out_dir, name)

    # === Inputs ======================================
    @property
    def catalog(self):
        if self._catalog is None:
            self._catalog = generate_catalog(read_schema(self.spec.catalog_spec))
        return self._catalog

    @property
    def queries(self):
        if self._queries is None:
            source = self.spec.workload
            if source is None and os.path.exists(self.path("workload.jsonl")):
                source = self.path("workload.jsonl")
            if source is None:
                raise ConfigError("no workload given and none generated yet")
            self._queries = read_workload(source)
        return self._queries

    @property
    def vocab(self):
        if self._vocab is None:
            observed = []
            if len(self.catalog.table_names) > 12:
                observed = sorted(
                    {s.key for q in self.queries for s in all_subplans(infer_join_closure(q))}
                )
            self._vocab = vocab_for_catalog(self.catalog, observed)
        return self._vocab

    def write_catalog_summary(self):
        """
        Writes one row per table (rows, and distinct values per column) and
        returns the path.
        """
        catalog = self.catalog
        rows = []
        for table in catalog.table_names:
            for column in catalog.column_names(table):
                rows.append(
                    {
                        "table": table,
                        "rows": catalog.row_count(table),
                        "column": column,
                        "distinct": catalog.distinct_count(table, column),
                    }
                )
        os.makedirs(self.spec.out_dir, exist_ok=True)
        path = self.path("catalog_summary.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(pd.DataFrame(rows).to_string(index=False))
            f.write("\n")
        return path

    # === Workload ====================================
    def scale_workload(self):
        """
        Scales the template workload to ``target_count`` validated queries,
        labels them for the class balance and writes workload and domains.
        """
        templates = read_workload(self.spec.templates)
        store_path = self.spec.domain_store or self.path("domains.json")
        store = read_domain_store(store_path)
        default_estimator = harness.build_estimator(self.spec.default_estimator, self.catalog)

        def labeler(query):
            return harness.analyze_query(
                query, self.catalog, default_estimator, self.spec.subopt(), self.spec.left_deep
            ).label

        workload = scale_workload(
            templates,
            self.catalog,
            self.spec.target_count,
            self.spec.seed,
            policy=self.spec.mutation,
            store=store,
            labeler=labeler,
        )
        write_workload(workload.queries, self.path("workload.jsonl"))
        store.save(store_path)
        self._queries = workload.queries
        return workload

    # === Dataset and training ========================
    def model_config(self, queries=None):
        """
        Returns the model config sized for the vocabulary and the workload.
        Without a preset, max_len grows to fit the longest query.
        """
        required = harness.required_length(queries if queries is not None else self.queries)
        config = ModelConfig(**to_dict(self.spec.model))
        config.vocab_size = max(config.vocab_size, self.vocab.embedding_rows)
        if required > config.max_len:
            if self.spec.model_preset:
                raise CapacityError(required, config.max_len)
            config.max_len = required
        return config.validate()

    def build_dataset(self):
        config = self.model_config()
        self.build = harness.build_dataset(
            self.spec, self.catalog, self.queries, self.vocab, config.max_len
        )
        write_dataset(self.build.examples, self.path("dataset.jsonl"))
        return self.build

    def _ensure_build(self):
        if self.build is None:
            self.build_dataset()
        return self.build

    def train(self):
        build = self._ensure_build()
        config = self.model_config()
        self.model, self.history = train(build.examples, config, self.spec.train)
        os.makedirs(self.spec.out_dir, exist_ok=True)
        save_checkpoint(self.model, self.path("model.psv1"), extra={"vocab": self.vocab.to_dict()})
        write_history(self.history, self.path("history.csv"))
        return self.model, self.history

    def train_baseline(self):
        build = self._ensure_build()
        self.baseline = harness.fit_baseline(self.spec, build)
        return self.baseline, harness.baseline_report(self.spec, build, self.baseline)

    def load_model(self, path=None):
        """
        Loads a checkpoint and checks that its vocabulary fits this catalog.
        """
        model, header = load_checkpoint(path or self.path("model.psv1"))
        vocab = Vocabulary.from_dict(header["vocab"]) if "vocab" in header else self.vocab
        if list(vocab.table_names) != list(self.catalog.table_names):
            raise ConfigError(
                "checkpoint vocabulary covers tables {} but the catalog has {}".format(
                    list(vocab.table_names), self.catalog.table_names
                )
            )
        self.model, self._vocab = model, vocab
        return model

    def _ensure_model(self):
        if self.model is None:
            if os.path.exists(self.path("model.psv1")):
                self.load_model()
            else:
                self.train()
        return self.model

    def load_cache(self, path=None):
        self.collector = (
            read_cache(path, self.spec.collector) if path else CardinalityCollector(self.spec.collector)
        )
        return self.collector

    # === Evaluation ==================================
    def eval_offline(self, workload=None):
        """
        Evaluates the model (and the baseline tree if trained) on the held-out
        queries, or on every query of another workload over the same schema.
        """
        model = self._ensure_model()
        if workload is None:
            build = self._ensure_build()
        else:
            queries = read_workload(workload)
            if harness.required_length(queries) > model.config.max_len:
                raise CapacityError(harness.required_length(queries), model.config.max_len)
            build = harness.build_dataset(
                self.spec,
                self.catalog,
                queries,
                self.vocab,
                model.config.max_len,
                split={q.id: "test" for q in queries},
                augment=False,
            )
        return harness.eval_offline(self.spec, model, build, baseline=self.baseline)

    def _test_analyses(self):
        build = self._ensure_build()
        return [a for a in build.analyses if build.split.get(a.query.id) == "test"]

    def eval_online(self):
        model = self._ensure_model()
        collector = self.collector or self.load_cache()
        return harness.eval_online(
            self.spec, model, self.vocab, self.catalog, self._test_analyses(), collector, quiet=self.quiet
        )

    def simulate_stream(self):
        """
        Streams every workload query, in workload order, through the cache
        and writes the final cache next to the report.
        """
        model = self._ensure_model()
        collector = self.collector or self.load_cache()
        analyses = self._ensure_build().analyses
        report, self.collector = harness.simulate_stream(
            self.spec, model, self.vocab, self.catalog, analyses, collector
        )
        write_cache(self.collector, self.path("cache.jsonl"))
        return report

    def l1(self, query_id):
        """
        Returns the text L1 report of one workload query.
        """
        matches = [q for q in self.queries if q.id == query_id]
        if not matches:
            raise UnknownReferenceError("no query {} in the workload".format(query_id))
        default_estimator = harness.build_estimator(self.spec.default_estimator, self.catalog)
        analysis = harness.analyze_query(
            matches[0], self.catalog, default_estimator, self.spec.subopt(), self.spec.left_deep
        )
        return harness.l1_report(analysis)

    # === Export ======================================
    def export(self, report, name, formats=("text", "structured")):
        """
        Writes a report into the output directory and returns the paths.
        """
        return write_report(report, name, self.spec.out_dir, formats)
