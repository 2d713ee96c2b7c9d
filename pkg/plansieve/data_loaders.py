import json
import logging
import os

import xarray as xr
import yaml

from .catalog import SchemaSpec
from .collector import CardinalityCollector
from .config import experiment_from_dict
from .errors import ConfigError
from .planspace import Query
from .workloadgen import DomainStore

logger = logging.getLogger(__name__)


def _check_exists(path, what):
    if path is None:
        raise ConfigError("no {} file given".format(what))
    if not os.path.exists(path):
        raise FileNotFoundError("{} file {} does not exist".format(what, path))


def read_schema(path):
    """
    Returns the validated SchemaSpec stored in a YAML document.
    """
    _check_exists(path, "schema")
    with open(path, encoding="utf-8") as f:
        return SchemaSpec.from_dict(yaml.safe_load(f) or {})


def _json_lines(path):
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if line:
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as err:
                    raise ValueError("{}:{}: {}".format(path, number, err)) from None


def read_workload(path):
    """
    Returns the queries of a workload file, one JSON object per line.
    """
    _check_exists(path, "workload")
    queries = [Query.from_dict(record) for record in _json_lines(path)]
    logger.info("read %d queries from %s", len(queries), path)
    return queries


def read_cache(path, config=None):
    """
    Returns the CardinalityCollector persisted in a cache file.
    """
    _check_exists(path, "cache")
    return CardinalityCollector.from_records(list(_json_lines(path)), config)


def read_domain_store(path):
    """
    Returns the DomainStore at ``path``, or an empty one if there is no file yet.
    """
    if path is None or not os.path.exists(path):
        return DomainStore()
    return DomainStore.load(path)


def read_report(path):
    """
    Returns the xarray Dataset of a structured report.
    """
    _check_exists(path, "report")
    with open(path, encoding="utf-8") as f:
        return xr.Dataset.from_dict(json.load(f))


def read_config(path):
    """
    Returns the ExperimentSpec described by a YAML config file.
    """
    _check_exists(path, "config")
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file {} does not hold a mapping".format(path))
    base = os.path.dirname(os.path.abspath(path))
    for key in ("catalog_spec", "workload", "templates", "domain_store"):
        if raw.get(key) and not os.path.isabs(raw[key]):
            raw[key] = os.path.join(base, raw[key])
    return experiment_from_dict(raw)
