import json
import logging
import os

import pandas as pd

from .visualize import render_report

logger = logging.getLogger(__name__)


def _ensure_dir(path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)


def write_workload(queries, path):
    """
    Writes one query per line in the workload layout.
    """
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        for query in queries:
            f.write(json.dumps(query.to_dict(), ensure_ascii=False))
            f.write("\n")


def write_dataset(examples, path):
    """
    Writes one LabeledExample per line.
    """
    _ensure_dir(path)
    if not examples:
        open(path, "w").close()
        return
    frame = pd.DataFrame.from_records([e.to_record() for e in examples])
    frame.to_json(path, orient="records", lines=True, double_precision=15, force_ascii=False)


def write_cache(collector, path):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        for record in collector.to_records():
            f.write(json.dumps(record, ensure_ascii=False))
            f.write("\n")


def write_history(history, path):
    _ensure_dir(path)
    history.to_csv(path, index=False)


def report_to_json(report):
    """
    Returns the canonical JSON text of a report Dataset.
    """
    return json.dumps(report.to_dict(), sort_keys=True, indent=2, default=_plain) + "\n"


def _plain(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    raise TypeError("cannot serialize {!r}".format(value))


def write_report(report, name, out_dir, formats=("text", "structured")):
    """
    Writes ``<name>.txt`` and/or ``<name>.json`` plus ``<name>_metadata.txt``
    into ``out_dir`` and returns the written paths.
    """
    unknown = set(formats) - {"text", "structured"}
    if unknown:
        raise ValueError(
            "invalid report format. expected one of the following: %s" % ["text", "structured"]
        )
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, name)
    written = []
    if "text" in formats:
        with open(base + ".txt", "w", encoding="utf-8") as f:
            f.write(render_report(report))
        written.append(base + ".txt")
    if "structured" in formats:
        with open(base + ".json", "w", encoding="utf-8") as f:
            f.write(report_to_json(report))
        written.append(base + ".json")
    metadata_to_file(report, base, "+".join(formats))
    written.append(base + "_metadata.txt")
    logger.info("wrote report %s to %s", name, out_dir)
    return written


def metadata_to_file(ds, output_name, req_format):
    """
    Writes the provenance attributes of a report to a txt file next to it.
    """
    with open(output_name + "_metadata.txt", "w", encoding="utf-8") as f:
        f.write("======== Metadata for " + req_format + " report " + os.path.basename(output_name) + " ========\n")
        f.write("\n===== Report attributes =====\n\n")
        for key in sorted(ds.attrs):
            f.write(str(key) + " : " + str(ds.attrs[key]) + "\n")
        f.write("\n===== Variables =====\n")
        for var in ds.data_vars:
            f.write("\n== " + str(var) + " ==\n")
            f.write("dimensions: " + str(ds[var].dims) + "\n")
