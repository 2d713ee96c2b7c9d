"""
Plain-text rendering of confusion matrices and evaluation reports.
"""

import math

import numpy as np

from .baseline import ConfusionMatrix


def _pct(part, total):
    return "{:.2f}%".format(100.0 * part / total) if total else "n/a"


def render_confusion(cm, title=None):
    """
    Returns a confusion matrix as a text table with counts and percentages of
    the evaluated total, followed by the two accuracies.
    """
    total = cm.total
    rows = [
        ("actual optimal", cm.tp, cm.fn),
        ("actual sub-optimal", cm.fp, cm.tn),
    ]
    cells = [
        [label] + ["{} ({})".format(n, _pct(n, total)) for n in (pred_opt, pred_sub)]
        for label, pred_opt, pred_sub in rows
    ]
    header = ["", "predicted optimal", "predicted sub-optimal"]
    widths = [max(len(r[i]) for r in cells + [header]) for i in range(3)]

    def line(values):
        return "  ".join(v.ljust(widths[0]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(values))

    out = []
    if title:
        out.append("== {} ==".format(title))
    out.append(line(header))
    out.extend(line(r) for r in cells)
    sub_acc = cm.suboptimal_accuracy
    out.append(
        "accuracy: {}   sub-optimal accuracy: {}   (n={})".format(
            _pct(cm.tp + cm.tn, total),
            "n/a" if math.isnan(sub_acc) else "{:.2f}%".format(100.0 * sub_acc),
            total,
        )
    )
    return "\n".join(out)


def matrices(report):
    """
    Returns ``{scenario: ConfusionMatrix}`` from a report Dataset.
    """
    if "confusion" not in report:
        return {}
    out = {}
    for scenario in report["scenario"].values:
        counts = report["confusion"].sel(scenario=scenario)
        out[str(scenario)] = ConfusionMatrix(
            **{str(cell): int(counts.sel(cell=cell)) for cell in report["cell"].values}
        )
    return out


def render_report(report):
    """
    Returns the text form of a report Dataset: provenance, one confusion
    table per scenario, the L1 summary and any window accuracies.
    """
    out = ["# {}".format(report.attrs.get("step", "report"))]
    for key in sorted(report.attrs):
        out.append("{} : {}".format(key, report.attrs[key]))
    for scenario, cm in matrices(report).items():
        out.append("")
        out.append(render_confusion(cm, scenario))
    if "l1_summary" in report:
        out.append("")
        out.append("== L1 aggregate distribution ==")
        for stat in report["stat"].values:
            value = float(report["l1_summary"].sel(stat=stat))
            out.append("{} : {}".format(stat, "n/a" if np.isnan(value) else "{:.6g}".format(value)))
    if "window_accuracy" in report and report.sizes.get("window", 0):
        out.append("")
        out.append("== sliding-window accuracy (window ends at query) ==")
        for end, value in zip(report["window"].values, report["window_accuracy"].values):
            out.append("{:>6d}  {:.2f}%".format(int(end), 100.0 * float(value)))
    return "\n".join(out) + "\n"
