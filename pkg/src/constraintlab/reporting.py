"""Deterministic report serialization and summary tables.

Reports are JSON documents with a fixed key order and floats rendered
with 17 significant digits, so byte-identical runs produce byte-identical
files. ``summarize_reports`` flattens any mix of scenario reports into
one CSV row each, leaving non-applicable columns empty.
"""

import csv
import io
import json
import math

from .errors import DataError

SCHEMA_VERSION = 1

SUMMARY_COLUMNS = [
    "scenario",
    "model",
    "mode",
    "seed",
    "accuracy",
    "mse",
    "violation_rate_before",
    "violation_rate_after",
    "exclusion_violation_rate_before",
    "exclusion_violation_rate_after",
    "factual_mse_before",
    "factual_mse_after",
    "env_mse_variance",
    "env_mse_mean",
    "disparity_gender",
    "disparity_ethnicity",
    "disparity_ses",
    "worst_off_rate_improvement_pct",
    "gap_reduction_pct",
    "overall_accuracy_delta",
]


def _render(value, out):
    if value is None:
        out.write("null")
    elif value is True:
        out.write("true")
    elif value is False:
        out.write("false")
    elif isinstance(value, str):
        out.write(json.dumps(value))
    elif isinstance(value, int):
        out.write(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value in report: {value!r}")
        out.write(format(value, ".17g"))
    elif isinstance(value, dict):
        out.write("{")
        for i, (key, item) in enumerate(value.items()):
            if i:
                out.write(", ")
            out.write(json.dumps(str(key)))
            out.write(": ")
            _render(item, out)
        out.write("}")
    elif isinstance(value, (list, tuple)):
        out.write("[")
        for i, item in enumerate(value):
            if i:
                out.write(", ")
            _render(item, out)
        out.write("]")
    else:
        raise TypeError(f"cannot serialize {type(value)!r}")


def render_report(doc):
    out = io.StringIO()
    _render(doc, out)
    out.write("\n")
    return out.getvalue()


def write_report(doc, path):
    with open(path, "w", newline="") as fh:
        fh.write(render_report(doc))


def load_report(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path} is not a schema-version-{SCHEMA_VERSION} report")
    return doc


def _summary_row(doc):
    metrics = doc.get("metrics", {})
    row = {
        "scenario": doc.get("scenario"),
        "model": doc.get("model"),
        "mode": doc.get("mode"),
        "seed": doc.get("seed"),
    }
    for key in (
        "accuracy",
        "mse",
        "violation_rate_before",
        "violation_rate_after",
        "exclusion_violation_rate_before",
        "exclusion_violation_rate_after",
        "factual_mse_before",
        "factual_mse_after",
    ):
        row[key] = metrics.get(key)
    env = metrics.get("env_mse") or {}
    row["env_mse_variance"] = env.get("variance")
    row["env_mse_mean"] = env.get("mean")
    for feature in ("gender", "ethnicity", "ses"):
        row[f"disparity_{feature}"] = None
    groups = doc.get("groups")
    if groups:
        by_feature = {}
        for entry in groups:
            if entry.get("size"):
                by_feature.setdefault(entry["feature"], []).append(entry["accuracy"])
        for feature, accs in by_feature.items():
            row[f"disparity_{feature}"] = max(accs) - min(accs)
    equity = doc.get("equity") or {}
    for key in ("worst_off_rate_improvement_pct", "gap_reduction_pct", "overall_accuracy_delta"):
        row[key] = equity.get(key)
    return row


def summarize_reports(paths, out_path):
    rows = [_summary_row(load_report(p)) for p in paths]
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                ["" if row.get(c) is None else row.get(c) for c in SUMMARY_COLUMNS]
            )
