"""Prompt payloads for feature selection, threshold recommendation and explanation.

The three task templates are stored verbatim as package resources and only
their named slots are substituted.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..formula import Rule, format_value, serialize

DEFAULT_MODEL_TYPE = "BoolXAI rule classifier"

FEATURE_SELECTION = "feature_selection"
THRESHOLDS = "thresholds"
EXPLANATION = "explanation"
RULE_DESCRIPTION = "rule_description"
CLUSTER_SUMMARY = "cluster_summary"


@lru_cache(maxsize=None)
def template(name):
    return resources.files(__package__).joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def _feature_line(feature):
    line = f"- {feature.name} ({feature.kind})"
    if feature.unit:
        line += f" [{feature.unit}]"
    if feature.description:
        line += f": {feature.description}"
    return line


def build_feature_selection_prompt(schema, objective_text, dataset_reference, model_type=DEFAULT_MODEL_TYPE):
    if not schema:
        raise ValueError("feature selection needs a non-empty schema")
    body = template(FEATURE_SELECTION)
    body = body.replace("<DATASET_URL>", str(dataset_reference)).replace("<MODEL_TYPE>", model_type)
    lines = [body.rstrip("\n"), ""]
    if objective_text:
        lines += [f"Prediction objective: {objective_text}", ""]
    lines.append("Features in the dataset:")
    lines += [_feature_line(f) for f in schema]
    return "\n".join(lines) + "\n"


def _summary_digest(s):
    deciles = ", ".join(format_value(round(v, 4)) for v in s.quantiles.values())
    return (
        f"{s.name} (min={format_value(round(s.min, 4))}, max={format_value(round(s.max, 4))}, "
        f"mean={format_value(round(s.mean, 4))}, deciles=[{deciles}])"
    )


def build_threshold_prompt(numeric_summaries):
    numeric = [s for s in numeric_summaries if s.kind == "numeric" and s.min is not None]
    if not numeric:
        raise ValueError("threshold recommendation needs at least one numeric feature")
    listing = "\n" + "\n".join(f"- {_summary_digest(s)}" for s in numeric)
    return template(THRESHOLDS).replace("<numerical_features_list>", listing)


def format_candidate(row):
    parts = []
    for name, value in row.items():
        if value is None or (isinstance(value, float) and value != value):
            continue
        parts.append(f"{name}={format_value(value) if not isinstance(value, str) else value}")
    return ", ".join(parts)


def build_explanation_prompt(rules, candidate_row):
    if not rules:
        raise ValueError("explanation needs at least one rule")
    if not candidate_row:
        raise ValueError("explanation needs a non-empty candidate row")
    texts = [serialize(r) if isinstance(r, Rule) else str(r) for r in rules]
    body = template(EXPLANATION)
    return body.replace("<rules>", "\n".join(texts)).replace("<candidate_data>", format_candidate(candidate_row))


def build_rule_description_prompt(rule):
    return template(RULE_DESCRIPTION).replace("<rule>", serialize(rule))


def build_cluster_summary_prompt(descriptions, top_literals):
    listing = "\n".join(f"- {d}" for d in descriptions)
    top = ", ".join(f"{p} ({n})" for p, n in top_literals)
    return template(CLUSTER_SUMMARY).replace("<rule_descriptions>", listing).replace("<top_literals>", top)
