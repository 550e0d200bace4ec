"""Turn raw model output into validated, schema-grounded results."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from ..errors import FormatError

_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*\s*\n?(.*?)```", re.S)


@dataclass
class FeatureSelectionResult:
    selected: list
    discarded: list
    rationale: str = ""
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "selected_features": list(self.selected),
            "discarded_features": list(self.discarded),
            "rationale": self.rationale,
            "warnings": list(self.warnings),
        }


@dataclass
class ThresholdRecommendation:
    thresholds: dict
    rationale: str = ""
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "threshold_recommendations": {k: list(v) for k, v in self.thresholds.items()},
            "rationale": self.rationale,
            "warnings": list(self.warnings),
        }


@dataclass
class RuleExplanation:
    classification: bool
    applied_rules: list
    explanation_global: str
    explanation_local: str
    grounded: bool

    def to_dict(self):
        return {
            "classification": self.classification,
            "applied_rules": list(self.applied_rules),
            "explanation": {"global": self.explanation_global, "local": self.explanation_local},
            "grounded": self.grounded,
        }


def _balanced_span(text, start):
    """The balanced ``{...}`` span opening at ``start``, honouring strings and escapes."""
    depth, in_string, escaped = 0, False, False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _balanced_objects(text, limit=1000):
    starts = [m.start() for m in re.finditer(r"\{", text)][:limit]
    for start in starts:
        span = _balanced_span(text, start)
        if span is not None:
            yield span


def extract_json(text):
    """Parse the first balanced JSON object in a model reply.

    Code fences are stripped first. Anything that does not yield an object
    raises :class:`FormatError`.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    elif not isinstance(text, str):
        raise FormatError(f"expected text, got {type(text).__name__}", raw=text)
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)] + [text]
    for chunk in candidates:
        for span in _balanced_objects(chunk):
            try:
                value = json.loads(span)
            except (ValueError, RecursionError):
                continue
            if isinstance(value, dict):
                return value
    raise FormatError("no JSON object found in the model response", raw=text)


def _require(parsed, keys):
    if not isinstance(parsed, dict):
        raise FormatError("expected a JSON object", raw=parsed)
    missing = [k for k in keys if k not in parsed]
    if missing:
        raise FormatError(f"response is missing key(s) {missing}", raw=parsed)


def _as_list(value):
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _rationale(value):
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True) if value is not None else ""


def validate_feature_selection(parsed, schema):
    """Keep only schema features; every dropped name gets one warning.

    A name listed as both selected and discarded stays selected.
    """
    if isinstance(parsed, FeatureSelectionResult):
        parsed = parsed.to_dict()
    _require(parsed, ("selected_features", "discarded_features"))
    names = {f.name for f in schema}
    warnings = [str(w) for w in _as_list(parsed.get("warnings"))]
    dropped = set()

    def clean(values, label):
        out = []
        for v in _as_list(values):
            if not isinstance(v, str):
                warnings.append(f"ignored non-text {label} entry {v!r}")
            elif v not in names:
                if v not in dropped:
                    dropped.add(v)
                    warnings.append(f"dropped {label} feature {v!r}: not in the dataset schema")
            elif v not in out:
                out.append(v)
        return out

    selected = clean(parsed["selected_features"], "selected")
    discarded = []
    for v in clean(parsed["discarded_features"], "discarded"):
        if v in selected:
            warnings.append(f"{v!r} was both selected and discarded; keeping it selected")
        else:
            discarded.append(v)
    return FeatureSelectionResult(selected, discarded, _rationale(parsed.get("rationale")), warnings)


def _number(value):
    if isinstance(value, bool):
        return None
    try:
        x = float(value)
    except (TypeError, ValueError):
        return None
    return x if math.isfinite(x) else None


def validate_thresholds(parsed, summaries):
    """Keep thresholds of numeric features that lie strictly inside the observed range."""
    if isinstance(parsed, ThresholdRecommendation):
        parsed = parsed.to_dict()
    _require(parsed, ("threshold_recommendations",))
    recs = parsed["threshold_recommendations"]
    if not isinstance(recs, dict):
        raise FormatError("threshold_recommendations must be an object", raw=parsed)
    numeric = {s.name: s for s in summaries if s.kind == "numeric" and s.min is not None}
    warnings = [str(w) for w in _as_list(parsed.get("warnings"))]
    thresholds = {}
    for name, values in recs.items():
        if name not in numeric:
            warnings.append(f"dropped thresholds for {name!r}: not a numeric feature of the dataset")
            continue
        s = numeric[name]
        kept = set()
        for v in _as_list(values):
            x = _number(v)
            if x is None:
                warnings.append(f"dropped non-numeric threshold {v!r} for {name!r}")
            elif not s.min < x < s.max:
                warnings.append(f"dropped threshold {x:g} for {name!r}: outside ({s.min:g}, {s.max:g})")
            else:
                kept.add(x)
        if kept:
            thresholds[name] = sorted(kept)
        else:
            warnings.append(f"no usable thresholds left for {name!r}")
    return ThresholdRecommendation(thresholds, _rationale(parsed.get("rationale")), warnings)
