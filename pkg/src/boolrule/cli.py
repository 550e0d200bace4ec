"""Command-line pipeline.

    boolrule summarize          --data bank.csv --out summary.json
    boolrule select-features    --data bank.csv --offline --fixtures fx/ --out selection.json
    boolrule suggest-thresholds --data bank.csv --selection selection.json --offline --fixtures fx/ --out thresholds.json
    boolrule binarize           --data bank.csv --selection selection.json --thresholds thresholds.json --out spec.json
    boolrule train              --data bank.csv --spec spec.json --out model.json
    boolrule evaluate           --data bank.csv --model model.json
    boolrule explain            --data bank.csv --model model.json --row 12 --offline --fixtures fx/
    boolrule cluster            --model model.json --k 3

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 provider error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    NUMERIC,
    BinarizationSpec,
    apply_spec,
    binarize_predicates,
    default_spec,
    load_csv,
    merge_thresholds,
    split,
    summarize,
)
from .errors import BoolRuleError, ConfigurationError, DataError, ProviderError
from .formula import complexity, parse, serialize
from .insight import cluster, cluster_report, describe_rule, embed_rules, explain_instance, silhouette_k, summarize_cluster
from .llm import prompts
from .llm.providers import HttpProvider, MockProvider, ProviderConfig, complete
from .llm.validation import extract_json, validate_feature_selection, validate_thresholds
from .metrics import confusion, score_report
from .optimizer import ObjectiveConfig, fit, predict

logger = logging.getLogger("boolrule")

MODEL_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3
DEFAULT_OBJECTIVE_TEXT = "Predict whether the client will subscribe to the offered product (target = yes)."


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# configuration


class RunConfig:
    """Settings merged from the JSON config file and command-line flags (flags win)."""

    def __init__(self, args):
        raw = {}
        if args.config:
            try:
                raw = json.loads(Path(args.config).read_text())
            except (OSError, ValueError) as exc:
                raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        data = raw.get("data", {})
        self.data_path = args.data or data.get("path")
        self.target = args.target or data.get("target", "y")
        self.positive_label = args.positive_label or data.get("positive_label", "yes")
        self.descriptions = data.get("descriptions", {})
        self.objective_text = raw.get("objective_text", DEFAULT_OBJECTIVE_TEXT)
        self.dataset_reference = raw.get("dataset_reference", self.data_path or "")
        self.model_type = raw.get("model_type", prompts.DEFAULT_MODEL_TYPE)

        objective = dict(raw.get("objective", {}))
        for flag, key in (("iterations", "iterations"), ("restarts", "restarts"), ("lam", "lam"), ("max_complexity", "max_complexity")):
            value = getattr(args, flag, None)
            if value is not None:
                objective[key] = value
        self.seed = args.seed if args.seed is not None else raw.get("seed", objective.get("seed", 0))
        objective["seed"] = self.seed
        self.objective = ObjectiveConfig.from_dict(objective)

        binning = raw.get("binarization", {})
        self.threshold_count = binning.get("threshold_count", 9)
        self.rare_fraction = binning.get("rare_fraction", 0.05)
        self.test_fraction = raw.get("split", {}).get("test_fraction", 0.25)

        self.offline = bool(args.offline or raw.get("offline", False))
        self.fixtures = args.fixtures or raw.get("fixtures")
        self.provider_config = ProviderConfig.from_dict(raw["provider"]) if "provider" in raw else None

        self.allowlist = None
        if getattr(args, "selection", None):
            sel = _read_json(args.selection)
            self.allowlist = list(sel.get("selected_features", []))
        elif getattr(args, "features", None) is not None:
            self.allowlist = [f for f in args.features.split(",") if f]
        elif "features" in raw:
            self.allowlist = list(raw["features"])

    def provider(self):
        if self.offline:
            if not self.fixtures:
                raise ConfigurationError("--offline needs --fixtures DIR")
            return MockProvider(self.fixtures)
        if self.provider_config is None:
            raise ConfigurationError("no provider configured; pass --offline --fixtures DIR or add a 'provider' section")
        return HttpProvider(self.provider_config)

    @property
    def temperatures(self):
        cfg = self.provider_config or ProviderConfig()
        return cfg.temperature_selection, cfg.temperature_interpretation


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(obj, out):
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(cfg):
    if not cfg.data_path:
        raise ConfigurationError("no dataset given (--data or data.path in the config)")
    rows, schema, labels = load_csv(cfg.data_path, cfg.target, cfg.positive_label, cfg.descriptions)
    if cfg.allowlist is not None:
        unknown = [f for f in cfg.allowlist if f not in {s.name for s in schema}]
        if unknown:
            raise DataError(f"allowlisted features not in the data: {unknown}")
    return rows, schema, labels


def _selected(schema, cfg):
    if cfg.allowlist is None:
        return list(schema)
    keep = set(cfg.allowlist)
    return [s for s in schema if s.name in keep]


def _build_spec(cfg, rows, schema, args):
    if getattr(args, "spec", None):
        return BinarizationSpec.from_dict(_read_json(args.spec))
    features = _selected(schema, cfg)
    if not features:
        raise ConfigurationError("no features selected")
    spec = default_spec(summarize(rows, features), cfg.threshold_count, cfg.rare_fraction)
    if getattr(args, "thresholds", None):
        recs = _read_json(args.thresholds)
        spec = merge_thresholds(spec, recs.get("threshold_recommendations", {}))
    return spec


def _warn(warnings):
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def cmd_summarize(cfg, args):
    rows, schema, _ = _load(cfg)
    if len(rows) == 0:
        _warn([f"{cfg.data_path} has no data rows"])
    summaries = summarize(rows, _selected(schema, cfg))
    _write_json({"rows": len(rows), "features": [s.to_dict() for s in summaries]}, args.out)
    return EXIT_OK


def cmd_select_features(cfg, args):
    rows, schema, _ = _load(cfg)
    provider = cfg.provider()
    prompt = prompts.build_feature_selection_prompt(schema, cfg.objective_text, cfg.dataset_reference, cfg.model_type)
    text = complete(provider, prompt, cfg.temperatures[0], prompts.FEATURE_SELECTION)
    result = validate_feature_selection(extract_json(text), schema)
    _warn(result.warnings)
    _write_json(result.to_dict(), args.out)
    return EXIT_OK


def cmd_suggest_thresholds(cfg, args):
    rows, schema, _ = _load(cfg)
    features = _selected(schema, cfg)
    summaries = summarize(rows, features)
    numeric = [s for s in summaries if s.kind == NUMERIC]
    provider = cfg.provider()
    text = complete(provider, prompts.build_threshold_prompt(numeric), cfg.temperatures[0], prompts.THRESHOLDS)
    rec = validate_thresholds(extract_json(text), summaries)
    _warn(rec.warnings)
    spec = merge_thresholds(default_spec(summaries, cfg.threshold_count, cfg.rare_fraction), rec.thresholds)
    out = rec.to_dict()
    out["binarization_spec"] = spec.to_dict()
    _write_json(out, args.out)
    return EXIT_OK


def cmd_binarize(cfg, args):
    rows, schema, labels = _load(cfg)
    spec = _build_spec(cfg, rows, schema, args)
    if args.matrix:
        data = apply_spec(rows, schema, spec, labels)
        header = ",".join(data.names + [cfg.target])
        body = np.column_stack([data.matrix, data.labels]).astype(int)
        np.savetxt(args.matrix, body, fmt="%d", delimiter=",", header=header, comments="")
    _write_json(spec.to_dict(), args.out)
    return EXIT_OK


def _evaluate(rule, data):
    return score_report(confusion(predict(rule, data), data.labels))


def cmd_train(cfg, args):
    rows, schema, labels = _load(cfg)
    spec = _build_spec(cfg, rows, schema, args)
    if not spec.features:
        raise ConfigurationError("no features selected")
    data = apply_spec(rows, schema, spec, labels)
    train, test = split(data, cfg.test_fraction, cfg.seed)
    rules = fit(train, cfg.objective)
    metrics = [{"rule": serialize(r), "holdout": _evaluate(r, test).to_dict()} for r in rules]
    model = {
        "version": MODEL_VERSION,
        "rules": [{"rule": serialize(r), "score": r.score, "complexity": complexity(r)} for r in rules],
        "binarization_spec": spec.to_dict(),
        "schema_digest": [{"name": s.name, "kind": s.kind} for s in schema if s.name in spec.features],
        "metrics": metrics,
        "config": cfg.objective.to_dict(),
        "split": {"test_fraction": cfg.test_fraction, "seed": cfg.seed},
        "data": {"target": cfg.target, "positive_label": cfg.positive_label},
        "metadata": {"tool_version": __version__},
    }
    _write_json(model, args.out or "model.json")
    best = metrics[0]
    print(f"best rule: {best['rule']}")
    print(" ".join(f"{k}={best['holdout'][k]:.4f}" for k in ("balanced_accuracy", "accuracy", "precision", "recall", "f1")))
    return EXIT_OK


def load_model(path):
    model = _read_json(path)
    if model.get("version") != MODEL_VERSION:
        raise DataError(f"unsupported model file version {model.get('version')!r}")
    model["parsed_rules"] = [parse(r["rule"]).with_score(r.get("score")) for r in model["rules"]]
    model["spec"] = BinarizationSpec.from_dict(model["binarization_spec"])
    return model


def _check_schema(model, schema):
    kinds = {s.name: s.kind for s in schema}
    for entry in model["schema_digest"]:
        if kinds.get(entry["name"]) != entry["kind"]:
            raise DataError(f"data does not match the model schema at feature {entry['name']!r}")


def _rules_from_args(args, model):
    texts = list(args.rule or [])
    if getattr(args, "rules_file", None):
        texts += [line.strip() for line in Path(args.rules_file).read_text().splitlines() if line.strip()]
    if texts:
        return [parse(t) for t in texts]
    if model is not None:
        return model["parsed_rules"]
    raise ConfigurationError("give --model or at least one --rule")


def cmd_evaluate(cfg, args):
    model = load_model(args.model) if args.model else None
    rules = _rules_from_args(args, model)
    rows, schema, labels = _load(cfg)
    reports = []
    if model is not None and not args.rule and not args.rules_file:
        _check_schema(model, schema)
        data = apply_spec(rows, schema, model["spec"], labels)
        which = args.split or "test"
        if which != "all":
            s = model["split"]
            train, test = split(data, s["test_fraction"], s["seed"])
            data = test if which == "test" else train
        for rule in rules:
            reports.append({"rule": serialize(rule), which: _evaluate(rule, data).to_dict()})
    else:
        spec = model["spec"] if model is not None else default_spec(summarize(rows, schema), cfg.threshold_count, cfg.rare_fraction)
        for rule in rules:
            data = binarize_predicates(rows, rule.predicates, labels, spec)
            which = args.split or "all"
            if which != "all":
                train, test = split(data, cfg.test_fraction, cfg.seed)
                data = test if which == "test" else train
            reports.append({"rule": serialize(rule), which: _evaluate(rule, data).to_dict()})
    _write_json({"reports": reports}, args.out)
    return EXIT_OK


def _instance(args, cfg):
    if args.instance:
        try:
            row = json.loads(args.instance)
        except ValueError:
            row = dict(part.split("=", 1) for part in args.instance.split(",") if "=" in part)
        if not isinstance(row, dict) or not row:
            raise ConfigurationError("--instance must be a JSON object or name=value pairs")
        return row
    if args.row is None:
        raise ConfigurationError("give --row N or --instance")
    rows, _, _ = _load(cfg)
    if not 0 <= args.row < len(rows):
        raise DataError(f"row {args.row} out of range (dataset has {len(rows)} rows)")
    record = rows.iloc[args.row].to_dict()
    return {k: v for k, v in record.items() if v is not None and v == v}


def cmd_explain(cfg, args):
    model = load_model(args.model) if args.model else None
    rules = _rules_from_args(args, model)
    row = _instance(args, cfg)
    spec = model["spec"] if model is not None else None
    result = explain_instance(rules, row, spec, cfg.provider(), cfg.temperatures[1])
    if not result.grounded:
        _warn(["generated explanation disagreed with the rule verdict; classification overridden"])
    _write_json(result.to_dict(), args.out)
    return EXIT_OK


def cmd_cluster(cfg, args):
    model = load_model(args.model) if args.model else None
    rules = _rules_from_args(args, model)
    provider = None
    if cfg.offline or cfg.provider_config is not None:
        provider = cfg.provider()
    descriptions = [describe_rule(r) for r in rules]
    embed_provider = provider
    if isinstance(provider, MockProvider) and not provider.has_embeddings():
        embed_provider = None
    vectors = embed_rules(descriptions, embed_provider)
    k = silhouette_k(vectors, seed=cfg.seed) if args.auto_k else args.k
    if k > len(rules):
        raise ConfigurationError(f"k={k} exceeds the number of rules ({len(rules)})")
    clusters = cluster(vectors, k, cfg.seed)
    persona_provider = provider
    if isinstance(provider, MockProvider) and not provider.has_fixture(prompts.CLUSTER_SUMMARY):
        persona_provider = None
    for c in clusters:
        c.persona = summarize_cluster(c, descriptions, persona_provider, cfg.temperatures[1])
    report = cluster_report(rules, clusters)
    for entry, c in zip(report["clusters"], clusters):
        entry["descriptions"] = [descriptions[i].text for i in c.member_indices]
    _write_json(report, args.out)
    return EXIT_OK


COMMANDS = {
    "summarize": cmd_summarize,
    "select-features": cmd_select_features,
    "suggest-thresholds": cmd_suggest_thresholds,
    "binarize": cmd_binarize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "cluster": cmd_cluster,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--offline", action="store_true", help="serve provider calls from fixtures")
    common.add_argument("--fixtures", help="fixture directory for --offline")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--data", help="CSV dataset")
    common.add_argument("--target", help="label column (default y)")
    common.add_argument("--positive-label", help="label value counted as positive (default yes)")
    common.add_argument("--selection", help="feature selection result to use as allowlist")
    common.add_argument("--features", help="comma-separated feature allowlist")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="boolrule", description="Learn and explain expressive Boolean rules.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("summarize", parents=[common])
    sub.add_parser("select-features", parents=[common])
    sub.add_parser("suggest-thresholds", parents=[common])
    p = sub.add_parser("binarize", parents=[common])
    p.add_argument("--thresholds", help="threshold recommendation file")
    p.add_argument("--spec", help="existing binarization spec")
    p.add_argument("--matrix", help="also write the binarized matrix as CSV")
    p = sub.add_parser("train", parents=[common])
    p.add_argument("--thresholds")
    p.add_argument("--spec")
    p.add_argument("--iterations", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--max-complexity", type=int)
    for name in ("evaluate", "explain", "cluster"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--model")
        p.add_argument("--rule", action="append", help="rule text (repeatable)")
        p.add_argument("--rules-file", help="file with one rule per line")
        if name == "evaluate":
            p.add_argument("--split", choices=("all", "train", "test"))
        if name == "explain":
            p.add_argument("--row", type=int)
            p.add_argument("--instance", help="JSON object or name=value,... pairs")
        if name == "cluster":
            p.add_argument("--k", type=int, default=3)
            p.add_argument("--auto-k", action="store_true", help="choose k in 2..5 by silhouette")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BoolRuleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
