"""Simulated-annealing local search over expressive Boolean rules.

The search maximises ``metric(rule) - lam * complexity(rule)`` subject to the
hard bound ``complexity(rule) <= max_complexity``. Every state visited is a
valid rule tree; moves that would break the depth or complexity bounds are
never proposed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .dataset import BinarizedDataset
from .errors import ConfigurationError, DataError
from .formula import (
    LE,
    OPERATORS,
    PARAMETERIZED,
    Literal,
    Operator,
    Predicate,
    Rule,
    complexity,
    depth,
    evaluate_columns,
    get_node,
    iter_literals,
    iter_nodes,
    parse_predicate,
    replace_node,
    serialize,
    toggle,
)
from .metrics import METRIC_NAMES, ConfusionMatrix, confusion, score_report

MOVE_KINDS = (
    "ReplaceLiteral",
    "AddLiteral",
    "RemoveLiteral",
    "SwapOperator",
    "AdjustK",
    "ToggleNegation",
    "GrowSubtree",
    "PruneSubtree",
)
REJECTED = -math.inf
_CACHE_LIMIT = 200_000


@dataclass
class ObjectiveConfig:
    metric: str = "balanced_accuracy"
    lam: float = 0.001
    max_complexity: int = 8
    iterations: int = 20000
    restarts: int = 6
    initial_temperature: float = 0.2
    cooling_rate: float = 0.999
    max_depth: int = 3
    allowed_operators: tuple = OPERATORS
    seed: int = 0

    def __post_init__(self):
        self.allowed_operators = tuple(self.allowed_operators)
        if self.metric not in METRIC_NAMES:
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if self.lam < 0:
            raise ConfigurationError("lam must be non-negative")
        if self.max_complexity < 1:
            raise ConfigurationError("max_complexity must be >= 1")
        if self.iterations < 0 or self.restarts < 1:
            raise ConfigurationError("iterations must be >= 0 and restarts >= 1")
        if self.initial_temperature <= 0:
            raise ConfigurationError("initial_temperature must be positive")
        if not 0 < self.cooling_rate < 1:
            raise ConfigurationError("cooling_rate must lie in (0, 1)")
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must be >= 1")
        bad = [op for op in self.allowed_operators if op not in OPERATORS]
        if bad or not self.allowed_operators:
            raise ConfigurationError(f"invalid allowed_operators {self.allowed_operators!r}")

    def to_dict(self):
        out = asdict(self)
        out["allowed_operators"] = list(self.allowed_operators)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown objective settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Move:
    kind: str
    path: tuple
    payload: dict = field(default_factory=dict)


@dataclass
class AnnealTrace:
    temperature: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    best: list = field(default_factory=list)

    def record(self, temperature, objective, accepted, best):
        self.temperature.append(temperature)
        self.objective.append(objective)
        self.accepted.append(accepted)
        self.best.append(best)

    def __len__(self):
        return len(self.best)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "temperature", "objective", "best"])
        for i, row in enumerate(zip(self.temperature, self.objective, self.best)):
            writer.writerow([i, *(repr(v) for v in row)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# objective


def predict(rule, dataset):
    """Evaluate ``rule`` on every row of a binarized dataset."""
    if len(dataset) == 0:
        return np.zeros(0, dtype=bool)
    cols = dataset.column_map(rule.predicates)
    columns = np.ascontiguousarray(dataset.matrix[:, cols].T)
    return np.asarray(evaluate_columns(rule.root, columns), dtype=bool)


def objective(rule, dataset, cfg):
    if complexity(rule) > cfg.max_complexity:
        return REJECTED
    report = score_report(confusion(predict(rule, dataset), dataset.labels))
    return report[cfg.metric] - cfg.lam * complexity(rule)


class _Evaluator:
    """Scores rule trees over one dataset, memoised on the tree itself."""

    def __init__(self, dataset, cfg):
        self.columns = np.ascontiguousarray(dataset.matrix.T)
        self.labels = dataset.labels
        self.n_pos = int(np.count_nonzero(self.labels))
        self.n = len(self.labels)
        self.cfg = cfg
        self.cache = {}

    def __call__(self, root):
        hit = self.cache.get(root)
        if hit is not None:
            return hit
        c = complexity(root)
        if c > self.cfg.max_complexity:
            result = (0.0, REJECTED)
        else:
            pred = evaluate_columns(root, self.columns)
            tp = int(np.count_nonzero(pred & self.labels))
            fp = int(np.count_nonzero(pred)) - tp
            fn = self.n_pos - tp
            cm = confusion_from_counts(tp, fp, fn, self.n)
            metric = score_report(cm)[self.cfg.metric]
            result = (metric, metric - self.cfg.lam * c)
        if len(self.cache) >= _CACHE_LIMIT:
            self.cache.clear()
        self.cache[root] = result
        return result


def confusion_from_counts(tp, fp, fn, n):
    return ConfusionMatrix(tp=tp, fp=fp, tn=n - tp - fp - fn, fn=fn)


# ---------------------------------------------------------------------------
# random rules and moves


def _random_literal(n_predicates, rng):
    return Literal(int(rng.integers(n_predicates)), bool(rng.integers(2)))


def _random_k(op, arity, rng):
    if op == "AtLeast":
        return int(rng.integers(1, arity + 1))
    if op == "AtMost":
        return int(rng.integers(0, arity))
    if op == "Choose":
        return int(rng.integers(1, arity)) if arity > 2 else 1
    return None


def _random_operator(children, cfg, rng):
    op = cfg.allowed_operators[int(rng.integers(len(cfg.allowed_operators)))]
    return Operator(op, tuple(children), _random_k(op, len(children), rng))


def _random_subtree(n_predicates, cfg, rng, levels, budget):
    arity = int(rng.integers(2, min(budget, 4) + 1))
    children = []
    for i in range(arity):
        reserve = arity - i - 1
        room = budget - reserve
        if levels > 1 and room >= 2 and rng.random() < 0.25:
            child = _random_subtree(n_predicates, cfg, rng, levels - 1, min(room, 4))
        else:
            child = _random_literal(n_predicates, rng)
        budget -= complexity(child)
        children.append(child)
    return _random_operator(children, cfg, rng)


def _predicate_table(predicates):
    if isinstance(predicates, int):
        return tuple(Predicate(f"p{i}") for i in range(predicates))
    return tuple(predicates)


def random_rule(predicates, cfg, rng):
    """A random valid rule; ``predicates`` is a predicate table or a count."""
    table = _predicate_table(predicates)
    if len(table) < 2:
        raise DataError("need at least 2 predicates to search")
    if cfg.max_complexity < 2:
        return Rule(_random_literal(len(table), rng), table)
    root = _random_subtree(len(table), cfg, rng, cfg.max_depth, cfg.max_complexity)
    return Rule(root, table)


def _targets(root, cfg, n_predicates):
    nodes = list(iter_nodes(root))
    literals = [p for p, n in nodes if isinstance(n, Literal)]
    ops = [p for p, n in nodes if isinstance(n, Operator)]
    c = complexity(root)
    out = {}
    if n_predicates >= 2 and literals:
        out["ReplaceLiteral"] = literals
    if c < cfg.max_complexity and ops:
        out["AddLiteral"] = ops
    removable = [p for p in literals if p and len(get_node(root, p[:-1]).children) > 2]
    if removable:
        out["RemoveLiteral"] = removable
    swappable = [p for p in ops if any(o != get_node(root, p).op for o in cfg.allowed_operators)]
    if swappable:
        out["SwapOperator"] = swappable
    adjustable = [p for p in ops if get_node(root, p).op in PARAMETERIZED]
    if adjustable:
        out["AdjustK"] = adjustable
    out["ToggleNegation"] = [p for p, _ in nodes]
    if c < cfg.max_complexity:
        growable = [p for p in literals if len(p) + 1 <= cfg.max_depth]
        if growable:
            out["GrowSubtree"] = growable
    prunable = [p for p in ops if p]
    if prunable:
        out["PruneSubtree"] = prunable
    return out


def _choice(seq, rng):
    return seq[int(rng.integers(len(seq)))]


def _make_move(kind, path, root, cfg, n_predicates, rng):
    node = get_node(root, path)
    if kind == "ReplaceLiteral":
        index = int(rng.integers(n_predicates - 1))
        index += index >= node.index
        return Move(kind, path, {"index": index})
    if kind == "AddLiteral" or kind == "GrowSubtree":
        payload = {"literal": _random_literal(n_predicates, rng)}
        if kind == "GrowSubtree":
            op = _choice(cfg.allowed_operators, rng)
            payload.update(op=op, k=_random_k(op, 2, rng))
        return Move(kind, path, payload)
    if kind == "SwapOperator":
        op = _choice([o for o in cfg.allowed_operators if o != node.op], rng)
        arity = len(node.children)
        k = node.k if (node.k is not None and op in PARAMETERIZED) else _random_k(op, arity, rng)
        return Move(kind, path, {"op": op, "k": k})
    if kind == "AdjustK":
        steps = [d for d in (-1, 1) if 0 <= node.k + d <= len(node.children)]
        return Move(kind, path, {"delta": _choice(steps, rng)})
    if kind == "PruneSubtree":
        leaves = list(iter_literals(node))
        return Move(kind, path, {"literal": _choice(leaves, rng)})
    return Move(kind, path)


def apply_move(root, move):
    node = get_node(root, move.path)
    kind, payload = move.kind, move.payload
    if kind == "ReplaceLiteral":
        new = Literal(payload["index"], node.negated)
    elif kind == "AddLiteral":
        new = Operator(node.op, node.children + (payload["literal"],), node.k, node.negated)
    elif kind == "RemoveLiteral":
        parent_path, i = move.path[:-1], move.path[-1]
        parent = get_node(root, parent_path)
        children = parent.children[:i] + parent.children[i + 1 :]
        k = None if parent.k is None else min(parent.k, len(children))
        return replace_node(root, parent_path, Operator(parent.op, children, k, parent.negated))
    elif kind == "SwapOperator":
        new = Operator(payload["op"], node.children, payload["k"], node.negated)
    elif kind == "AdjustK":
        new = Operator(node.op, node.children, node.k + payload["delta"], node.negated)
    elif kind == "ToggleNegation":
        new = toggle(node)
    elif kind == "GrowSubtree":
        new = Operator(payload["op"], (node, payload["literal"]), payload["k"])
    elif kind == "PruneSubtree":
        new = payload["literal"]
    else:
        raise ValueError(f"unknown move kind {kind!r}")
    return replace_node(root, move.path, new)


def propose_move(rule, cfg, rng):
    """Pick an applicable move kind uniformly, then a target uniformly, and apply it."""
    n_predicates = len(rule.predicates)
    targets = _targets(rule.root, cfg, n_predicates)
    kinds = [k for k in MOVE_KINDS if k in targets]
    kind = _choice(kinds, rng)
    path = _choice(targets[kind], rng)
    move = _make_move(kind, path, rule.root, cfg, n_predicates, rng)
    return move, Rule(apply_move(rule.root, move), rule.predicates)


def accept(delta, temperature, rng):
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if delta >= 0:
        return True
    return bool(rng.random() < math.exp(delta / temperature))


# ---------------------------------------------------------------------------
# search


def compact(rule):
    """Drop unused predicates, renumbering literals in first-appearance order."""
    mapping, table = {}, []
    for leaf in iter_literals(rule.root):
        if leaf.index not in mapping:
            mapping[leaf.index] = len(table)
            table.append(rule.predicates[leaf.index])

    def remap(node):
        if isinstance(node, Literal):
            return Literal(mapping[node.index], node.negated)
        return Operator(node.op, tuple(remap(c) for c in node.children), node.k, node.negated)

    return Rule(remap(rule.root), tuple(table), rule.score)


def check_rule(rule, cfg):
    """Raise if ``rule`` breaks a structural or bound invariant."""
    if complexity(rule) > cfg.max_complexity:
        raise AssertionError(f"complexity {complexity(rule)} exceeds {cfg.max_complexity}")
    if depth(rule.root) > cfg.max_depth:
        raise AssertionError(f"depth {depth(rule.root)} exceeds {cfg.max_depth}")
    for _, node in iter_nodes(rule.root):
        if isinstance(node, Operator):
            if node.op not in cfg.allowed_operators:
                raise AssertionError(f"operator {node.op} not allowed")
            # re-running the constructor re-checks arity and k
            Operator(node.op, node.children, node.k, node.negated)
        elif node.index >= len(rule.predicates):
            raise AssertionError("literal index out of range")


def anneal(dataset, cfg, callback: Callable | None = None):
    """One annealing run; returns the best rule visited and the trace.

    ``callback(iteration, candidate_rule, accepted)`` is invoked after every
    proposal when given.
    """
    if len(dataset) == 0 or len(dataset.predicates) < 2:
        raise DataError("annealing needs a non-empty dataset with at least 2 predicates")
    rng = np.random.default_rng(cfg.seed)
    score_of = _Evaluator(dataset, cfg)
    current = random_rule(dataset.predicates, cfg, rng)
    cur_metric, cur_obj = score_of(current.root)
    best, best_metric, best_obj = current, cur_metric, cur_obj
    trace = AnnealTrace()
    temperature = cfg.initial_temperature
    for i in range(cfg.iterations):
        _, candidate = propose_move(current, cfg, rng)
        cand_metric, cand_obj = score_of(candidate.root)
        accepted = accept(cand_obj - cur_obj, temperature, rng)
        if accepted:
            current, cur_obj = candidate, cand_obj
            if cand_obj > best_obj:
                best, best_metric, best_obj = candidate, cand_metric, cand_obj
        trace.record(temperature, cand_obj, accepted, best_obj)
        if callback is not None:
            callback(i, candidate, accepted)
        temperature *= cfg.cooling_rate
    return compact(best).with_score(best_metric), trace


def fit(dataset, cfg):
    """Run ``cfg.restarts`` independent anneals (seeds ``seed + i``).

    Returns distinct rules sorted by score, best first.
    """
    found = []
    for i in range(cfg.restarts):
        run_cfg = ObjectiveConfig(**{**cfg.to_dict(), "seed": cfg.seed + i})
        rule, _ = anneal(dataset, run_cfg)
        found.append(rule)
    found.sort(key=lambda r: -r.score)
    seen, out = set(), []
    for rule in found:
        text = serialize(rule)
        if text not in seen:
            seen.add(text)
            out.append(rule)
    return out


# ---------------------------------------------------------------------------
# scikit-learn estimator


def _column_predicate(name):
    try:
        predicate, negate = parse_predicate(str(name))
    except Exception:
        return Predicate(str(name))
    if negate:
        return Predicate(predicate.feature, LE, predicate.value)
    return predicate


class BooleanRuleClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier whose model is a single expressive Boolean rule.

    ``X`` holds Boolean predicate columns, for instance the output of
    :class:`boolrule.dataset.Binarizer`. DataFrame column names such as
    ``duration>400`` or ``month=mar`` become the rule's predicates; plain
    arrays get ``x0, x1, ...``.
    """

    def __init__(
        self,
        metric="balanced_accuracy",
        lam=0.001,
        max_complexity=8,
        max_depth=3,
        iterations=20000,
        restarts=6,
        initial_temperature=0.2,
        cooling_rate=0.999,
        allowed_operators=OPERATORS,
        random_state=0,
    ):
        self.metric = metric
        self.lam = lam
        self.max_complexity = max_complexity
        self.max_depth = max_depth
        self.iterations = iterations
        self.restarts = restarts
        self.initial_temperature = initial_temperature
        self.cooling_rate = cooling_rate
        self.allowed_operators = allowed_operators
        self.random_state = random_state

    def _config(self):
        return ObjectiveConfig(
            metric=self.metric,
            lam=self.lam,
            max_complexity=self.max_complexity,
            iterations=self.iterations,
            restarts=self.restarts,
            initial_temperature=self.initial_temperature,
            cooling_rate=self.cooling_rate,
            max_depth=self.max_depth,
            allowed_operators=tuple(self.allowed_operators),
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def _matrix(self, X):
        if isinstance(X, pd.DataFrame):
            names = [str(c) for c in X.columns]
            X = X.to_numpy()
        else:
            X = np.asarray(X)
            names = None
        if X.ndim != 2:
            raise ValueError(f"expected 2D input, got shape {X.shape}")
        if X.dtype != bool:
            if not np.isin(X, (0, 1)).all():
                raise ValueError("X must contain only Boolean (0/1) values")
            X = X.astype(bool)
        return X, names

    def fit(self, X, y):
        X, names = self._matrix(X)
        y = np.asarray(y)
        if len(y) != X.shape[0]:
            raise ValueError("X and y have inconsistent numbers of samples")
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"expected 2 classes, got {len(self.classes_)}")
        self.n_features_in_ = X.shape[1]
        if names is not None:
            self.feature_names_in_ = np.array(names, dtype=object)
        names = names or [f"x{i}" for i in range(X.shape[1])]
        self.predicates_ = tuple(_column_predicate(n) for n in names)
        data = BinarizedDataset(self.predicates_, X, y == self.classes_[1])
        self.rules_ = fit(data, self._config())
        self.rule_ = self.rules_[0]
        self._columns = data.column_map(self.rule_.predicates)
        return self

    def predict(self, X):
        check_is_fitted(self, "rule_")
        X, _ = self._matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if X.shape[0] == 0:
            return self.classes_[np.zeros(0, dtype=int)]
        columns = np.ascontiguousarray(X[:, self._columns].T)
        out = np.asarray(evaluate_columns(self.rule_.root, columns), dtype=bool)
        return self.classes_[out.astype(int)]

    def explain(self):
        check_is_fitted(self, "rule_")
        return [serialize(r) for r in self.rules_]
