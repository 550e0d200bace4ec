"""Expressive Boolean rule trees.

A rule is a tree whose leaves are (possibly negated) literals over a table of
predicates and whose internal nodes are ``And``, ``Or`` or one of the
cardinality operators ``AtLeast``, ``AtMost`` and ``Choose`` (exactly k).

Textual form::

    Or(month=mar, duration>550, pdays<=100)
    AtLeast3(f0, f1, f2, f3, f4)
    ~Choose1(a, b)
"""

from __future__ import annotations

import itertools
import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import RuleSyntaxError, RuleValidationError, StructuralError

GT = ">"
LE = "<="
EQ = "="
COMPARATORS = (GT, LE, EQ)

OPERATORS = ("And", "Or", "AtLeast", "AtMost", "Choose")
PARAMETERIZED = ("AtLeast", "AtMost", "Choose")


def format_value(value):
    if isinstance(value, str):
        return value
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


@dataclass(frozen=True)
class Predicate:
    """An atomic condition on one raw feature.

    ``comparator`` is ``None`` for a column that is already Boolean; such a
    predicate prints as the bare feature name.
    """

    feature: str
    comparator: str | None = None
    value: float | str | None = None

    def __post_init__(self):
        if not self.feature:
            raise RuleValidationError("predicate feature name must be non-empty")
        if self.comparator is None:
            if self.value is not None:
                raise RuleValidationError(f"Boolean predicate {self.feature!r} takes no value")
        elif self.comparator == EQ:
            if not isinstance(self.value, str):
                raise RuleValidationError(f"'=' needs a category value, got {self.value!r}")
        elif self.comparator in (GT, LE):
            if isinstance(self.value, (str, bool)) or self.value is None:
                raise RuleValidationError(
                    f"{self.comparator!r} needs a numeric value, got {self.value!r}"
                )
            object.__setattr__(self, "value", float(self.value))
        else:
            raise RuleValidationError(f"unknown comparator {self.comparator!r}")

    @property
    def key(self):
        return (self.feature, self.comparator, self.value)

    def __str__(self):
        if self.comparator is None:
            return self.feature
        return f"{self.feature}{self.comparator}{format_value(self.value)}"


@dataclass(frozen=True)
class Literal:
    index: int
    negated: bool = False

    def __post_init__(self):
        if self.index < 0:
            raise RuleValidationError(f"negative predicate index {self.index}")


@dataclass(frozen=True)
class Operator:
    op: str
    children: tuple = ()
    k: int | None = None
    negated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if self.op not in OPERATORS:
            raise RuleValidationError(f"unknown operator {self.op!r}")
        if self.op in PARAMETERIZED:
            if self.k is None:
                raise RuleValidationError(f"{self.op} requires k")
            if not 0 <= self.k <= len(self.children):
                raise RuleValidationError(
                    f"{self.op}{self.k} has k outside [0, {len(self.children)}]"
                )
        elif self.k is not None:
            raise RuleValidationError(f"{self.op} takes no k")
        if len(self.children) < 2:
            raise RuleValidationError(f"{self.op} needs at least 2 children")


RuleNode = Literal | Operator


@dataclass(frozen=True)
class Rule:
    root: RuleNode
    predicates: tuple = ()
    score: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "predicates", tuple(self.predicates))
        n = len(self.predicates)
        for leaf in iter_literals(self.root):
            if leaf.index >= n:
                raise RuleValidationError(
                    f"literal refers to predicate {leaf.index}, table has {n}"
                )

    @property
    def complexity(self):
        return complexity(self)

    def with_score(self, score):
        return replace(self, score=score)

    def __str__(self):
        return serialize(self)


@dataclass(frozen=True)
class CnfFormula:
    num_variables: int
    clauses: tuple

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(tuple(c) for c in self.clauses))
        if self.num_variables < 1:
            raise ValueError("num_variables must be positive")
        for clause in self.clauses:
            if not clause:
                raise ValueError("empty clause")
            for lit in clause:
                if lit == 0 or abs(lit) > self.num_variables:
                    raise ValueError(f"variable index {lit} out of range")

    @property
    def num_literals(self):
        return sum(len(c) for c in self.clauses)

    def evaluate(self, assignment):
        return all(
            any(bool(assignment[abs(v) - 1]) == (v > 0) for v in clause)
            for clause in self.clauses
        )


# ---------------------------------------------------------------------------
# traversal helpers


def iter_literals(node):
    if isinstance(node, Literal):
        yield node
    else:
        for child in node.children:
            yield from iter_literals(child)


def iter_nodes(node, path=()):
    """Yield ``(path, node)`` pairs in pre-order; a path is a tuple of child positions."""
    yield path, node
    if isinstance(node, Operator):
        for i, child in enumerate(node.children):
            yield from iter_nodes(child, path + (i,))


def depth(node):
    if isinstance(node, Literal):
        return 0
    return 1 + max(depth(c) for c in node.children)


def get_node(node, path):
    for i in path:
        node = node.children[i]
    return node


def replace_node(node, path, new):
    if not path:
        return new
    head, rest = path[0], path[1:]
    children = list(node.children)
    children[head] = replace_node(children[head], rest, new)
    return replace(node, children=tuple(children))


def toggle(node):
    return replace(node, negated=not node.negated)


# ---------------------------------------------------------------------------
# semantics


def _combine(op, k, values):
    if op == "And":
        return all(values)
    if op == "Or":
        return any(values)
    count = sum(values)
    if op == "AtLeast":
        return count >= k
    if op == "AtMost":
        return count <= k
    return count == k


def evaluate(node, assignment):
    """Evaluate ``node`` on one Boolean assignment indexed by predicate."""
    if isinstance(node, Literal):
        if node.index >= len(assignment):
            raise StructuralError(
                f"predicate index {node.index} out of bounds for {len(assignment)} columns"
            )
        return bool(assignment[node.index]) != node.negated
    result = _combine(node.op, node.k, [evaluate(c, assignment) for c in node.children])
    return result != node.negated


def evaluate_columns(node, columns):
    """Vectorised evaluation; ``columns[i]`` is the Boolean column of predicate ``i``."""
    if isinstance(node, Literal):
        if node.index >= len(columns):
            raise StructuralError(
                f"predicate index {node.index} out of bounds for {len(columns)} columns"
            )
        col = columns[node.index]
        return ~col if node.negated else col
    values = [evaluate_columns(c, columns) for c in node.children]
    if node.op == "And":
        out = np.logical_and.reduce(values)
    elif node.op == "Or":
        out = np.logical_or.reduce(values)
    else:
        count = np.zeros(values[0].shape, dtype=np.int16)
        for v in values:
            count += v
        if node.op == "AtLeast":
            out = count >= node.k
        elif node.op == "AtMost":
            out = count <= node.k
        else:
            out = count == node.k
    return ~out if node.negated else out


def evaluate_matrix(node, matrix):
    matrix = np.asarray(matrix, dtype=bool)
    if matrix.ndim != 2:
        raise ValueError("matrix must be 2-dimensional")
    if matrix.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return np.asarray(evaluate_columns(node, np.ascontiguousarray(matrix.T)), dtype=bool)


def complexity(rule_or_node):
    """Number of literal leaves; operators are free."""
    node = rule_or_node.root if isinstance(rule_or_node, Rule) else rule_or_node
    return sum(1 for _ in iter_literals(node))


def negation_dual(node):
    """Push a negation flag on an operator into an equivalent un-negated form.

    ``Choose`` has no single-operator dual and is returned unchanged, as are
    cardinality nodes whose dual would need a k outside ``[0, arity]``.
    """
    if isinstance(node, Literal) or not node.negated:
        return node
    n = len(node.children)
    if node.op == "And":
        return Operator("Or", tuple(toggle(c) for c in node.children))
    if node.op == "Or":
        return Operator("And", tuple(toggle(c) for c in node.children))
    if node.op == "AtLeast" and node.k >= 1:
        return Operator("AtMost", node.children, node.k - 1)
    if node.op == "AtMost" and node.k + 1 <= n:
        return Operator("AtLeast", node.children, node.k + 1)
    return node


# ---------------------------------------------------------------------------
# CNF and truth tables


def atleast_to_cnf(k, n):
    """Binomial CNF encoding of AtLeast(k) over variables ``1..n``.

    At least k of n variables are true iff every subset of size ``n - k + 1``
    contains a true variable, so there is one clause per such subset and no
    auxiliary variables.
    """
    if not 1 <= k <= n <= 20:
        raise ValueError(f"need 1 <= k <= n <= 20, got k={k}, n={n}")
    size = n - k + 1
    clauses = [tuple(c) for c in itertools.combinations(range(1, n + 1), size)]
    return CnfFormula(n, clauses)


def truth_table_equivalent(a, b, n):
    if n > 20:
        raise ValueError("truth tables are limited to 20 variables")
    for bits in itertools.product((False, True), repeat=n):
        left = evaluate(a, bits)
        right = b.evaluate(bits) if isinstance(b, CnfFormula) else evaluate(b, bits)
        if left != right:
            return False
    return True


# ---------------------------------------------------------------------------
# text format

_OP_RE = re.compile(r"(And|Or|AtLeast|AtMost|Choose)(\d*)")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_LITERAL_RE = re.compile(r"^(.+?)(<=|>=|<|>|=)(.*)$")


def parse_predicate(text, position=0):
    """Parse ``name>num``, ``name<=num``, ``name=category`` or a bare ``name``.

    Returns ``(predicate, negate)``. ``name<=v`` is normalised to the negation
    of ``name>v`` so a rule and a ``>``-only binarization share columns.
    """
    text = text.strip()
    if not text:
        raise RuleSyntaxError("empty literal", position)
    m = _LITERAL_RE.match(text)
    if m is None:
        if any(ch in text for ch in "()~,"):
            raise RuleSyntaxError(f"invalid literal {text!r}", position)
        return Predicate(text), False
    name, comp, raw = m.group(1).strip(), m.group(2), m.group(3).strip()
    if not name or not raw:
        raise RuleSyntaxError(f"incomplete literal {text!r}", position)
    if comp == ">=":
        raise RuleSyntaxError(f"'>=' is not supported in {text!r}", position)
    if comp == EQ:
        return Predicate(name, EQ, raw), False
    try:
        value = float(raw)
    except ValueError:
        raise RuleSyntaxError(f"non-numeric threshold in {text!r}", position) from None
    if comp == "<":
        warnings.warn(f"'{text}' parsed as '{name}<={raw}'", stacklevel=3)
    if comp == GT:
        return Predicate(name, GT, value), False
    return Predicate(name, GT, value), True


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.predicates = []
        self.index = {}

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def intern(self, predicate):
        if predicate.key not in self.index:
            self.index[predicate.key] = len(self.predicates)
            self.predicates.append(predicate)
        return self.index[predicate.key]

    def node(self):
        self.skip()
        start = self.pos
        if self.peek() == "~":
            self.pos += 1
            return toggle(self.node())
        m = _IDENT_RE.match(self.text, self.pos)
        if m:
            after = m.end()
            while after < len(self.text) and self.text[after].isspace():
                after += 1
            if after < len(self.text) and self.text[after] == "(":
                op = _OP_RE.fullmatch(m.group(0))
                if op is None:
                    raise RuleSyntaxError(f"unknown operator {m.group(0)!r}", start)
                self.pos = after + 1
                return self.operator(op.group(1), op.group(2), start)
        return self.literal()

    def operator(self, name, digits, start):
        if name in PARAMETERIZED and not digits:
            raise RuleSyntaxError(f"{name} needs a numeric suffix", start)
        if name not in PARAMETERIZED and digits:
            raise RuleSyntaxError(f"{name} takes no numeric suffix", start)
        children = [self.node()]
        while True:
            ch = self.peek()
            if ch == ",":
                self.pos += 1
                children.append(self.node())
            elif ch == ")":
                self.pos += 1
                break
            else:
                raise RuleSyntaxError("expected ',' or ')'", self.pos)
        k = int(digits) if digits else None
        if k is not None and k > len(children):
            raise RuleValidationError(f"{name}{k} has only {len(children)} argument(s)")
        return Operator(name, tuple(children), k)

    def literal(self):
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in ",()":
            self.pos += 1
        predicate, negate = parse_predicate(self.text[start : self.pos], start)
        return Literal(self.intern(predicate), negate)

    def parse(self):
        root = self.node()
        self.skip()
        if self.pos != len(self.text):
            raise RuleSyntaxError("unexpected trailing text", self.pos)
        return Rule(root, tuple(self.predicates))


def parse(text):
    if not text or not text.strip():
        raise RuleSyntaxError("empty rule", 0)
    return _Parser(text).parse()


def _node_text(node, predicates):
    if isinstance(node, Literal):
        pred = predicates[node.index]
        if node.negated and pred.comparator == GT:
            return f"{pred.feature}<={format_value(pred.value)}"
        if node.negated and pred.comparator == LE:
            return f"{pred.feature}>{format_value(pred.value)}"
        return ("~" if node.negated else "") + str(pred)
    name = node.op + (str(node.k) if node.k is not None else "")
    args = ", ".join(_node_text(c, predicates) for c in node.children)
    return ("~" if node.negated else "") + f"{name}({args})"


def serialize(rule, predicates: Sequence[Predicate] | None = None):
    if isinstance(rule, Rule):
        return _node_text(rule.root, rule.predicates)
    return _node_text(rule, predicates)

