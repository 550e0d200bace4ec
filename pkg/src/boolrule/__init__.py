"""Learn expressive Boolean classification rules and explain them."""

from .dataset import BinarizationSpec, BinarizedDataset, Binarizer
from .formula import Literal, Operator, Predicate, Rule, evaluate, parse, serialize
from .metrics import confusion, score_report
from .optimizer import BooleanRuleClassifier, ObjectiveConfig, anneal, fit, predict

__version__ = "0.1.0"

__all__ = [
    "BinarizationSpec",
    "BinarizedDataset",
    "Binarizer",
    "BooleanRuleClassifier",
    "Literal",
    "ObjectiveConfig",
    "Operator",
    "Predicate",
    "Rule",
    "anneal",
    "confusion",
    "evaluate",
    "fit",
    "parse",
    "predict",
    "score_report",
    "serialize",
]
