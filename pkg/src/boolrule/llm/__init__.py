"""Prompting, provider access and validation of structured model output."""

from .prompts import (
    build_explanation_prompt,
    build_feature_selection_prompt,
    build_threshold_prompt,
)
from .providers import HttpProvider, MockProvider, ProviderConfig, complete, embed
from .validation import (
    FeatureSelectionResult,
    RuleExplanation,
    ThresholdRecommendation,
    extract_json,
    validate_feature_selection,
    validate_thresholds,
)

__all__ = [
    "FeatureSelectionResult",
    "HttpProvider",
    "MockProvider",
    "ProviderConfig",
    "RuleExplanation",
    "ThresholdRecommendation",
    "build_explanation_prompt",
    "build_feature_selection_prompt",
    "build_threshold_prompt",
    "complete",
    "embed",
    "extract_json",
    "validate_feature_selection",
    "validate_thresholds",
]
