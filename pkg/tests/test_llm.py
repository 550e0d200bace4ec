import hashlib
import json

import numpy as np
import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from boolrule.dataset import FeatureSchema, FeatureSummary, load_csv, summarize
from boolrule.errors import ConfigurationError, FormatError, ProviderError
from boolrule.formula import parse
from boolrule.llm import prompts
from boolrule.llm.providers import HttpProvider, MockProvider, ProviderConfig, complete, embed, hash_embedding
from boolrule.llm.validation import (
    FeatureSelectionResult,
    ThresholdRecommendation,
    extract_json,
    validate_feature_selection,
    validate_thresholds,
)

# digests of the stored templates; any byte of drift changes them
TEMPLATE_SHA256 = {
    "feature_selection": "107b92add834ceda174377191f38c935abb051e66f2511cbe82052f0082a060c",
    "thresholds": "90b092a83220049a6597161c415f614c231deb86b64b284344d9bd46e68c633e",
    "explanation": "30174ecdc157caef1df3aa91615ebc96059bd17530d51def6a996ece10be0be7",
}
INSTANCE = {"age": 53, "duration": 141, "pdays": 6, "poutcome": "success"}


@pytest.fixture
def bank_schema(bank_like_csv):
    return load_csv(bank_like_csv, "y")[1]


# ---------------------------------------------------------------- prompts


@pytest.mark.parametrize("name", sorted(TEMPLATE_SHA256))
def test_template_bytes_are_frozen(name):
    assert hashlib.sha256(prompts.template(name).encode("utf-8")).hexdigest() == TEMPLATE_SHA256[name]


def test_feature_selection_prompt(bank_schema):
    schema = [FeatureSchema(f.name, f.kind, "last contact duration, in seconds" if f.name == "duration" else "") for f in bank_schema]
    text = prompts.build_feature_selection_prompt(schema, "Predict subscription.", "https://example.org/bank", "BoolXAI rule classifier")
    assert prompts.template("feature_selection").replace("<DATASET_URL>", "https://example.org/bank").replace(
        "<MODEL_TYPE>", "BoolXAI rule classifier").rstrip("\n") in text
    assert "Strictly evaluate the features provided" in text
    assert "- duration (numeric): last contact duration, in seconds" in text
    assert "- month (categorical)\n" in text
    assert len(text) < 8000
    with pytest.raises(ValueError):
        prompts.build_feature_selection_prompt([], "x", "y")


def test_threshold_prompt(bank_like_csv):
    rows, schema, _ = load_csv(bank_like_csv, "y")
    summaries = summarize(rows, schema)
    text = prompts.build_threshold_prompt(summaries)
    duration = next(s for s in summaries if s.name == "duration")
    assert f"duration (min=0, max={int(duration.max)}" in text
    assert '"threshold_recommendations"' in text and '"rationale"' in text
    assert "month" not in text.split("Numerical features are:")[1].split("Please follow")[0]
    with pytest.raises(ValueError):
        prompts.build_threshold_prompt([s for s in summaries if s.kind == "categorical"])


def test_explanation_prompt():
    rule = parse("Or(duration>550, pdays<=100, month=mar)")
    text = prompts.build_explanation_prompt([rule], INSTANCE)
    assert "The rules learnt by boolxai are as follows: Or(duration>550, pdays<=100, month=mar)" in text
    assert "candidate based on the above rules: age=53, duration=141, pdays=6, poutcome=success" in text
    for key in ('"classification"', '"applied_rules"', '"explanation"'):
        assert key in text
    with pytest.raises(ValueError):
        prompts.build_explanation_prompt([rule], {})
    with pytest.raises(ValueError):
        prompts.build_explanation_prompt([], INSTANCE)


def test_prompt_building_is_deterministic(bank_schema):
    a = prompts.build_feature_selection_prompt(bank_schema, "o", "d")
    assert a == prompts.build_feature_selection_prompt(bank_schema, "o", "d")


# ---------------------------------------------------------------- providers


class FakeResponse:
    def __init__(self, status, payload=None):
        self.status_code = status
        self._payload = payload
        self.text = json.dumps(payload) if payload is not None else "busy"

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append((url, json, headers, timeout))
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def ok(content):
    return FakeResponse(200, {"choices": [{"message": {"content": content}}]})


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "secret")
    return "TEST_LLM_KEY"


def test_retry_after_two_429s(api_key):
    session = FakeSession([FakeResponse(429), FakeResponse(429), ok("hello")])
    sleeps = []
    cfg = ProviderConfig(api_key_env=api_key, backoff_base_ms=100, max_retries=3)
    provider = HttpProvider(cfg, session=session, sleep=sleeps.append)
    assert complete(provider, "prompt", 0.0) == "hello"
    assert len(session.requests) == 3 and len(sleeps) == 2
    assert 0.08 <= sleeps[0] <= 0.12 and 0.16 <= sleeps[1] <= 0.24
    url, body, headers, timeout = session.requests[0]
    assert body == {"model": cfg.model_id, "messages": [{"role": "user", "content": "prompt"}],
                    "temperature": 0.0, "max_tokens": cfg.max_tokens}
    assert headers["Authorization"] == "Bearer secret"


def test_exhausted_retries_carry_last_status(api_key):
    session = FakeSession([FakeResponse(503)] * 2 + [requests.ConnectionError("down"), FakeResponse(502)])
    provider = HttpProvider(ProviderConfig(api_key_env=api_key, max_retries=3), session=session, sleep=lambda s: None)
    with pytest.raises(ProviderError) as info:
        complete(provider, "p", 0.0)
    assert info.value.status == 502


def test_client_error_is_not_retried(api_key):
    session = FakeSession([FakeResponse(401, {"error": "bad key"})])
    provider = HttpProvider(ProviderConfig(api_key_env=api_key), session=session, sleep=lambda s: None)
    with pytest.raises(ProviderError) as info:
        complete(provider, "p", 0.0)
    assert info.value.status == 401 and len(session.requests) == 1


def test_missing_key_names_variable(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY_VAR", raising=False)
    provider = HttpProvider(ProviderConfig(api_key_env="NO_SUCH_KEY_VAR"), session=FakeSession([]))
    with pytest.raises(ConfigurationError, match="NO_SUCH_KEY_VAR"):
        complete(provider, "p", 0.0)


def test_malformed_completion_is_format_error(api_key):
    provider = HttpProvider(ProviderConfig(api_key_env=api_key), session=FakeSession([FakeResponse(200, {"x": 1})]))
    with pytest.raises(FormatError):
        complete(provider, "p", 0.0)


def test_provider_config_bounds():
    with pytest.raises(ConfigurationError):
        ProviderConfig(temperature_selection=2.5)
    with pytest.raises(ConfigurationError):
        ProviderConfig(max_retries=11)
    assert ProviderConfig().temperature_selection == 0.0 and ProviderConfig().temperature_interpretation == 0.7


def test_http_embeddings_are_normalised(api_key):
    payload = {"data": [{"embedding": [3.0, 4.0]}, {"embedding": [0.0, 2.0]}]}
    provider = HttpProvider(ProviderConfig(api_key_env=api_key), session=FakeSession([FakeResponse(200, payload)]))
    vectors = embed(provider, ["a", "b"])
    assert vectors.tolist() == [[0.6, 0.8], [0.0, 1.0]]


def test_mock_provider_serves_fixtures_offline(offline_dir, monkeypatch):
    def no_network(*a, **k):
        raise AssertionError("network used")

    monkeypatch.setattr(requests.Session, "post", no_network)
    mock = MockProvider(offline_dir)
    text = complete(mock, "anything", 0.0, prompts.FEATURE_SELECTION)
    assert text == (offline_dir / "feature_selection.json").read_text()
    inferred = complete(mock, prompts.template("thresholds"), 0.0)
    assert "threshold_recommendations" in inferred
    assert [c[0] for c in mock.calls] == [prompts.FEATURE_SELECTION, prompts.THRESHOLDS]


def test_mock_without_fixture_is_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        complete(MockProvider(tmp_path), "p", 0.0, prompts.EXPLANATION)


def test_mock_embeddings_properties(tmp_path):
    mock = MockProvider(tmp_path)
    vectors = embed(mock, ["any of: duration greater than 550", "any of: duration greater than 550", "month equals mar"])
    assert np.allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(vectors[0], vectors[1])
    assert len(hash_embedding("x")) == vectors.shape[1]
    with pytest.raises(ValueError):
        embed(mock, [])


def test_embedding_dimension_mismatch_is_format_error():
    class Ragged:
        def embed(self, texts):
            return [[1.0, 0.0], [1.0]]

    with pytest.raises(FormatError):
        embed(Ragged(), ["a", "b"])


# ---------------------------------------------------------------- extract_json


def test_extract_json_examples():
    assert extract_json('```json\n{"selected_features": []}\n```') == {"selected_features": []}
    assert extract_json('Sure! {"a": "x}{", "b": [1, {"c": 2}]} Hope that helps {') == {"a": "x}{", "b": [1, {"c": 2}]}
    assert extract_json('{broken {"ok": true}') == {"ok": True}
    with pytest.raises(FormatError) as info:
        extract_json("no json here")
    assert info.value.raw == "no json here"


@settings(max_examples=400, deadline=None)
@given(st.one_of(st.binary(max_size=300), st.text(max_size=300),
                 st.text(alphabet='{}[]":,\\ ab1`\n', max_size=300)))
def test_extract_json_never_crashes(data):
    try:
        value = extract_json(data)
    except FormatError:
        return
    assert isinstance(value, dict)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.text(max_size=8), st.one_of(st.integers(), st.text(max_size=8), st.booleans()), max_size=4),
       st.text(alphabet="abc .!\n", max_size=40), st.text(alphabet="abc .!\n", max_size=40))
def test_extract_json_finds_embedded_object(obj, before, after):
    assert extract_json(before + json.dumps(obj) + after) == obj


# ---------------------------------------------------------------- validation


def test_selection_of_sixteen_is_clean(bank_schema, offline_dir):
    result = validate_feature_selection(extract_json((offline_dir / "feature_selection.json").read_text()), bank_schema)
    assert len(result.selected) == 16 and len(result.discarded) == 4
    assert "day_of_week" in result.discarded and result.warnings == []


def test_invented_feature_dropped_once(bank_schema):
    parsed = {"selected_features": ["age", "credit_score", "credit_score"], "discarded_features": ["credit_score"]}
    result = validate_feature_selection(parsed, bank_schema)
    assert result.selected == ["age"] and result.discarded == []
    assert sum("credit_score" in w for w in result.warnings) == 1


def test_selection_conflicts_resolve_to_selected(bank_schema):
    result = validate_feature_selection({"selected_features": ["age"], "discarded_features": ["age", "job"]}, bank_schema)
    assert result.selected == ["age"] and result.discarded == ["job"] and len(result.warnings) == 1


def test_selection_missing_key(bank_schema):
    with pytest.raises(FormatError):
        validate_feature_selection({"selected_features": []}, bank_schema)


def test_selection_is_idempotent(bank_schema):
    once = validate_feature_selection({"selected_features": ["age", "x"], "discarded_features": ["age"]}, bank_schema)
    twice = validate_feature_selection(once, bank_schema)
    assert (twice.selected, twice.discarded) == (once.selected, once.discarded)
    assert isinstance(twice, FeatureSelectionResult)


def numeric_summary(name, lo, hi):
    return FeatureSummary(name, "numeric", count=10, min=lo, max=hi, mean=(lo + hi) / 2)


def test_threshold_validation():
    summaries = [numeric_summary("duration", 0, 4918), numeric_summary("age", 17, 98),
                 FeatureSummary("month", "categorical", frequencies={"may": 3})]
    parsed = {"threshold_recommendations": {"duration": [400], "age": [3, 1, 10, 30, 30, "old"], "month": [1], "ghost": [2]}}
    rec = validate_thresholds(parsed, summaries)
    assert rec.thresholds == {"duration": [400.0], "age": [30.0]}
    assert len(rec.warnings) == 6
    again = validate_thresholds(rec, summaries)
    assert again.thresholds == rec.thresholds and isinstance(again, ThresholdRecommendation)


def test_threshold_sorting():
    rec = validate_thresholds({"threshold_recommendations": {"x": [3, 1, 2]}}, [numeric_summary("x", 0, 10)])
    assert rec.thresholds == {"x": [1.0, 2.0, 3.0]}


def test_threshold_missing_key():
    with pytest.raises(FormatError):
        validate_thresholds({"rationale": "x"}, [])
