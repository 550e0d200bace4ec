"""Text-completion and embedding providers.

``HttpProvider`` talks to an OpenAI-style chat/completions endpoint.
``MockProvider`` replays recorded responses from a fixture directory and
never touches the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import requests

from ..errors import ConfigurationError, FormatError, ProviderError
from . import prompts

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {429}
FIXTURE_FILES = {
    prompts.FEATURE_SELECTION: "feature_selection.json",
    prompts.THRESHOLDS: "thresholds.json",
    prompts.EXPLANATION: "explanation.json",
    prompts.RULE_DESCRIPTION: "rule_description.json",
    prompts.CLUSTER_SUMMARY: "cluster_summary.json",
}
EMBEDDINGS_FILE = "embeddings.json"
HASH_DIMENSION = 64


@dataclass
class ProviderConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    model_id: str = "gpt-4o-mini"
    api_key_env: str = "OPENAI_API_KEY"
    temperature_selection: float = 0.0
    temperature_interpretation: float = 0.7
    max_retries: int = 3
    backoff_base_ms: int = 500
    timeout_ms: int = 60000
    embedding_url: str = "https://api.openai.com/v1/embeddings"
    embedding_model_id: str = "text-embedding-3-small"
    max_tokens: int = 2048

    def __post_init__(self):
        for t in (self.temperature_selection, self.temperature_interpretation):
            if not 0 <= t <= 2:
                raise ConfigurationError(f"temperature {t} outside [0, 2]")
        if not 0 <= self.max_retries <= 10:
            raise ConfigurationError("max_retries must lie in [0, 10]")
        if self.backoff_base_ms <= 0 or self.timeout_ms <= 0:
            raise ConfigurationError("backoff_base_ms and timeout_ms must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown provider settings: {sorted(unknown)}")
        return cls(**data)


class HttpProvider:
    def __init__(self, config, session=None, sleep=time.sleep, rng=None):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()

    def _headers(self):
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise ConfigurationError(
                f"API key environment variable {self.config.api_key_env} is not set"
            )
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, url, body):
        headers = self._headers()
        last_status, last_error = None, None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = self.config.backoff_base_ms * 2 ** (attempt - 1)
                delay *= 1 + self._rng.uniform(-0.2, 0.2)
                self._sleep(delay / 1000)
            try:
                resp = self.session.post(
                    url, json=body, headers=headers, timeout=self.config.timeout_ms / 1000
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_status, last_error = None, str(exc)
                logger.warning("provider transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS or resp.status_code >= 500:
                last_status, last_error = resp.status_code, resp.text[:200]
                logger.warning("provider returned %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ProviderError(
                    f"provider rejected the request with {resp.status_code}: {resp.text[:200]}",
                    status=resp.status_code,
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise FormatError("provider response is not JSON", raw=resp.text) from exc
        raise ProviderError(
            f"provider failed after {self.config.max_retries + 1} attempts "
            f"(last status {last_status}): {last_error}",
            status=last_status,
        )

    def complete(self, prompt, temperature, task=None):
        body = {
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": self.config.max_tokens,
        }
        data = self._post(self.config.endpoint_url, body)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise FormatError("completion response lacks choices[0].message.content", raw=data) from exc

    def embed(self, texts):
        data = self._post(self.config.embedding_url, {"model": self.config.embedding_model_id, "input": list(texts)})
        try:
            return [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise FormatError("embedding response lacks data[].embedding", raw=data) from exc


def _infer_task(prompt):
    markers = [
        ("perform feature selection", prompts.FEATURE_SELECTION),
        ("suggest threshold values", prompts.THRESHOLDS),
        ("Classify the following candidate", prompts.EXPLANATION),
        ("Rewrite the following Boolean classification rule", prompts.RULE_DESCRIPTION),
        ("grouped together because they express similar", prompts.CLUSTER_SUMMARY),
    ]
    for marker, task in markers:
        if marker in prompt:
            return task
    return None


def hash_embedding(text, dimension=HASH_DIMENSION):
    """Signed feature hashing of the text's tokens; deterministic across runs."""
    vec = np.zeros(dimension)
    for token in re.findall(r"[^\s,;:()]+", text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        vec[value % dimension] += 1.0 if (value >> 32) & 1 else -1.0
    return vec.tolist()


class MockProvider:
    """Replays fixture files; every call is recorded in ``calls``."""

    def __init__(self, fixtures_dir):
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir is not None else None
        self.calls = []

    def has_fixture(self, task):
        return self.fixtures_dir is not None and (self.fixtures_dir / FIXTURE_FILES[task]).is_file()

    def has_embeddings(self):
        return self.fixtures_dir is not None and (self.fixtures_dir / EMBEDDINGS_FILE).is_file()

    def complete(self, prompt, temperature, task=None):
        task = task or _infer_task(prompt)
        if task not in FIXTURE_FILES:
            raise ConfigurationError("mock provider cannot tell which task this prompt belongs to")
        self.calls.append((task, prompt, temperature))
        if not self.has_fixture(task):
            raise ConfigurationError(f"no fixture {FIXTURE_FILES[task]} in {self.fixtures_dir}")
        return (self.fixtures_dir / FIXTURE_FILES[task]).read_text(encoding="utf-8")

    def embed(self, texts):
        recorded = {}
        if self.has_embeddings():
            recorded = json.loads((self.fixtures_dir / EMBEDDINGS_FILE).read_text(encoding="utf-8"))
        return [recorded.get(t) or hash_embedding(t) for t in texts]


def complete(provider, prompt, temperature, task=None):
    return provider.complete(prompt, temperature, task=task)


def embed(provider, texts):
    """Embed ``texts`` and L2-normalise every vector."""
    texts = list(texts)
    if not texts:
        raise ValueError("nothing to embed")
    raw = provider.embed(texts)
    if len(raw) != len(texts):
        raise FormatError(f"expected {len(texts)} embeddings, got {len(raw)}", raw=raw)
    dims = {len(v) for v in raw}
    if len(dims) != 1:
        raise FormatError(f"embedding dimensions differ within a batch: {sorted(dims)}", raw=raw)
    matrix = np.asarray(raw, dtype=float)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms
