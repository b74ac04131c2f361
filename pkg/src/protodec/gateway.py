"""Access to the black-box encoder: packs, a remote endpoint, or a mock.

Every provider answers the same question: given one prompt string and the
token ids whose scores we care about, return the mask-position hidden vector
and the positive per-token scores.  Providers count their calls so query
budgets stay auditable.

Remote wire format (schema version 1): POST ``{base_url}/v1/encode`` with a
JSON body ``{"schema_version": 1, "prompt": str, "token_ids": [int, ...]}``;
the response carries ``{"schema_version": 1, "hidden": [float, ...],
"scores": [float, ...]}`` with scores aligned to the requested ids.
"""

from __future__ import annotations

import hashlib
import os
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .errors import ConfigError, ContractError, NotFoundError, RemoteError
from .store import FeaturePack, read_pack

SCHEMA_VERSION = 1
ENCODE_PATH = "/v1/encode"

EMPTY_INPUT_KEY = "#"  # "#<j>" addresses the prompt-j empty-input record


class EncoderProvider:
    """Base: deterministic call counting plus the shared surface."""

    def __init__(self):
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def _count(self) -> None:
        with self._lock:
            self._calls += 1

    def encode(self, prompt: str, token_ids: Sequence[int]
               ) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass(frozen=True)
class BatchItem:
    """Per-item outcome of a batch call; exactly one of the two is set."""

    hidden: np.ndarray | None = None
    scores: np.ndarray | None = None
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def encode(provider: EncoderProvider, prompt: str,
           token_ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """One encoder query: (hidden vector, scores over the requested ids)."""
    return provider.encode(prompt, token_ids)


def batch_encode(provider: EncoderProvider, prompts: Sequence[str],
                 token_ids: Sequence[int]) -> list[BatchItem]:
    """Encode prompts in order, reporting failures per item."""
    if len(prompts) == 0:
        raise ValueError("batch must be nonempty")
    out = []
    for prompt in prompts:
        try:
            hidden, scores = provider.encode(prompt, token_ids)
            out.append(BatchItem(hidden=hidden, scores=scores))
        except Exception as exc:  # per-item isolation is the contract
            out.append(BatchItem(error=exc))
    return out


def fetch_sample_features(provider: EncoderProvider, prompts: Sequence[str],
                          token_ids: Sequence[int]
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Gather one sample's P-row feature and score matrices (P calls)."""
    items = batch_encode(provider, prompts, token_ids)
    failed = [item.error for item in items if not item.ok]
    if failed:
        raise failed[0]
    hidden = np.stack([item.hidden for item in items])
    scores = np.stack([item.scores for item in items])
    return hidden, scores


class MockProvider(EncoderProvider):
    """Deterministic stand-in: vectors derived from a seed and the prompt."""

    def __init__(self, seed: int, feature_dim: int):
        super().__init__()
        if feature_dim < 1:
            raise ConfigError("feature_dim must be at least 1")
        self.seed = seed
        self.feature_dim = feature_dim

    def encode(self, prompt, token_ids):
        self._count()
        digest = hashlib.sha256(f"{self.seed}:{prompt}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        hidden = rng.normal(size=self.feature_dim)
        scores = rng.uniform(0.05, 1.0, size=len(token_ids))
        return hidden, scores


class PackProvider(EncoderProvider):
    """Replays vectors recorded in a feature pack.

    Lookup keys are the rendered prompt texts when the pack stores them,
    plus the canonical forms ``<sample_id>#<prompt_index>`` and ``#<j>``
    for per-prompt empty-input records.
    """

    def __init__(self, pack: FeaturePack | str):
        super().__init__()
        self.pack = pack if isinstance(pack, FeaturePack) else read_pack(pack)
        self._index: dict[str, tuple[int, int]] = {}
        for i, sample_id in enumerate(self.pack.sample_ids):
            for j in range(self.pack.num_prompts):
                self._index[f"{sample_id}#{j}"] = (i, j)
                if self.pack.record_texts:
                    self._index.setdefault(self.pack.record_texts[i][j], (i, j))

    def encode(self, prompt, token_ids):
        self._count()
        width = self.pack.scores.shape[2]
        if len(token_ids) != width:
            raise ContractError(
                f"pack recorded {width} score columns; request asked for "
                f"{len(token_ids)} tokens")
        if prompt.startswith(EMPTY_INPUT_KEY) and prompt[1:].isdigit():
            j = int(prompt[1:])
            if not 0 <= j < self.pack.num_prompts:
                raise NotFoundError(f"no empty-input record for prompt {j}")
            return (np.zeros(self.pack.feature_dim),
                    np.asarray(self.pack.calibration[j], dtype=np.float64))
        if prompt not in self._index:
            raise NotFoundError(f"prompt not present in pack: {prompt!r}")
        i, j = self._index[prompt]
        hidden = np.asarray(self.pack.features[i, j], dtype=np.float64)
        scores = np.asarray(self.pack.scores[i, j], dtype=np.float64)
        return hidden, scores


class RemoteProvider(EncoderProvider):
    """HTTP client for the versioned encode endpoint."""

    def __init__(self, base_url: str, auth_env: str | None = None,
                 timeout: float = 10.0, retries: int = 3,
                 backoff: float = 0.25, expected_dim: int | None = None):
        super().__init__()
        if retries < 1:
            raise ConfigError("retry budget must be at least 1")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.expected_dim = expected_dim
        self._headers = {"Content-Type": "application/json"}
        if auth_env:
            token = os.environ.get(auth_env)
            if token is None:
                raise ConfigError(
                    f"auth environment variable {auth_env!r} is not set")
            self._headers["Authorization"] = f"Bearer {token}"

    def encode(self, prompt, token_ids):
        self._count()
        body = {
            "schema_version": SCHEMA_VERSION,
            "prompt": prompt,
            "token_ids": [int(t) for t in token_ids],
        }
        last_error: Exception | None = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = requests.post(self.base_url + ENCODE_PATH, json=body,
                                     headers=self._headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = RemoteError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise RemoteError(
                    f"encode request rejected: HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp, len(body["token_ids"]))
        raise RemoteError(
            f"encode failed after {self.retries} attempts: {last_error}")

    def _parse(self, resp, n_tokens: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise RemoteError(f"non-JSON response from encoder: {exc}") from exc
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise ContractError(
                f"endpoint speaks schema {payload.get('schema_version')!r}, "
                f"client expects {SCHEMA_VERSION}")
        try:
            hidden = np.asarray(payload["hidden"], dtype=np.float64)
            scores = np.asarray(payload["scores"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"malformed encode response: {exc}") from exc
        if hidden.ndim != 1 or (self.expected_dim and hidden.shape[0] != self.expected_dim):
            raise ContractError(
                f"hidden vector has dim {hidden.shape}, expected {self.expected_dim}")
        if scores.shape != (n_tokens,):
            raise ContractError(
                f"scores length {scores.shape} != requested {n_tokens} tokens")
        if np.any(scores <= 0) or not np.isfinite(scores).all():
            raise ContractError("token scores must be positive finite reals")
        return hidden, scores


def make_provider(kind: str, **settings) -> EncoderProvider:
    """Factory used by configuration loading; exactly one kind is active."""
    if kind == "mock":
        return MockProvider(**settings)
    if kind == "pack":
        return PackProvider(**settings)
    if kind == "remote":
        return RemoteProvider(**settings)
    raise ConfigError(f"unknown provider kind {kind!r}")
