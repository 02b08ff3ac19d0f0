"""Provider contracts: text completion, text embedding, and event boundaries.

A completion request is {system, user, temperature, seed} -> {text}.  The
engine never cares which transport backs the contract: scripted queues and
replay transcripts keep tests and golden runs deterministic, the HTTP
transport talks to a local endpoint in production.  Every call made during a
session is recorded to the session log by the environment layer.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ProviderError, ProviderTimeout
from .identity import cosine

DEFAULT_TIMEOUT = 120.0
DEFAULT_BOUNDARY_THRESHOLD = 0.5


@dataclass(frozen=True)
class CompletionRequest:
    system: str
    user: str
    temperature: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class CompletionResponse:
    text: str


class CompletionProvider:
    """Base contract; implementations override complete()."""

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError


class QueueCompletionProvider(CompletionProvider):
    """Scripted provider: returns canned responses in call order."""

    def __init__(self, responses: list[str]):
        self._responses = list(responses)
        self._cursor = 0
        self.calls: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.calls.append(request)
        if self._cursor >= len(self._responses):
            raise ProviderError(
                f"scripted provider exhausted after {len(self._responses)} responses")
        text = self._responses[self._cursor]
        self._cursor += 1
        return CompletionResponse(text)

    @property
    def calls_made(self) -> int:
        return self._cursor


class ConstantCompletionProvider(CompletionProvider):
    """Returns the same text for every request (judge stubs, smoke tests)."""

    def __init__(self, text: str):
        self._text = text
        self.calls: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.calls.append(request)
        return CompletionResponse(self._text)


class ReplayCompletionProvider(CompletionProvider):
    """Replays a recorded transcript of {system, user, text} calls.

    In strict mode the incoming request must match the recorded one exactly,
    which turns any prompt drift into a hard failure instead of silently
    wrong replies.
    """

    def __init__(self, transcript: list[dict], strict: bool = True):
        self._transcript = list(transcript)
        self._cursor = 0
        self._strict = strict
        self.calls: list[CompletionRequest] = []

    @classmethod
    def from_file(cls, path, strict: bool = True) -> "ReplayCompletionProvider":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(doc["calls"], strict=strict)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.calls.append(request)
        if self._cursor >= len(self._transcript):
            raise ProviderError(f"replay transcript exhausted after {len(self._transcript)} calls")
        recorded = self._transcript[self._cursor]
        self._cursor += 1
        if self._strict and (recorded.get("user") != request.user
                             or recorded.get("system") != request.system):
            raise ProviderError(
                f"replay mismatch at call {self._cursor}: request does not match transcript")
        return CompletionResponse(recorded["text"])

    @property
    def calls_made(self) -> int:
        return self._cursor


class RecordingCompletionProvider(CompletionProvider):
    """Wraps another provider and captures the full transcript for replay."""

    def __init__(self, inner: CompletionProvider):
        self._inner = inner
        self.transcript: list[dict] = []

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self._inner.complete(request)
        self.transcript.append({
            "system": request.system,
            "user": request.user,
            "temperature": request.temperature,
            "seed": request.seed,
            "text": response.text,
        })
        return response

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"calls": self.transcript}, fh, indent=2)
            fh.write("\n")


class HttpCompletionProvider(CompletionProvider):
    """POSTs the request JSON to a local endpoint; expects {"text": ...} back."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT,
                 api_key: str | None = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.api_key = api_key

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "system": request.system,
            "user": request.user,
            "temperature": request.temperature,
            "seed": request.seed,
        }
        try:
            resp = requests.post(self.endpoint, json=payload, headers=headers,
                                 timeout=self.timeout)
        except requests.Timeout as exc:
            raise ProviderTimeout(f"provider timed out after {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise ProviderError(f"provider transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"provider returned HTTP {resp.status_code}")
        try:
            return CompletionResponse(resp.json()["text"])
        except (ValueError, KeyError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc


# ---------------------------------------------------------------------------
# text embeddings (SVC metric)


class TextEmbeddingProvider:
    def embed(self, text: str) -> list[float]:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        raise NotImplementedError


class HashEmbeddingProvider(TextEmbeddingProvider):
    """Deterministic stub: unit vector seeded from the text's sha256."""

    def __init__(self, dim: int):
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> list[float]:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self._dim)
        return (vec / np.linalg.norm(vec)).tolist()


class HttpEmbeddingProvider(TextEmbeddingProvider):
    def __init__(self, endpoint: str, dim: int, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self._dim = dim
        self.timeout = timeout

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> list[float]:
        import requests

        try:
            resp = requests.post(self.endpoint, json={"text": text}, timeout=self.timeout)
        except requests.Timeout as exc:
            raise ProviderTimeout(f"embedder timed out after {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise ProviderError(f"embedder transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"embedder returned HTTP {resp.status_code}")
        return resp.json()["embedding"]


# ---------------------------------------------------------------------------
# event boundaries


class EventBoundaryProvider:
    """Returns the set of cut indices (a cut at i starts a new event at shot i)."""

    def cuts(self, shot_infos) -> set[int]:
        raise NotImplementedError


class EmbeddingDissimilarityBoundary(EventBoundaryProvider):
    """Default heuristic: cut wherever consecutive keyframe cosine drops below
    the threshold."""

    def __init__(self, threshold: float = DEFAULT_BOUNDARY_THRESHOLD):
        self.threshold = threshold

    def cuts(self, shot_infos) -> set[int]:
        out = set()
        for i in range(1, len(shot_infos)):
            if cosine(shot_infos[i - 1].keyframe_embedding,
                      shot_infos[i].keyframe_embedding) < self.threshold:
                out.add(i)
        return out


class ScriptedBoundary(EventBoundaryProvider):
    def __init__(self, cut_indices):
        self._cuts = set(cut_indices)

    def cuts(self, shot_infos) -> set[int]:
        return set(self._cuts)


@dataclass
class ProviderBundle:
    """Everything a session needs; director defaults to the shared completion
    provider when not given its own."""

    completion: CompletionProvider
    director: CompletionProvider | None = None
    boundary: EventBoundaryProvider = field(default_factory=EmbeddingDissimilarityBoundary)
    embedder: TextEmbeddingProvider | None = None
    judge: CompletionProvider | None = None

    def director_provider(self) -> CompletionProvider:
        return self.director if self.director is not None else self.completion
