"""Uniform access to text-generation, NLI, and factual-consistency backends.

Wire contract (any inference server can adapt):
    POST {base}/generate    {prompt, max_tokens, temperature, seed} -> {text}
    POST {base}/nli         {premise, hypothesis} -> {entailment, neutral, contradiction}
    POST {base}/consistency {claim, context} -> {score}

Responses are cached by a content digest of (backend, endpoint, request
body), so repeated identical calls never hit the network and full pipeline
runs replay byte-identically from a warm cache.  A scripted backend replays
canned responses for the offline test suite.
"""

from __future__ import annotations

import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Protocol, Sequence

import requests

from .core import LabelDistribution
from .errors import (
    BackendRejected,
    BackendUnavailable,
    MalformedResponse,
    TransportFailure,
)

__all__ = [
    "GenerationRequest",
    "Backend",
    "HttpBackend",
    "ScriptedBackend",
    "ModelGateway",
    "cache_key",
    "script_key",
    "DEFAULT_MAX_TOKENS",
    "DEFAULT_TEMPERATURE",
]

DEFAULT_MAX_TOKENS = 512
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_MAX_WORKERS = 8

ENV_BASE_URL = "CONFLICTLAB_{name}_BASE_URL"
ENV_API_KEY = "CONFLICTLAB_{name}_API_KEY"


@dataclass(frozen=True)
class GenerationRequest:
    """One text-generation call.

    ``variant`` distinguishes independent samples for otherwise identical
    prompts and ``attempt`` counts parse-failure retries; both participate in
    the cache key so retries and resamples are not served the cached failure.
    """

    backend: str
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    seed: Optional[int] = None
    variant: int = 0
    attempt: int = 0

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def body(self) -> dict:
        return {
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "seed": self.seed,
            "variant": self.variant,
            "attempt": self.attempt,
        }


def cache_key(backend: str, endpoint: str, body: Mapping[str, Any]) -> str:
    import hashlib

    canonical = json.dumps(
        {"backend": backend, "endpoint": endpoint, "body": body},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def script_key(a: str, b: str) -> str:
    """Key for pairwise scripted lookups (premise/hypothesis, claim/context)."""
    return f"{a}{b}"


class Backend(Protocol):
    name: str

    def generate(self, request: GenerationRequest) -> str: ...

    def nli(self, premise: str, hypothesis: str) -> Sequence[float]: ...

    def consistency(self, claim: str, context: str) -> float: ...


class HttpBackend:
    """Backend speaking the JSON wire contract over HTTP."""

    def __init__(
        self,
        name: str,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
    ):
        self.name = name
        env_name = name.upper().replace("-", "_")
        self.base_url = base_url or os.environ.get(ENV_BASE_URL.format(name=env_name))
        self.api_key = api_key or os.environ.get(ENV_API_KEY.format(name=env_name))
        if not self.base_url:
            raise ValueError(f"backend {name!r} has no base URL configured")
        self.timeout = timeout
        self._session = session or requests.Session()

    def _post(self, endpoint: str, body: Mapping[str, Any]) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = self.base_url.rstrip("/") + "/" + endpoint
        try:
            resp = self._session.post(url, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportFailure(str(exc), backend=self.name, endpoint=endpoint)
        if resp.status_code != 200:
            raise BackendRejected(
                "backend returned non-success status",
                backend=self.name,
                endpoint=endpoint,
                status=resp.status_code,
            )
        try:
            return resp.json()
        except ValueError:
            raise MalformedResponse("response body is not JSON", backend=self.name)

    def generate(self, request: GenerationRequest) -> str:
        body = {
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "seed": request.seed,
        }
        payload = self._post("generate", body)
        if "text" not in payload or not isinstance(payload["text"], str):
            raise MalformedResponse("generate response missing text", backend=self.name)
        return payload["text"]

    def nli(self, premise: str, hypothesis: str) -> Sequence[float]:
        payload = self._post("nli", {"premise": premise, "hypothesis": hypothesis})
        try:
            return (
                float(payload["entailment"]),
                float(payload["neutral"]),
                float(payload["contradiction"]),
            )
        except (KeyError, TypeError, ValueError):
            raise MalformedResponse("nli response missing probabilities", backend=self.name)

    def consistency(self, claim: str, context: str) -> float:
        payload = self._post("consistency", {"claim": claim, "context": context})
        try:
            return float(payload["score"])
        except (KeyError, TypeError, ValueError):
            raise MalformedResponse("consistency response missing score", backend=self.name)


class ScriptedBackend:
    """Replays canned responses; the whole offline suite runs against these.

    Script schema (per endpoint: ``generate``, ``nli``, ``consistency``)::

        {"generate":    {"by_prompt": {prompt: text}, "sequence": [...], "default": text},
         "nli":         {"by_pair": {script_key(premise, hypothesis): [e, n, c]}, ...},
         "consistency": {"by_pair": {script_key(claim, context): score}, ...}}

    Lookup order: exact match, then the next unconsumed ``sequence`` entry,
    then ``default``.  A miss raises BACKEND_REJECTED.
    """

    def __init__(self, name: str, script: Mapping[str, Any]):
        self.name = name
        self._script = {k: dict(v) for k, v in script.items()}
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, name: str, path: str | Path) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(name, json.load(fh))

    def _lookup(self, endpoint: str, exact_field: str, key: str) -> Any:
        section = self._script.get(endpoint, {})
        exact = section.get(exact_field, {})
        if key in exact:
            return exact[key]
        with self._lock:
            sequence = section.get("sequence", [])
            cursor = self._cursors.get(endpoint, 0)
            if cursor < len(sequence):
                self._cursors[endpoint] = cursor + 1
                return sequence[cursor]
        if "default" in section:
            return section["default"]
        raise BackendRejected(
            "no scripted response", backend=self.name, endpoint=endpoint, key=key[:120]
        )

    def generate(self, request: GenerationRequest) -> str:
        return self._lookup("generate", "by_prompt", request.prompt)

    def nli(self, premise: str, hypothesis: str) -> Sequence[float]:
        value = self._lookup("nli", "by_pair", script_key(premise, hypothesis))
        return tuple(float(v) for v in value)

    def consistency(self, claim: str, context: str) -> float:
        return float(self._lookup("consistency", "by_pair", script_key(claim, context)))


class ModelGateway:
    """Shared entry point for all inference calls.

    Bounded in-flight parallelism, cache reads lock-free (plain dict reads),
    cache writes serialized; per-request idempotency via the cache key.
    """

    def __init__(
        self,
        backends: Iterable[Backend] = (),
        cache_dir: Optional[str | Path] = None,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        max_workers: int = DEFAULT_MAX_WORKERS,
    ):
        self._backends: dict[str, Backend] = {}
        for backend in backends:
            self.register(backend)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_attempts = max_attempts
        self.max_workers = max_workers
        self._cache: dict[str, Any] = {}
        self._write_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.upstream_requests = 0
        self.cache_hits = 0

    def register(self, backend: Backend) -> None:
        self._backends[backend.name] = backend

    def backend_names(self) -> list[str]:
        return sorted(self._backends)

    def _backend(self, name: str) -> Backend:
        backend = self._backends.get(name)
        if backend is None:
            raise BackendUnavailable("backend is not registered", backend=name)
        return backend

    def _cache_path(self, key: str) -> Optional[Path]:
        return self.cache_dir / f"{key}.json" if self.cache_dir else None

    def _cache_get(self, key: str) -> Any:
        if key in self._cache:
            return self._cache[key]
        path = self._cache_path(key)
        if path is not None and path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                value = json.load(fh)["response"]
            self._cache[key] = value
            return value
        return _MISS

    def _cache_put(self, key: str, value: Any) -> None:
        with self._write_lock:
            self._cache[key] = value
            path = self._cache_path(key)
            if path is not None:
                tmp = path.with_suffix(".tmp")
                with open(tmp, "w", encoding="utf-8") as fh:
                    json.dump({"response": value}, fh, ensure_ascii=False)
                tmp.replace(path)

    def _count_upstream(self) -> None:
        with self._stats_lock:
            self.upstream_requests += 1

    def _count_hit(self) -> None:
        with self._stats_lock:
            self.cache_hits += 1

    def _call(self, fn: Callable[[], Any], backend: str) -> Any:
        last_failure: Optional[TransportFailure] = None
        for _ in range(self.max_attempts):
            self._count_upstream()
            try:
                return fn()
            except TransportFailure as exc:
                last_failure = exc
        raise BackendUnavailable(
            f"transport failed after {self.max_attempts} attempts",
            backend=backend,
            last_error=str(last_failure),
        )

    def complete(self, request: GenerationRequest) -> str:
        backend = self._backend(request.backend)
        key = cache_key(request.backend, "generate", request.body())
        cached = self._cache_get(key)
        if cached is not _MISS:
            self._count_hit()
            return cached
        text = self._call(lambda: backend.generate(request), request.backend)
        if not isinstance(text, str):
            raise MalformedResponse("generation returned non-text", backend=request.backend)
        self._cache_put(key, text)
        return text

    def classify_nli(self, backend_name: str, premise: str, hypothesis: str) -> LabelDistribution:
        if not premise or not hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")
        backend = self._backend(backend_name)
        key = cache_key(backend_name, "nli", {"premise": premise, "hypothesis": hypothesis})
        cached = self._cache_get(key)
        if cached is not _MISS:
            self._count_hit()
            return LabelDistribution(*cached)
        probs = self._call(lambda: backend.nli(premise, hypothesis), backend_name)
        try:
            distribution = LabelDistribution(*[float(p) for p in probs])
        except (TypeError, ValueError) as exc:
            raise MalformedResponse(
                "invalid NLI distribution", backend=backend_name, detail=str(exc)
            )
        self._cache_put(key, [distribution.entailment, distribution.neutral, distribution.contradiction])
        return distribution

    def score_consistency(self, backend_name: str, claim: str, context: str) -> float:
        if not claim or not context:
            raise ValueError("claim and context must be non-empty")
        backend = self._backend(backend_name)
        key = cache_key(backend_name, "consistency", {"claim": claim, "context": context})
        cached = self._cache_get(key)
        if cached is not _MISS:
            self._count_hit()
            return cached
        score = self._call(lambda: backend.consistency(claim, context), backend_name)
        try:
            score = float(score)
        except (TypeError, ValueError):
            raise MalformedResponse("consistency score is not numeric", backend=backend_name)
        if not 0.0 <= score <= 1.0:
            raise MalformedResponse(
                "consistency score outside [0, 1]", backend=backend_name, score=score
            )
        self._cache_put(key, score)
        return score

    def parallel_map(self, fn: Callable[[Any], Any], items: Sequence[Any], workers: Optional[int] = None) -> list[Any]:
        """Apply ``fn`` over items with bounded parallelism, preserving order."""
        workers = workers or self.max_workers
        if workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))


class _Miss:
    __slots__ = ()


_MISS = _Miss()
