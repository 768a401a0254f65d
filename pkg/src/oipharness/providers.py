"""Chat-completion clients, the retry-until-parsed loop, and a seeded mock respondent."""
from __future__ import annotations

import copy
import hashlib
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Mapping, Optional, Protocol

import numpy as np

from .instrument import (
    LIKERT,
    Category,
    Item,
    Language,
    Mode,
    ParseFailure,
    PromptText,
    parse_likert,
    render_prompt,
)

log = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 10

# Provider defaults for the four families studied; plain config values.
DEFAULT_TEMPERATURES = {
    "gpt-3.5-turbo": 1.0,
    "gemini-1.5-pro": 0.9,
    "ernie-3.5": 0.8,
    "spark-3.5": 0.5,
}

REFUSAL_TEXT = {
    Language.ENGLISH: (
        "As an AI language model, I don't have personal preferences, feelings, "
        "or experiences, so I can't say whether I would enjoy this activity."
    ),
    Language.CHINESE: "作为一个人工智能语言模型，我没有个人喜好、感受或经历，因此无法判断我是否会喜欢这项活动。",
}


class ProviderError(Exception):
    pass


class TransportError(ProviderError):
    """Network or server failure; safe to retry."""


class RateLimited(TransportError):
    def __init__(self, message: str = "rate limited", retry_after: Optional[float] = None):
        super().__init__(message)
        self.retry_after = retry_after


class AuthError(ProviderError):
    """Credential rejected or missing; never retried."""


class FatalProviderError(ProviderError):
    """A provider cannot continue; the runner abandons its remaining cells."""


@dataclass(frozen=True)
class ProviderParams:
    model_id: str
    version_tag: str = ""
    temperature: float = 1.0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    rate_limit: Optional[float] = None  # requests per second; None = unlimited
    name: str = ""

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be nonempty")
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise ValueError(f"temperature must be finite and >= 0, got {self.temperature}")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.rate_limit is not None and not self.rate_limit > 0:
            raise ValueError("rate_limit must be positive")

    @property
    def key(self) -> str:
        """Stable provider identifier used in record keys and analyses."""
        return f"{self.model_id}@{self.version_tag}" if self.version_tag else self.model_id

    @property
    def label(self) -> str:
        return self.name or self.key


@dataclass(frozen=True)
class Attempt:
    raw_text: str
    value: Optional[int]  # None when the reply failed to parse
    error: Optional[str] = None


@dataclass
class AdministrationRecord:
    model_id: str
    version_tag: str
    language: Language
    mode: Mode
    item_id: int
    replication_index: int
    attempts: list[Attempt] = field(default_factory=list)
    final_value: Optional[int] = None
    timestamp: Optional[str] = None

    @property
    def provider_key(self) -> str:
        return f"{self.model_id}@{self.version_tag}" if self.version_tag else self.model_id

    @property
    def key(self) -> tuple:
        return (self.provider_key, self.language.value, self.mode.value, self.item_id, self.replication_index)

    @property
    def missing(self) -> bool:
        return self.final_value is None

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "version_tag": self.version_tag,
            "language": self.language.value,
            "mode": self.mode.value,
            "item_id": self.item_id,
            "replication_index": self.replication_index,
            "attempts": [
                {"raw_text": a.raw_text, "value": a.value, "error": a.error} for a in self.attempts
            ],
            "final_value": self.final_value,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AdministrationRecord":
        return cls(
            model_id=obj["model_id"],
            version_tag=obj.get("version_tag", ""),
            language=Language.parse(obj["language"]),
            mode=Mode(obj["mode"]),
            item_id=int(obj["item_id"]),
            replication_index=int(obj["replication_index"]),
            attempts=[Attempt(a["raw_text"], a.get("value"), a.get("error")) for a in obj.get("attempts", [])],
            final_value=obj.get("final_value"),
            timestamp=obj.get("timestamp"),
        )


class ChatClient(Protocol):
    def complete(
        self, prompt: PromptText, params: ProviderParams, *, replication: int = 1, attempt: int = 1
    ) -> str: ...

    def now(self) -> Optional[str]: ...


def complete(client: ChatClient, prompt: PromptText, params: ProviderParams, *, replication: int = 1,
             attempt: int = 1) -> str:
    return client.complete(prompt, params, replication=replication, attempt=attempt)


# ---------------------------------------------------------------------------
# mock respondent


@dataclass(frozen=True)
class LatentProfile:
    """Latent per-category means on the 1-5 scale for the mock respondent.

    ``item_sd`` scales a fixed per-item offset, the same for every
    replication, provider and language under one seed, so mock data carries
    an item-level random intercept.
    """

    means: Mapping[Category, float]
    noise: float = 0.0
    refusal: float = 0.0
    item_sd: float = 0.0

    def __post_init__(self):
        means = {Category.parse(k): float(v) for k, v in dict(self.means).items()}
        missing = [c.letter for c in Category if c not in means]
        if missing:
            raise ValueError(f"profile lacks means for {missing}")
        for c, m in means.items():
            if not 1.0 <= m <= 5.0:
                raise ValueError(f"mean for {c.title} outside [1, 5]: {m}")
        if not self.noise >= 0 or not self.item_sd >= 0:
            raise ValueError("noise and item_sd must be >= 0")
        if not 0.0 <= self.refusal < 1.0:
            raise ValueError("refusal probability must be in [0, 1)")
        object.__setattr__(self, "means", means)

    @classmethod
    def from_letters(cls, means: Mapping[str, float], **kw) -> "LatentProfile":
        return cls({Category.parse(k): v for k, v in means.items()}, **kw)

    def inverted(self) -> "LatentProfile":
        """Mirror every mean around the scale midpoint (m -> 6 - m)."""
        return LatentProfile({c: 6.0 - m for c, m in self.means.items()}, self.noise, self.refusal, self.item_sd)

    def shifted(self, delta: float) -> "LatentProfile":
        return LatentProfile(
            {c: min(5.0, max(1.0, m + delta)) for c, m in self.means.items()}, self.noise, self.refusal, self.item_sd
        )


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _rng(*parts) -> np.random.Generator:
    entropy = [p if isinstance(p, int) else _stable_int(str(p)) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def mock_respond(profile: LatentProfile, item: Item, mode=Mode.INTEREST, *, seed: int = 0, model_id: str = "mock",
                 replication: int = 1, attempt: int = 1, language=Language.ENGLISH) -> str:
    mode, language = Mode(mode), Language.parse(language)
    rng = _rng(seed, model_id, item.id, replication, attempt, mode.value, language.value)
    refuse = rng.random()
    draw = rng.standard_normal()
    if profile.refusal > 0 and refuse < profile.refusal:
        return REFUSAL_TEXT[language]
    offset = 0.0
    if profile.item_sd > 0:
        # shared by every provider and language: the item's own pull on the answer
        offset = profile.item_sd * _rng(seed, "item-offset", item.id, mode.value).standard_normal()
    latent = profile.means[item.category] + offset + profile.noise * draw
    value = min(5, max(1, round_half_up(latent)))
    if mode is Mode.COMPETENCE:
        return str(value)
    return LIKERT[value - 1].label(language)


class MockClient:
    """Offline respondent driven by latent profiles.

    ``profiles`` maps ``(mode, language)`` keys to profiles; a key may use
    ``None`` for language to cover both languages.
    """

    def __init__(self, profiles: Mapping[tuple, LatentProfile], item_bank, seed: int = 0):
        self.profiles = {(Mode(m), None if lang is None else Language.parse(lang)): p for (m, lang), p in profiles.items()}
        self.items = item_bank
        self.seed = int(seed)
        self.calls = 0
        self._lock = threading.Lock()

    def profile_for(self, mode, language) -> LatentProfile:
        mode, language = Mode(mode), Language.parse(language)
        for key in ((mode, language), (mode, None)):
            if key in self.profiles:
                return self.profiles[key]
        raise KeyError(f"mock has no profile for {mode.value}/{language.value}")

    def complete(self, prompt: PromptText, params: ProviderParams, *, replication: int = 1, attempt: int = 1) -> str:
        with self._lock:
            self.calls += 1
        item = self.items.by_id(prompt.item_id)
        profile = self.profile_for(prompt.mode, prompt.language)
        return mock_respond(profile, item, prompt.mode, seed=self.seed, model_id=params.key,
                            replication=replication, attempt=attempt, language=prompt.language)

    def now(self) -> Optional[str]:
        # logical clock: mock runs must replay byte-identically
        return None


# ---------------------------------------------------------------------------
# networked client


@dataclass(frozen=True)
class EndpointConfig:
    """Request shape for one provider.

    ``body`` is a JSON-like template; any string equal to ``"{prompt}"``,
    ``"{temperature}"`` or ``"{model}"`` is substituted (numbers stay numbers).
    ``response_path`` is a dotted path into the reply, e.g.
    ``choices.0.message.content``.
    """

    url: str
    api_key_env: Optional[str] = None
    headers: Mapping[str, str] = field(default_factory=lambda: {"Authorization": "Bearer {api_key}"})
    body: Mapping[str, Any] = field(default_factory=lambda: {
        "model": "{model}",
        "messages": [{"role": "user", "content": "{prompt}"}],
        "temperature": "{temperature}",
    })
    response_path: str = "choices.0.message.content"
    timeout: float = 60.0


def _fill(template, values: Mapping[str, Any]):
    if isinstance(template, str):
        if template.startswith("{") and template.endswith("}") and template[1:-1] in values:
            return values[template[1:-1]]
        out = template
        for k, v in values.items():
            out = out.replace("{" + k + "}", str(v))
        return out
    if isinstance(template, Mapping):
        return {k: _fill(v, values) for k, v in template.items()}
    if isinstance(template, list):
        return [_fill(v, values) for v in template]
    return copy.deepcopy(template)


def _dig(obj, path: str):
    for part in path.split("."):
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    return obj


class RateLimiter:
    """Minimum spacing between request starts; the serialization point for a provider."""

    def __init__(self, per_second: Optional[float], clock=time.monotonic, sleep=time.sleep):
        self.interval = 0.0 if not per_second else 1.0 / per_second
        self._next = 0.0
        self._lock = threading.Lock()
        self._clock, self._sleep = clock, sleep

    def acquire(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = self._clock()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            self._sleep(wait)


class HttpChatClient:
    def __init__(self, endpoint: EndpointConfig, *, transport=None, environ: Optional[Mapping[str, str]] = None,
                 rate_limit: Optional[float] = None):
        import httpx

        self.endpoint = endpoint
        self.environ = os.environ if environ is None else environ
        self._client = httpx.Client(timeout=endpoint.timeout, transport=transport)
        self._httpx = httpx
        self.limiter = RateLimiter(rate_limit)
        self.calls = 0

    def api_key(self) -> Optional[str]:
        name = self.endpoint.api_key_env
        if not name:
            return None
        key = self.environ.get(name)
        if not key:
            raise AuthError(f"environment variable {name} is not set")
        return key

    def complete(self, prompt: PromptText, params: ProviderParams, *, replication: int = 1, attempt: int = 1) -> str:
        key = self.api_key()
        values = {"prompt": prompt.text, "temperature": params.temperature, "model": params.model_id,
                  "api_key": key or ""}
        headers = {k: _fill(v, values) for k, v in self.endpoint.headers.items()}
        url = _fill(self.endpoint.url, values)
        body = _fill(dict(self.endpoint.body), values)
        self.limiter.acquire()
        self.calls += 1
        try:
            resp = self._client.post(url, json=body, headers=headers)
        except self._httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from {url}")
        if resp.status_code == 429:
            retry = resp.headers.get("retry-after")
            raise RateLimited(f"HTTP 429 from {url}", float(retry) if retry else None)
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {url}")
        try:
            return str(_dig(resp.json(), self.endpoint.response_path))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response shape: {exc}") from exc

    def now(self) -> Optional[str]:
        return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# administration


def _call_with_retry(client, prompt, params, replication, attempt, transport_retries, backoff, sleep):
    delay = backoff
    for tries in range(transport_retries + 1):
        try:
            return complete(client, prompt, params, replication=replication, attempt=attempt)
        except RateLimited as exc:
            err = exc
            wait = exc.retry_after if exc.retry_after is not None else delay
        except TransportError as exc:
            err = exc
            wait = delay
        if tries < transport_retries:
            log.warning("%s: %s; retrying in %.1fs", params.key, err, wait)
            sleep(wait)
            delay *= 2
    raise FatalProviderError(f"{params.key}: giving up after {transport_retries + 1} transport failures: {err}")


def administer_item(client: ChatClient, item: Item, mode, language, params: ProviderParams, replication_index: int,
                    *, templates=None, transport_retries: int = 5, backoff: float = 1.0,
                    sleep=time.sleep) -> AdministrationRecord:
    """Ask one item until the reply parses or ``params.max_attempts`` is spent.

    Each item is a fresh single-turn request. Unparseable replies are kept
    verbatim in ``attempts``; exhausting the budget yields ``final_value=None``.
    AuthError and exhausted transport retries propagate as provider-fatal.
    """
    mode, language = Mode(mode), Language.parse(language)
    prompt = render_prompt(item, mode, language, templates)
    record = AdministrationRecord(params.model_id, params.version_tag, language, mode, item.id, replication_index)
    for attempt in range(1, params.max_attempts + 1):
        raw = _call_with_retry(client, prompt, params, replication_index, attempt, transport_retries, backoff, sleep)
        try:
            value = parse_likert(raw, language, mode).numeric
        except ParseFailure as exc:
            record.attempts.append(Attempt(raw, None, exc.reason))
            continue
        record.attempts.append(Attempt(raw, value))
        record.final_value = value
        break
    record.timestamp = client.now()
    return record
