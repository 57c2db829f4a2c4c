"""Chat-completions HTTP client for grounding and yes-token scoring.

Requests follow the JSON chat protocol served by common open-source inference
servers: a user message holding the image (PNG data URI) and the prompt text.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import requests

from ..raster import png_bytes
from .base import ScoringFailure, TransportError

log = logging.getLogger(__name__)

DEFAULT_GROUNDING_PROMPT = (
    "Locate the UI element described by the instruction in this screenshot. "
    "Answer with its pixel coordinate as click(x, y).\nInstruction: {instruction}"
)
DEFAULT_SELECTION_PROMPT = (
    "Does this image show the UI element that matches the instruction below? "
    "Answer Yes or No.\nInstruction: {instruction}"
)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 2
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0 or self.backoff_base < 0:
            raise ValueError("retry policy values must be >= 0")

    def delay(self, retry_index: int) -> float:
        return self.backoff_base * (2 ** retry_index)


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    model_name: str = "default"
    # name of the environment variable holding the key; the key itself never lives in config
    api_key_env: str | None = None
    request_timeout: float = 60.0
    max_concurrency: int = 4
    grounding_prompt_template: str = DEFAULT_GROUNDING_PROMPT
    selection_prompt_template: str = DEFAULT_SELECTION_PROMPT
    retry_policy: RetryPolicy = field(default_factory=RetryPolicy)
    max_tokens: int = 256
    top_logprobs: int = 20

    def __post_init__(self):
        if isinstance(self.retry_policy, dict):
            object.__setattr__(self, "retry_policy", RetryPolicy(**self.retry_policy))
        if self.max_concurrency < 1:
            raise ValueError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be > 0")
        for name in ("grounding_prompt_template", "selection_prompt_template"):
            if "{instruction}" not in getattr(self, name):
                raise ValueError(f"{name} must contain an {{instruction}} placeholder")

    def to_dict(self) -> dict:
        return asdict(self)


def image_data_uri(image: np.ndarray) -> str:
    return "data:image/png;base64," + base64.b64encode(png_bytes(image)).decode("ascii")


def build_chat_request(
    image: np.ndarray,
    prompt: str,
    cfg: BackendConfig,
    *,
    logprobs: bool = False,
) -> dict:
    body: dict[str, Any] = {
        "model": cfg.model_name,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "image_url", "image_url": {"url": image_data_uri(image)}},
                    {"type": "text", "text": prompt},
                ],
            }
        ],
        "temperature": 0,
    }
    if logprobs:
        body.update(max_tokens=1, logprobs=True, top_logprobs=cfg.top_logprobs)
    else:
        body["max_tokens"] = cfg.max_tokens
    return body


def request_hash(body: dict) -> str:
    """Canonical hash of a request body; fixture servers key canned replies by it."""
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class HttpClient:
    """Posts chat requests with retries, never exceeding ``max_concurrency`` in flight.

    One client may be shared by any number of threads; sessions are per-thread.
    """

    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self._slots = threading.BoundedSemaphore(cfg.max_concurrency)
        self._local = threading.local()

    def _session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = requests.Session()
            self._local.session = s
        return s

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key_env:
            key = os.environ.get(self.cfg.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def post(self, body: dict) -> dict:
        policy = self.cfg.retry_policy
        attempts = 0
        while True:
            attempts += 1
            try:
                with self._slots:
                    resp = self._session().post(
                        self.cfg.endpoint_url,
                        json=body,
                        headers=self._headers(),
                        timeout=self.cfg.request_timeout,
                    )
                error = self._check(resp, attempts)
            except requests.Timeout as exc:
                error = TransportError(f"request timed out: {exc}", retryable=True, attempts=attempts)
            except requests.ConnectionError as exc:
                error = TransportError(f"connection failed: {exc}", retryable=True, attempts=attempts)
            if error is None:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise TransportError(
                        f"malformed response body: {exc}", status=resp.status_code, attempts=attempts
                    ) from exc
            if not error.retryable or attempts > policy.max_retries:
                raise error
            delay = policy.delay(attempts - 1)
            log.warning("retrying after %s (attempt %d, sleeping %.2fs)", error, attempts, delay)
            time.sleep(delay)

    @staticmethod
    def _check(resp: requests.Response, attempts: int) -> TransportError | None:
        code = resp.status_code
        if 200 <= code < 300:
            return None
        retryable = code >= 500 or code == 429
        return TransportError(
            f"HTTP {code}: {resp.text[:200]}", status=code, retryable=retryable, attempts=attempts
        )


def _message_content(payload: dict) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed chat response: missing {exc}") from exc
    if isinstance(content, list):  # some servers return content parts
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise TransportError("malformed chat response: content is not text")
    return content


def affirmative_logprob(payload: dict) -> float:
    """Log-probability of a "yes" token among the first generated token's alternatives.

    Matching ignores case and leading whitespace so " Yes", "yes" and "YES" all
    count; the best-scoring variant wins.
    """
    try:
        first = payload["choices"][0]["logprobs"]["content"][0]
    except (KeyError, IndexError, TypeError) as exc:
        raise ScoringFailure("response carries no token log-probabilities") from exc
    alternatives = list(first.get("top_logprobs") or [])
    if "token" in first and "logprob" in first:
        alternatives.append({"token": first["token"], "logprob": first["logprob"]})
    best = None
    for alt in alternatives:
        token = str(alt.get("token", ""))
        if token.lstrip().lower().startswith("yes"):
            lp = float(alt["logprob"])
            best = lp if best is None else max(best, lp)
    if best is None:
        raise ScoringFailure("no affirmative token among the returned alternatives")
    return best


def http_ground(image: np.ndarray, prompt: str, cfg: BackendConfig, client: HttpClient | None = None) -> str:
    client = client or HttpClient(cfg)
    return _message_content(client.post(build_chat_request(image, prompt, cfg)))


def http_yes_score(
    element_image: np.ndarray, instruction: str, cfg: BackendConfig, client: HttpClient | None = None
) -> float:
    client = client or HttpClient(cfg)
    prompt = cfg.selection_prompt_template.format(instruction=instruction)
    return affirmative_logprob(client.post(build_chat_request(element_image, prompt, cfg, logprobs=True)))


class HttpGroundingBackend:
    def __init__(self, cfg: BackendConfig, client: HttpClient | None = None):
        self.cfg = cfg
        self.client = client or HttpClient(cfg)

    def ground(self, image: np.ndarray, instruction: str) -> str:
        prompt = self.cfg.grounding_prompt_template.format(instruction=instruction)
        return http_ground(image, prompt, self.cfg, self.client)

    def describe(self) -> str:
        return f"http({self.cfg.model_name}@{self.cfg.endpoint_url})"


class HttpYesScorer:
    def __init__(self, cfg: BackendConfig, client: HttpClient | None = None):
        self.cfg = cfg
        self.client = client or HttpClient(cfg)

    def score(self, image: np.ndarray, instruction: str) -> float:
        return http_yes_score(image, instruction, self.cfg, self.client)

    def describe(self) -> str:
        return f"http_yes_logprob({self.cfg.model_name}@{self.cfg.endpoint_url})"
