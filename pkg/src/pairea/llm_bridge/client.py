"""Chat-completion transport, retries and the per-run model session."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from ..errors import ApiError, ConfigError, TransportError
from .prompts import DEFAULT_BUDGET, MODES, TEMPLATE_DIR, PromptBundle, template_checksum

log = logging.getLogger(__name__)

API_KEY_ENV = "PAIR_LLM_API_KEY"
BASE_URL_ENV = "PAIR_LLM_BASE_URL"
MODEL_ENV = "PAIR_LLM_MODEL"


@dataclass
class ModelEndpointConfig:
    """Where and how to reach an OpenAI-compatible chat-completions endpoint.

    ``max_retries`` is the total number of attempts per request.
    """

    base_url: str = ""
    model_name: str = ""
    api_key: str = field(default="", repr=False)
    timeout: float = 120.0
    max_retries: int = 3
    max_requeries_per_generation: int = 2
    backoff_base: float = 1.0

    @classmethod
    def from_env(cls, **overrides) -> "ModelEndpointConfig":
        values = {
            "base_url": os.environ.get(BASE_URL_ENV, ""),
            "model_name": os.environ.get(MODEL_ENV, ""),
            "api_key": os.environ.get(API_KEY_ENV, ""),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def validate(self) -> None:
        if self.max_retries < 1:
            raise ConfigError("max_retries must be >= 1")
        if self.max_requeries_per_generation < 0:
            raise ConfigError("max_requeries_per_generation must be >= 0")

    def to_dict(self) -> dict:
        # never includes the key
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "max_requeries_per_generation": self.max_requeries_per_generation,
        }


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float
    model: str = ""


class Transport(Protocol):
    def send(self, request: ChatRequest) -> str: ...


class HttpTransport:
    """POSTs to ``{base_url}/chat/completions``; 429 and 5xx are marked transient."""

    def __init__(self, cfg: ModelEndpointConfig):
        if not cfg.base_url:
            raise ConfigError(f"no endpoint configured; set {BASE_URL_ENV} or --base-url")
        self.cfg = cfg

    def send(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model or self.cfg.model_name,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
        }
        req = urllib.request.Request(
            self.cfg.base_url.rstrip("/") + "/chat/completions",
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {self.cfg.api_key}"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.cfg.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            text = e.read().decode("utf-8", "replace")
            raise ApiError(e.code, text, transient=e.code == 429 or e.code >= 500) from None
        except (urllib.error.URLError, TimeoutError, ConnectionError) as e:
            raise TransportError(f"request to {self.cfg.base_url} failed: {e}") from None
        try:
            return body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise ApiError(200, json.dumps(body)[:500]) from None


class ScriptedTransport:
    """Offline stand-in: replays ``script`` in order and records each request.

    Script entries that are exceptions are raised instead of returned.
    """

    def __init__(self, script):
        self.script = list(script)
        self.requests: list[ChatRequest] = []

    @property
    def calls(self) -> int:
        return len(self.requests)

    def send(self, request: ChatRequest) -> str:
        self.requests.append(request)
        if len(self.requests) > len(self.script):
            raise TransportError("scripted transport exhausted")
        reply = self.script[len(self.requests) - 1]
        if isinstance(reply, BaseException):
            raise reply
        return reply


def scripted_transport(script) -> ScriptedTransport:
    return ScriptedTransport(script)


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def complete(
    cfg: ModelEndpointConfig,
    bundle: PromptBundle,
    temperature: float,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Send one two-message chat request; retry transient failures with
    exponential backoff (``backoff_base * 2**k`` seconds)."""
    cfg.validate()
    transport = transport or HttpTransport(cfg)
    request = ChatRequest(bundle.system_text, bundle.user_text, temperature, cfg.model_name)
    log.info("chat request sys=%s user=%s temp=%.2f",
             _digest(bundle.system_text), _digest(bundle.user_text), temperature)
    for attempt in range(1, cfg.max_retries + 1):
        try:
            text = transport.send(request)
        except (TransportError, ApiError) as e:
            if isinstance(e, ApiError) and not e.transient:
                raise
            if attempt == cfg.max_retries:
                log.warning("giving up after %d attempts: %s", attempt, e)
                raise
            log.warning("attempt %d failed (%s); retrying", attempt, e)
            sleep(cfg.backoff_base * 2 ** (attempt - 1))
            continue
        log.info("chat response %s (%d chars) after %d attempt(s)", _digest(text), len(text), attempt)
        return text
    raise AssertionError("unreachable")


class LlmSession:
    """Model handle for one run. Not shareable between concurrent runs."""

    def __init__(
        self,
        cfg: ModelEndpointConfig,
        transport: Transport | None = None,
        mode: str = "llm_executes",
        per_pair: bool = False,
        budget: int = DEFAULT_BUDGET,
        template_dir: Path = TEMPLATE_DIR,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        cfg.validate()
        self.cfg = cfg
        self.transport = transport or HttpTransport(cfg)
        self.mode = mode
        self.per_pair = per_pair
        self.budget = budget
        self.template_dir = Path(template_dir)
        self.sleep = sleep
        self.requests = 0
        self.requeries = 0
        self.repairs = 0

    @property
    def label(self) -> str:
        return self.cfg.model_name or "scripted"

    @property
    def prompt_checksum(self) -> str:
        return template_checksum(self.template_dir)

    def ask(self, bundle: PromptBundle, temperature: float) -> str:
        self.requests += 1
        return complete(self.cfg, bundle, temperature, self.transport, self.sleep)
