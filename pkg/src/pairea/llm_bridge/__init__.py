"""Everything between the evolutionary loop and a chat model."""

from .client import (
    API_KEY_ENV,
    BASE_URL_ENV,
    MODEL_ENV,
    ChatRequest,
    HttpTransport,
    LlmSession,
    ModelEndpointConfig,
    ScriptedTransport,
    complete,
    scripted_transport,
)
from .parsing import parse_response
from .prompts import DEFAULT_BUDGET, MODES, TEMPLATE_DIR, PromptBundle, build_prompt, template_checksum
from .temperature import TemperatureState, advance_temperature

__all__ = [
    "API_KEY_ENV", "BASE_URL_ENV", "MODEL_ENV", "ChatRequest", "HttpTransport", "LlmSession",
    "ModelEndpointConfig", "ScriptedTransport", "complete", "scripted_transport", "parse_response",
    "DEFAULT_BUDGET", "MODES", "TEMPLATE_DIR", "PromptBundle", "build_prompt", "template_checksum",
    "TemperatureState", "advance_temperature",
]
