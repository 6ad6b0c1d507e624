"""Uniform access to chat-completion and embedding backends."""

from selfdocs.gateway.backends import (
    API_BASE_ENV,
    API_KEY_ENV,
    Backend,
    ChatRequest,
    FunctionBackend,
    LiveBackend,
    Message,
    RecordingBackend,
    ReplayBackend,
    chat_body,
    encode_body,
    read_trace,
)
from selfdocs.gateway.cache import ResponseCache
from selfdocs.gateway.client import Gateway, chat_cache_key, embed_cache_key

__all__ = [
    "API_BASE_ENV",
    "API_KEY_ENV",
    "Backend",
    "ChatRequest",
    "FunctionBackend",
    "Gateway",
    "LiveBackend",
    "Message",
    "RecordingBackend",
    "ReplayBackend",
    "ResponseCache",
    "chat_body",
    "chat_cache_key",
    "embed_cache_key",
    "encode_body",
    "read_trace",
]
