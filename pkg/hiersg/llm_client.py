"""
LLM Client Module
Completion backends for commonsense validation.

Two backends share one interface: an HTTP client speaking the generic
chat-completions wire shape (endpoint, model and the JSON path of the
answer text are configuration), and a deterministic mock used for tests and
offline runs.
"""

import logging
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, Optional, Tuple

import requests

from hiersg.audit import RequestLog, RequestStatus
from hiersg.constants import DEFAULT_API_KEY_ENV, DEFAULT_RESPONSE_PATH
from hiersg.error_handler import AuthError, BackendUnavailable, MalformedResponse

logger = logging.getLogger(__name__)


class Backend(Enum):
    HTTP = "HTTP"
    MOCK = "MOCK"


@dataclass(frozen=True)
class MockRule:
    """Answer "No" when any blacklisted triplet string occurs in the prompt."""
    blacklist: FrozenSet[str] = frozenset()
    default_answer: bool = True

    def answer(self, prompt: str) -> str:
        text = prompt.lower()
        if any(entry.lower() in text for entry in self.blacklist):
            return "No"
        return "Yes" if self.default_answer else "No"


@dataclass(frozen=True)
class ClientConfig:
    """Completion backend settings (the `client` section of a run config)."""
    backend: Backend = Backend.MOCK
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "default"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_in_flight: int = 4
    api_key_env: str = DEFAULT_API_KEY_ENV
    response_path: str = DEFAULT_RESPONSE_PATH
    request_log: Optional[str] = None
    mock_blacklist: Tuple[str, ...] = ()
    default_answer: bool = True

    def __post_init__(self):
        if isinstance(self.backend, str):
            object.__setattr__(self, 'backend', Backend(self.backend.upper()))
        object.__setattr__(self, 'mock_blacklist', tuple(self.mock_blacklist))
        if self.timeout <= 0:
            raise ValueError("client timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("client max_retries must be non-negative")
        if self.backoff_base < 0:
            raise ValueError("client backoff_base must be non-negative")
        if self.max_in_flight < 1:
            raise ValueError("client max_in_flight must be at least 1")

    @property
    def mock_rule(self) -> MockRule:
        return MockRule(frozenset(self.mock_blacklist), self.default_answer)


def extract_path(data: Any, path: str) -> str:
    """
    Follow a dotted path through nested dicts and lists; integer segments
    index lists. The value found must be a string.
    """
    node = data
    for segment in path.split('.'):
        try:
            if isinstance(node, list):
                node = node[int(segment)]
            elif isinstance(node, dict):
                node = node[segment]
            else:
                raise KeyError(segment)
        except (KeyError, IndexError, ValueError):
            raise MalformedResponse(f"response has no value at '{path}' (failed at '{segment}')")
    if not isinstance(node, str):
        raise MalformedResponse(f"value at '{path}' is {type(node).__name__}, expected text")
    return node


class MockCompletionClient:
    """Deterministic oracle; keeps every prompt it receives for inspection."""

    def __init__(self, rule: Optional[MockRule] = None):
        self.rule = rule or MockRule()
        self._prompts = []
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self._prompts.append(prompt)
        return self.rule.answer(prompt)

    @property
    def prompts(self) -> list:
        with self._lock:
            return list(self._prompts)

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self._prompts)


class HttpCompletionClient:
    """
    Chat-completions client over requests.

    5xx responses, timeouts and connection errors are retried with
    exponential backoff (backoff_base * 2**attempt); one complete() call
    makes at most max_retries + 1 requests. 401/403 raise AuthError at once,
    other 4xx raise BackendUnavailable without retrying. At most
    max_in_flight requests are outstanding across threads.
    """

    def __init__(self, config: ClientConfig, sleep: Callable[[float], None] = time.sleep,
                 session: Optional[requests.Session] = None):
        self.config = config
        self._sleep = sleep
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._log = RequestLog(config.request_log) if config.request_log else None

    def _headers(self) -> Dict[str, str]:
        headers = {'Content-Type': 'application/json'}
        api_key = os.getenv(self.config.api_key_env, '').strip()
        if api_key:
            headers['Authorization'] = f'Bearer {api_key}'
        return headers

    def _payload(self, prompt: str) -> Dict[str, Any]:
        return {
            'model': self.config.model,
            'messages': [{'role': 'user', 'content': prompt}],
            'temperature': 0,
        }

    def _record(self, prompt: str, status: RequestStatus, started: float,
                http_status: Optional[int], attempt: int) -> None:
        if self._log is not None:
            self._log.record(prompt, status, (time.perf_counter() - started) * 1000, http_status, attempt)

    def _post(self, prompt: str, attempt: int) -> Tuple[bool, str]:
        """One request. Returns (done, text_or_reason); raises on non-retryable failures."""
        started = time.perf_counter()
        try:
            with self._gate:
                response = self._session.post(self.config.endpoint, json=self._payload(prompt),
                                              headers=self._headers(), timeout=self.config.timeout)
        except requests.exceptions.Timeout as e:
            self._record(prompt, RequestStatus.TIMEOUT, started, None, attempt)
            return False, f"timeout: {e}"
        except requests.exceptions.ConnectionError as e:
            self._record(prompt, RequestStatus.CONNECTION_ERROR, started, None, attempt)
            return False, f"connection error: {e}"

        status = response.status_code
        if status in (401, 403):
            self._record(prompt, RequestStatus.AUTH_ERROR, started, status, attempt)
            raise AuthError(f"backend rejected credentials (HTTP {status})")
        if status >= 500:
            self._record(prompt, RequestStatus.HTTP_ERROR, started, status, attempt)
            return False, f"HTTP {status}"
        if status >= 400:
            self._record(prompt, RequestStatus.HTTP_ERROR, started, status, attempt)
            raise BackendUnavailable(f"backend refused the request (HTTP {status}): {response.text[:200]}")

        try:
            text = extract_path(response.json(), self.config.response_path)
        except ValueError as e:
            self._record(prompt, RequestStatus.MALFORMED, started, status, attempt)
            raise MalformedResponse(f"response body is not JSON: {e}")
        except MalformedResponse:
            self._record(prompt, RequestStatus.MALFORMED, started, status, attempt)
            raise
        self._record(prompt, RequestStatus.OK, started, status, attempt)
        return True, text

    def complete(self, prompt: str) -> str:
        attempts = self.config.max_retries + 1
        reason = ''
        for attempt in range(attempts):
            done, result = self._post(prompt, attempt)
            if done:
                return result
            reason = result
            if attempt + 1 < attempts:
                delay = self.config.backoff_base * (2 ** attempt)
                logger.warning("Completion request failed (attempt %d/%d): %s; retrying in %.2fs",
                               attempt + 1, attempts, reason, delay)
                self._sleep(delay)
        raise BackendUnavailable(f"no answer after {attempts} attempts ({reason})")


def create_client(config: ClientConfig, sleep: Callable[[float], None] = time.sleep):
    """Client object for the configured backend."""
    if config.backend == Backend.MOCK:
        return MockCompletionClient(config.mock_rule)
    return HttpCompletionClient(config, sleep=sleep)


_CLIENTS: Dict[ClientConfig, Any] = {}
_CLIENTS_LOCK = threading.Lock()


def complete(prompt: str, cfg: ClientConfig) -> str:
    """One completion through a client shared by every caller with the same config."""
    with _CLIENTS_LOCK:
        client = _CLIENTS.get(cfg)
        if client is None:
            client = _CLIENTS[cfg] = create_client(cfg)
    return client.complete(prompt)
