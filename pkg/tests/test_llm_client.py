import socket
import threading
from dataclasses import dataclass, field

import pytest
from flask import Flask, Response, jsonify, request
from werkzeug.serving import make_server

from hiersg import llm_client
from hiersg.audit import RequestLog
from hiersg.error_handler import AuthError, BackendUnavailable, MalformedResponse
from hiersg.llm_client import (
    Backend,
    ClientConfig,
    HttpCompletionClient,
    MockCompletionClient,
    MockRule,
    create_client,
    extract_path,
)


@pytest.fixture(autouse=True)
def no_proxy(monkeypatch):
    monkeypatch.setenv('NO_PROXY', '127.0.0.1,localhost')
    monkeypatch.setenv('no_proxy', '127.0.0.1,localhost')


def chat_body(text):
    return {'choices': [{'message': {'role': 'assistant', 'content': text}}]}


@dataclass
class StubBackend:
    """Chat-completions endpoint answering from a script of (status, body) pairs."""
    url: str
    script: list = field(default_factory=list)
    received: list = field(default_factory=list)


@pytest.fixture
def backend():
    app = Flask('stub_backend')
    stub = StubBackend(url='')

    @app.post('/v1/chat/completions')
    def chat():
        stub.received.append({'json': request.get_json(), 'authorization': request.headers.get('Authorization')})
        status, body = stub.script.pop(0) if len(stub.script) > 1 else stub.script[0]
        if isinstance(body, str):
            return Response(body, status=status, mimetype='text/plain')
        return jsonify(body), status

    server = make_server('127.0.0.1', 0, app, threaded=True)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    stub.url = f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    yield stub
    server.shutdown()
    thread.join(timeout=5)


def unused_port():
    with socket.socket() as s:
        s.bind(('127.0.0.1', 0))
        return s.getsockname()[1]


def http_client(url, sleeps=None, **overrides):
    config = ClientConfig(backend=Backend.HTTP, endpoint=url, timeout=5.0, **overrides)
    sleep = sleeps.append if sleeps is not None else (lambda _: None)
    return HttpCompletionClient(config, sleep=sleep)


class TestHttpClient:
    def test_returns_extracted_text(self, backend):
        backend.script = [(200, chat_body("Yes"))]
        assert http_client(backend.url).complete("girl riding skateboard") == "Yes"
        payload = backend.received[0]['json']
        assert payload['temperature'] == 0
        assert payload['model'] == 'default'
        assert payload['messages'] == [{'role': 'user', 'content': "girl riding skateboard"}]

    def test_bearer_token_from_environment(self, backend, monkeypatch):
        monkeypatch.setenv('LLM_API_KEY', 'secret-token')
        backend.script = [(200, chat_body("No"))]
        http_client(backend.url).complete("x")
        assert backend.received[0]['authorization'] == 'Bearer secret-token'

    def test_no_key_no_header(self, backend, monkeypatch):
        monkeypatch.delenv('LLM_API_KEY', raising=False)
        backend.script = [(200, chat_body("No"))]
        http_client(backend.url).complete("x")
        assert backend.received[0]['authorization'] is None

    def test_custom_response_path(self, backend):
        backend.script = [(200, {'output': {'text': 'Yes'}})]
        assert http_client(backend.url, response_path='output.text').complete("x") == 'Yes'

    def test_server_errors_are_retried_with_backoff(self, backend):
        backend.script = [(500, "boom")]
        sleeps = []
        with pytest.raises(BackendUnavailable, match="4 attempts"):
            http_client(backend.url, sleeps, max_retries=3, backoff_base=0.5).complete("x")
        assert len(backend.received) == 4
        assert sleeps == [0.5, 1.0, 2.0]

    def test_recovers_after_transient_failure(self, backend):
        backend.script = [(503, "busy"), (200, chat_body("Yes"))]
        sleeps = []
        assert http_client(backend.url, sleeps).complete("x") == "Yes"
        assert len(backend.received) == 2
        assert len(sleeps) == 1

    def test_zero_retries(self, backend):
        backend.script = [(502, "bad gateway")]
        sleeps = []
        with pytest.raises(BackendUnavailable):
            http_client(backend.url, sleeps, max_retries=0).complete("x")
        assert len(backend.received) == 1
        assert sleeps == []

    @pytest.mark.parametrize("status", [401, 403])
    def test_auth_errors_are_not_retried(self, backend, status):
        backend.script = [(status, "denied")]
        with pytest.raises(AuthError):
            http_client(backend.url).complete("x")
        assert len(backend.received) == 1

    def test_client_errors_are_not_retried(self, backend):
        backend.script = [(404, "no such model")]
        with pytest.raises(BackendUnavailable, match="404"):
            http_client(backend.url).complete("x")
        assert len(backend.received) == 1

    def test_body_that_is_not_json(self, backend):
        backend.script = [(200, "plain text")]
        with pytest.raises(MalformedResponse):
            http_client(backend.url).complete("x")

    def test_missing_response_path(self, backend):
        backend.script = [(200, {'choices': []})]
        with pytest.raises(MalformedResponse):
            http_client(backend.url).complete("x")

    def test_connection_errors_are_retried(self):
        sleeps = []
        url = f"http://127.0.0.1:{unused_port()}/v1/chat/completions"
        with pytest.raises(BackendUnavailable, match="connection error"):
            http_client(url, sleeps, max_retries=2, backoff_base=0.1).complete("x")
        assert sleeps == pytest.approx([0.1, 0.2])

    def test_request_log(self, backend, tmp_path):
        backend.script = [(500, "boom"), (200, chat_body("Yes"))]
        log_path = tmp_path / 'logs' / 'requests.jsonl'
        http_client(backend.url, request_log=str(log_path)).complete("girl riding skateboard")
        entries = RequestLog(log_path).entries()
        assert [(e.status, e.http_status, e.attempt) for e in entries] == [('http_error', 500, 0), ('ok', 200, 1)]
        assert "girl" not in log_path.read_text(encoding='utf-8')
        assert len(entries[0].prompt_sha256) == 64


class TestExtractPath:
    def test_nested_lists_and_dicts(self):
        assert extract_path(chat_body("Yes"), 'choices.0.message.content') == "Yes"

    @pytest.mark.parametrize("data,path", [
        ({'choices': []}, 'choices.0.message.content'),
        ({'choices': {'x': 1}}, 'choices.0'),
        ({'a': 'text'}, 'a.b'),
        ({'a': 5}, 'a'),
    ])
    def test_failures(self, data, path):
        with pytest.raises(MalformedResponse):
            extract_path(data, path)


class TestMockClient:
    def test_blacklist_is_case_insensitive_substring(self):
        client = MockCompletionClient(MockRule(frozenset({'Girl on Tree'})))
        assert client.complete('Is "girl on tree" plausible?') == "No"
        assert client.complete('Is "girl on skateboard" plausible?') == "Yes"
        assert client.call_count == 2
        assert client.prompts[0].startswith('Is "girl on tree"')

    def test_default_answer(self):
        assert MockCompletionClient(MockRule(default_answer=False)).complete("anything") == "No"


class TestClientConfig:
    def test_backend_from_string(self):
        config = ClientConfig(backend='http', mock_blacklist=['a b c'])
        assert config.backend == Backend.HTTP
        assert config.mock_blacklist == ('a b c',)
        assert config.mock_rule == MockRule(frozenset({'a b c'}), True)

    @pytest.mark.parametrize("kwargs", [
        {'timeout': 0}, {'max_retries': -1}, {'backoff_base': -0.1}, {'max_in_flight': 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ClientConfig(**kwargs)

    def test_create_client(self):
        assert isinstance(create_client(ClientConfig()), MockCompletionClient)
        assert isinstance(create_client(ClientConfig(backend=Backend.HTTP)), HttpCompletionClient)


def test_module_level_complete_reuses_client(monkeypatch):
    monkeypatch.setattr(llm_client, '_CLIENTS', {})
    config = ClientConfig(mock_blacklist=('girl on tree',))
    assert llm_client.complete('girl on tree?', config) == "No"
    assert llm_client.complete('man on tree?', config) == "Yes"
    assert llm_client._CLIENTS[config].call_count == 2
