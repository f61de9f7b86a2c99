import httpx
import numpy as np
import orjson
import pytest

from conftest import BOWLING_GREEN_AGENT, BOWLING_GREEN_STATEMENT
from models.llm import CacheMode, ChatMessage, EmbeddingRequest, EmbeddingResponse, LlmRequest, LlmResponse
from services.db import CacheStore
from services.llm_client import ChatClient, LlmBackend, chat, embed
from utils.exceptions import CacheMissError, ConfigError, DatasetError, TransportError
from utils.rate_limit import TokenBucket
from utils.text import render_prompt


def _completion(text, top=None):
    choice = {"index": 0, "finish_reason": "stop", "message": {"role": "assistant", "content": text},
              "logprobs": None}
    if top is not None:
        choice["logprobs"] = {"content": [{"token": top[0][0], "logprob": top[0][1], "bytes": None,
                                           "top_logprobs": [{"token": t, "logprob": lp, "bytes": None}
                                                            for t, lp in top]}]}
    return {"id": "chatcmpl-1", "object": "chat.completion", "created": 0, "model": "gpt-4o", "choices": [choice]}


def _embeddings(*rows):
    return {"object": "list", "model": "e", "usage": {"prompt_tokens": 1, "total_tokens": 1},
            "data": [{"object": "embedding", "index": index, "embedding": vector} for index, vector in rows]}


class Recorder:
    """httpx handler answering from a list of (status, body) and counting calls."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        self.headers = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(orjson.loads(request.content))
        self.headers.append(request.headers)
        status, body = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        return httpx.Response(status, json=body, headers={"retry-after-ms": "1"})


def _client(handler, **kwargs):
    return ChatClient("https://llm.test/v1", api_key="secret", transport=httpx.MockTransport(handler), **kwargs)


def _request(text="Rate this", nonce=0):
    return LlmRequest(model="gpt-4o", messages=(ChatMessage(role="user", content=text),), nonce=nonce)


@pytest.fixture
def store():
    return CacheStore("sqlite://")


def test_complete_parses_text_and_top_logprobs():
    handler = Recorder([(200, _completion("5", top=[("5", -0.1), ("6", -2.3)]))])
    request = LlmRequest(model="gpt-4o", messages=(ChatMessage(role="user", content="Rate this"),),
                         temperature=0, max_tokens=1, logprobs=True, top_logprobs=20)
    response = _client(handler).complete(request)
    assert response.text == "5"
    assert [item.token for item in response.top_logprobs] == ["5", "6"]
    body = handler.requests[0]
    assert body["model"] == "gpt-4o"
    assert body["logprobs"] is True and body["top_logprobs"] == 20
    assert "nonce" not in body
    assert handler.headers[0]["authorization"] == "Bearer secret"


def test_retryable_status_is_retried():
    handler = Recorder([(429, {}), (503, {}), (200, _completion("ok"))])
    assert _client(handler, max_retries=2).complete(_request()).text == "ok"
    assert len(handler.requests) == 3


def test_retries_exhausted_raise_transport_error():
    handler = Recorder([(500, {})])
    with pytest.raises(TransportError):
        _client(handler, max_retries=1).complete(_request())
    assert len(handler.requests) == 2


def test_client_error_is_not_retried():
    handler = Recorder([(401, {"error": {"message": "bad key"}})])
    with pytest.raises(TransportError):
        _client(handler, max_retries=3).complete(_request())
    assert len(handler.requests) == 1


def test_embeddings_are_ordered_by_index():
    handler = Recorder([(200, _embeddings((1, [0.0, 1.0]), (0, [1.0, 0.0])))])
    response = _client(handler).embed(EmbeddingRequest(model="e", texts=("a", "b")))
    assert response.vectors == [[1.0, 0.0], [0.0, 1.0]]
    assert handler.requests[0]["input"] == ["a", "b"]


def test_record_then_replay_serves_from_cache(store):
    handler = Recorder([(200, _completion("recorded"))])
    client = _client(handler)
    assert chat(_request(), store, CacheMode.RECORD, client).text == "recorded"
    assert chat(_request(), store, CacheMode.RECORD, client).text == "recorded"
    assert len(handler.requests) == 1
    assert chat(_request(), store, CacheMode.REPLAY).text == "recorded"


def test_replay_miss_names_the_key(store):
    request = _request("never asked")
    with pytest.raises(CacheMissError) as info:
        chat(request, store, CacheMode.REPLAY)
    assert info.value.key == request.cache_key()


def test_nonce_separates_cache_entries(store):
    handler = Recorder([(200, _completion("first")), (200, _completion("second"))])
    client = _client(handler)
    assert chat(_request(nonce=0), store, CacheMode.RECORD, client).text == "first"
    assert chat(_request(nonce=1), store, CacheMode.RECORD, client).text == "second"
    assert store.count() == 2


def test_live_mode_never_writes(store):
    handler = Recorder([(200, _completion("live"))])
    chat(_request(), store, CacheMode.LIVE, _client(handler))
    assert store.count() == 0


def test_record_without_store_is_a_config_error():
    with pytest.raises(ConfigError):
        chat(_request(), None, CacheMode.RECORD, _client(Recorder([(200, _completion("x"))])))


def test_fixture_export_and_import(store, tmp_path):
    handler = Recorder([(200, _completion("a")), (200, _embeddings((0, [0.5])))])
    client = _client(handler)
    chat(_request(), store, CacheMode.RECORD, client)
    embed(EmbeddingRequest(model="e", texts=("t",)), store, CacheMode.RECORD, client)
    path = tmp_path / "fixture.jsonl"
    assert store.export_jsonl(path) == 2

    fresh = CacheStore("sqlite://")
    assert fresh.import_jsonl(path) == 2
    assert fresh.import_jsonl(path) == 0
    assert chat(_request(), fresh, CacheMode.REPLAY).text == "a"
    assert embed(EmbeddingRequest(model="e", texts=("t",)), fresh, CacheMode.REPLAY).vectors == [[0.5]]


def test_import_rejects_malformed_lines(store, tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"kind": "chat"}\n')
    with pytest.raises(DatasetError):
        store.import_jsonl(path)


class FakeClient:
    def __init__(self):
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return LlmResponse(text=request.messages[-1].content.upper())

    def embed(self, request):
        return EmbeddingResponse(vectors=[[float(len(text)), 1.0] for text in request.texts])


def test_backend_map_keeps_order_and_batches_embeddings():
    backend = LlmBackend(FakeClient(), None, mode="live", max_concurrency=4, embedding_batch=2)
    assert backend.map(lambda x: x * 2, range(10)) == [x * 2 for x in range(10)]
    matrix = backend.embed(["a", "bb", "ccc"])
    np.testing.assert_array_equal(matrix[:, 0], [1.0, 2.0, 3.0])
    assert backend.chat("system", "hello").text == "HELLO"


def test_token_bucket_waits_when_empty():
    now = [0.0]
    slept = []

    def sleep(seconds):
        slept.append(seconds)
        now[0] += seconds

    bucket = TokenBucket(rate=2.0, capacity=1, clock=lambda: now[0], sleep=sleep)
    assert bucket.acquire() == 0
    assert bucket.acquire() == pytest.approx(0.5)
    assert slept == [pytest.approx(0.5)]


def test_token_bucket_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        TokenBucket(rate=0)


RECORDED_COT = ('{"step1": "Commutes on Nashville Road, wants downtown bike lanes.", "step2": "Nothing missing.", '
                '"step3": "No contradictions.", "step4": "Covers both points.", "score": 5}')


def test_committed_recording_replays_byte_identical(bowling_green_backend):
    user = render_prompt("cot_user", user_information=BOWLING_GREEN_AGENT, statement=BOWLING_GREEN_STATEMENT)
    response = bowling_green_backend.chat(render_prompt("cot_system"), user, temperature=0)
    assert response.text == RECORDED_COT
    vectors = bowling_green_backend.embed([BOWLING_GREEN_AGENT, BOWLING_GREEN_STATEMENT])
    np.testing.assert_array_equal(vectors, [[0.125, -0.5, 0.75], [0.25, 0.5, -0.125]])


def test_backend_replay_miss_names_the_key(bowling_green_backend):
    expected = LlmRequest(model="gpt-4o",
                          messages=(ChatMessage(role="system", content="system"),
                                    ChatMessage(role="user", content="never recorded")),
                          temperature=0).cache_key()
    with pytest.raises(CacheMissError, match=expected) as info:
        bowling_green_backend.chat("system", "never recorded", temperature=0)
    assert info.value.key == expected
