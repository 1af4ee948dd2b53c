"""Inference-client contracts against a local stub endpoint."""

import pytest

from debiaslab.client import ChatRequest, InferenceClient, cache_key
from debiaslab.errors import ConfigurationError, ProtocolError, TransportError

from stub_server import StubServer


def request(text="forecast please", model="m"):
    return ChatRequest(model=model, messages=[{"role": "user", "content": text}])


def make_client(stub, tmp_path=None, **kw):
    kw.setdefault("backoff_base", 0.01)
    return InferenceClient(
        endpoint=stub.endpoint,
        model="m",
        cache_dir=str(tmp_path / "cache") if tmp_path else None,
        **kw,
    )


def test_fixed_reply_returned():
    with StubServer() as stub:
        stub.state.reply = "hello numbers 1.5 and 2.5"
        client = make_client(stub)
        assert client.complete_chat(request()) == "hello numbers 1.5 and 2.5"


def test_two_failures_then_success_with_attempts_logged():
    with StubServer() as stub:
        stub.state.fail_first = 2
        client = make_client(stub, max_retries=3)
        assert client.complete_chat(request()) == stub.state.reply
        assert stub.state.calls == 3  # two 500s plus the success


def test_exhausted_retries_is_transport_error():
    with StubServer() as stub:
        stub.state.fail_first = 10
        client = make_client(stub, max_retries=2)
        with pytest.raises(TransportError):
            client.complete_chat(request())
        assert stub.state.calls == 3


def test_malformed_body_is_protocol_error():
    with StubServer() as stub:
        stub.state.malformed = True
        client = make_client(stub)
        with pytest.raises(ProtocolError):
            client.complete_chat(request())


def test_temperature_is_zero_in_every_payload():
    with StubServer() as stub:
        client = make_client(stub)
        client.run_batch([request(f"q{i}") for i in range(10)], parallelism=3)
        assert len(stub.state.payloads) == 10
        assert all(p["temperature"] == 0 for p in stub.state.payloads)
        assert all(p["model"] == "m" for p in stub.state.payloads)


def test_batch_order_preserved_under_random_delays():
    with StubServer() as stub:
        stub.state.random_delay = 0.05
        client = make_client(stub)
        reqs = [request(f"question-{i}") for i in range(100)]
        outcome = client.run_batch(reqs, parallelism=8)
        assert outcome.errors == {}
        assert len(outcome.responses) == 100
        assert all(r is not None for r in outcome.responses)
        assert stub.state.max_in_flight <= 8


def test_batch_in_flight_bound_respected():
    with StubServer() as stub:
        stub.state.delay = 0.02
        client = make_client(stub)
        client.run_batch([request(f"q{i}") for i in range(40)], parallelism=8)
        assert stub.state.max_in_flight <= 8
        stub.state.max_in_flight = 0
        client.run_batch([request(f"p{i}") for i in range(10)], parallelism=1)
        assert stub.state.max_in_flight == 1


def test_batch_order_with_cache_and_correctness(tmp_path):
    # deterministic per-request contents via the cache: response i belongs to request i
    with StubServer() as stub:
        stub.state.echo_last_number = True
        client = make_client(stub, tmp_path)
        reqs = [request(f"question-{i}") for i in range(30)]
        outcome = client.run_batch(reqs, parallelism=6)
        singles = [client.complete_chat(r) for r in reqs]  # all served from cache
        assert outcome.responses == singles


def test_duplicate_request_costs_one_network_call(tmp_path):
    with StubServer() as stub:
        client = make_client(stub, tmp_path)
        outcome = client.run_batch([request("same"), request("same")], parallelism=4)
        assert stub.state.calls == 1
        assert outcome.network_calls == 1
        assert outcome.cache_hits == 1
        assert outcome.responses[0] == outcome.responses[1]


def test_fully_cached_rerun_issues_zero_network_calls(tmp_path):
    with StubServer() as stub:
        client = make_client(stub, tmp_path)
        reqs = [request(f"q{i}") for i in range(12)]
        client.run_batch(reqs, parallelism=4)
        calls_after_first = stub.state.calls
        before = client.network_calls
        outcome = client.run_batch(reqs, parallelism=4)
        assert stub.state.calls == calls_after_first
        assert client.network_calls == before
        assert outcome.network_calls == 0
        assert outcome.cache_hits == len(reqs)


def test_cache_hit_returns_byte_identical_content(tmp_path):
    with StubServer() as stub:
        stub.state.reply = "content with unicode − 3.5"
        client = make_client(stub, tmp_path)
        first = client.complete_chat(request())
        stub.state.reply = "changed"
        second = client.complete_chat(request())
        assert first == second == "content with unicode − 3.5"


def test_individual_failures_recorded_without_abort(tmp_path):
    with StubServer() as stub:
        stub.state.malformed = True
        client = make_client(stub, tmp_path)
        outcome = client.run_batch([request("a"), request("b")], parallelism=2)
        assert set(outcome.errors) == {0, 1}
        assert outcome.responses == [None, None]


def test_parallelism_validation():
    with StubServer() as stub:
        client = make_client(stub)
        with pytest.raises(ConfigurationError):
            client.run_batch([request()], parallelism=0)
        with pytest.raises(ConfigurationError):
            InferenceClient(endpoint=stub.endpoint, parallelism=0)


def test_no_endpoint_configured(monkeypatch):
    monkeypatch.delenv("DEBIASLAB_ENDPOINT", raising=False)
    with pytest.raises(ConfigurationError):
        InferenceClient()


# ---------------------------------------------------------------------------
# Cache keys
# ---------------------------------------------------------------------------

def test_same_request_same_key():
    a = request("x")
    b = request("x")
    assert cache_key("http://e", a) == cache_key("http://e", b)


def test_any_field_change_changes_key():
    base = ChatRequest(model="m", messages=[{"role": "user", "content": "x"}])
    variants = [
        ChatRequest(model="m2", messages=[{"role": "user", "content": "x"}]),
        ChatRequest(model="m", messages=[{"role": "user", "content": "y"}]),
        ChatRequest(model="m", messages=[{"role": "user", "content": "x"}], temperature=0.1),
        ChatRequest(model="m", messages=[{"role": "user", "content": "x"}], max_tokens=128),
    ]
    keys = {cache_key("http://e", v) for v in variants}
    assert cache_key("http://e", base) not in keys
    assert len(keys) == 4
    assert cache_key("http://other", base) != cache_key("http://e", base)


def test_key_ignores_message_dict_field_order():
    a = ChatRequest(model="m", messages=[{"role": "user", "content": "x"}])
    b = ChatRequest(model="m", messages=[{"content": "x", "role": "user"}])
    assert cache_key("http://e", a) == cache_key("http://e", b)
