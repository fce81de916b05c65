import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llmo.benchmark import AttackKind, BenchmarkTable, DatasetKind, Instance, SurrogateSource, generate_surrogate
from llmo.llm_optimizer import (
    API_KEY_ENV,
    DEFAULT_TEMPLATE,
    AuthError,
    LlmoConfig,
    MockBackend,
    NoArrayFound,
    OutOfRange,
    ParseError,
    PromptContext,
    PromptTemplate,
    RateLimiter,
    RemoteConfig,
    TransportError,
    UnresolvedPlaceholder,
    WrongLength,
    llmo_run,
    mock_backend,
    parse_solution,
    random_search_run,
    remote_backend,
    render_prompt,
)
from llmo.search_space import genotype_from_indices, hamming_distance

INST = Instance(DatasetKind.CIFAR10, AttackKind.CLEAN)
G = genotype_from_indices([3, 1, 0, 4, 2, 2])
genotypes = st.lists(st.integers(0, 4), min_size=6, max_size=6).map(genotype_from_indices)


@pytest.fixture(scope="module")
def table():
    return generate_surrogate(11, 0.3)


# --- prompt rendering --------------------------------------------------------


def test_render_default_prompt():
    text = render_prompt(DEFAULT_TEMPLATE, PromptContext(G, 68.35))
    for needle in ("6-bit array", "[0, 5)", "[3,1,0,4,2,2]", "68.35"):
        assert needle in text
    assert "{" not in text


def test_render_formats_accuracy_to_two_decimals():
    assert "94.00" in render_prompt(DEFAULT_TEMPLATE, PromptContext(G, 94.0))
    assert "72.17" in render_prompt(DEFAULT_TEMPLATE, PromptContext(G, 72.1749))


def test_empty_personality_is_omitted():
    text = render_prompt(DEFAULT_TEMPLATE, PromptContext(G, 1.0))
    assert DEFAULT_TEMPLATE.personality == ""
    assert len(text.splitlines()) == 4
    with_p = PromptTemplate("role", "insight", "{best_solution}", "Be terse.", "One please.")
    assert render_prompt(with_p, PromptContext(G, 1.0)).splitlines()[3] == "Be terse."


def test_unknown_placeholder():
    tpl = PromptTemplate("role {foo}", "", "{best_solution}", "", "go")
    with pytest.raises(UnresolvedPlaceholder):
        render_prompt(tpl, PromptContext(G, 1.0))


def test_template_requires_statement_and_experiment():
    with pytest.raises(ValueError):
        PromptTemplate("a", "b", "  ", "", "e")
    with pytest.raises(ValueError):
        PromptTemplate("a", "b", "s", "", "")


def test_context_must_match_search_space():
    with pytest.raises(ValueError):
        PromptContext(G, 1.0, number_of_edges=7)


@given(genotypes, st.floats(0, 100))
def test_prompt_round_trip(g, acc):
    assert parse_solution(render_prompt(DEFAULT_TEMPLATE, PromptContext(g, acc))) == g


# --- parsing -----------------------------------------------------------------


def test_parse_examples():
    assert parse_solution("Sure! Here is one solution: [3, 1, 0, 4, 2, 2]. Good luck.") == G
    assert parse_solution("[1,2,3] and then [4,4,0,0,1,3]").genes == (4, 4, 0, 0, 1, 3)
    with pytest.raises(OutOfRange):
        parse_solution("[5,0,0,0,0,0]")


def test_parse_tolerates_fences_and_whitespace():
    assert parse_solution("```python\n[ 3,1 ,0,\n 4, 2, 2 ]\n```") == G
    assert parse_solution("[7, 7, 7, 7, 7, 7] no wait [3,1,0,4,2,2]") == G


def test_parse_errors_carry_fragment():
    with pytest.raises(NoArrayFound):
        parse_solution("I cannot help with that.")
    with pytest.raises(WrongLength) as exc:
        parse_solution("maybe [1, 2, 3]?")
    assert exc.value.fragment == "[1, 2, 3]"
    with pytest.raises(OutOfRange):
        parse_solution("[0, 1, 2, 3, 4, -1]")
    with pytest.raises(NoArrayFound):
        parse_solution("[0.5, 1, 2, 3, 4, 1]")
    with pytest.raises(NoArrayFound):
        parse_solution("")


# --- mock backend --------------------------------------------------------------


def test_mock_perturbs_one_or_two_genes():
    prompt = render_prompt(DEFAULT_TEMPLATE, PromptContext(genotype_from_indices([0] * 6), 50.0))
    backend = mock_backend(seed=3)
    distances = set()
    for _ in range(200):
        g = parse_solution(backend.complete(prompt))
        distances.add(hamming_distance(g, genotype_from_indices([0] * 6)))
    assert distances == {1, 2}


def test_mock_is_deterministic():
    prompt = render_prompt(DEFAULT_TEMPLATE, PromptContext(G, 50.0))
    assert mock_backend(seed=8).complete(prompt) == mock_backend(seed=8).complete(prompt)


@pytest.mark.parametrize("fault", ["wrong_length", "malformed", "out_of_range", "empty"])
def test_adversarial_fault_always_unparseable(fault):
    prompt = render_prompt(DEFAULT_TEMPLATE, PromptContext(G, 50.0))
    backend = mock_backend(seed=1, profile="adversarial", **{fault: 1.0})
    for _ in range(300):
        with pytest.raises(ParseError):
            parse_solution(backend.complete(prompt))


def test_adversarial_partial_rate():
    prompt = render_prompt(DEFAULT_TEMPLATE, PromptContext(G, 50.0))
    backend = mock_backend(seed=4, profile="adversarial", malformed=0.3)
    ok = 0
    for _ in range(2000):
        try:
            parse_solution(backend.complete(prompt))
            ok += 1
        except ParseError:
            pass
    assert 0.66 < ok / 2000 < 0.74


def test_mock_rejects_bad_config():
    with pytest.raises(ValueError):
        MockBackend(profile="nope")
    with pytest.raises(ValueError):
        MockBackend(profile="adversarial", fault_rates={"malformed": 0.7, "empty": 0.7})


# --- remote backend -----------------------------------------------------------


class _Stub:
    """Local chat-completions stub: fails the first ``failures`` requests."""

    def __init__(self, failures=0, status=500, reply="ok [1,1,1,1,1,1]"):
        self.failures, self.status, self.reply = failures, status, reply
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append((dict(self.headers), body))
                if len(stub.requests) <= stub.failures:
                    self.send_response(stub.status)
                    self.end_headers()
                    self.wfile.write(b"busy")
                    return
                payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": stub.reply}}]})
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(payload.encode())

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_factory():
    made = []

    def make(**kw):
        s = _Stub(**kw)
        made.append(s)
        return s

    yield make
    for s in made:
        s.close()


def _config(url, **kw):
    return RemoteConfig(endpoint=url, model="test-model", backoff_s=0.0, **kw)


def test_remote_missing_key_fails_before_network():
    def boom(request):
        raise AssertionError("network touched")

    with pytest.raises(AuthError):
        remote_backend(_config("http://unused"), env={}, transport=httpx.MockTransport(boom))


def test_remote_retries_transport_failures(stub_factory):
    stub = stub_factory(failures=2)
    backend = remote_backend(_config(stub.url), env={API_KEY_ENV: "k"})
    assert backend.complete("hello") == "ok [1,1,1,1,1,1]"
    assert backend.attempts == 3 and len(stub.requests) == 3
    headers, body = stub.requests[-1]
    assert headers["Authorization"] == "Bearer k"
    assert body == {"model": "test-model", "messages": [{"role": "user", "content": "hello"}]}


def test_remote_gives_up_after_max_attempts(stub_factory):
    stub = stub_factory(failures=10, status=429)
    backend = remote_backend(_config(stub.url, max_attempts=3), env={API_KEY_ENV: "k"})
    with pytest.raises(Exception) as exc:
        backend.complete("x")
    assert exc.value.retryable
    assert len(stub.requests) == 3


def test_remote_auth_error_is_not_retried(stub_factory):
    stub = stub_factory(failures=10, status=401)
    backend = remote_backend(_config(stub.url), env={API_KEY_ENV: "bad"})
    with pytest.raises(AuthError):
        backend.complete("x")
    assert len(stub.requests) == 1


def test_remote_passes_sampling_params(stub_factory):
    stub = stub_factory()
    backend = remote_backend(_config(stub.url, sampling={"temperature": 0.2}), env={API_KEY_ENV: "k"})
    backend.complete("x")
    assert stub.requests[0][1]["temperature"] == 0.2


def test_remote_timeout_and_bad_body():
    sleeps = []

    def slow(request):
        raise httpx.ReadTimeout("slow", request=request)

    backend = remote_backend(_config("http://x/v1", max_attempts=2), env={API_KEY_ENV: "k"},
                             transport=httpx.MockTransport(slow), sleep=sleeps.append)
    with pytest.raises(Exception) as exc:
        backend.complete("x")
    assert type(exc.value).__name__ == "Timeout" and backend.attempts == 2

    junk = remote_backend(_config("http://x/v1", max_attempts=1), env={API_KEY_ENV: "k"},
                          transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"nope": 1})))
    with pytest.raises(TransportError):
        junk.complete("x")


def test_remote_backoff_is_exponential():
    sleeps = []
    backend = remote_backend(
        RemoteConfig(endpoint="http://x/v1", model="m", max_attempts=4, backoff_s=0.5),
        env={API_KEY_ENV: "k"},
        transport=httpx.MockTransport(lambda r: httpx.Response(503)),
        sleep=sleeps.append,
    )
    with pytest.raises(TransportError):
        backend.complete("x")
    assert sleeps == [0.5, 1.0, 2.0]


def test_rate_limiter_window():
    now = [0.0]
    waits = []

    def sleep(s):
        waits.append(s)
        now[0] += s

    limiter = RateLimiter(max_concurrent=2, requests_per_minute=2, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        with limiter:
            now[0] += 1.0
    assert waits == [58.0]


def test_rate_limiter_caps_concurrency():
    limiter = RateLimiter(max_concurrent=2, requests_per_minute=0)
    active, peak = [0], [0]
    lock = threading.Lock()
    gate = threading.Event()

    def work():
        with limiter:
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            gate.wait(0.05)
            with lock:
                active[0] -= 1

    threads = [threading.Thread(target=work) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] == 2


# --- the loop ----------------------------------------------------------------


def test_llmo_budget_and_trace(table):
    rec = llmo_run(LlmoConfig(budget=30, seed=1), DEFAULT_TEMPLATE, table, INST, mock_backend(2), keep_evaluated=True)
    assert rec.complete and len(rec.trace) == 30 and len(rec.evaluated) == 30
    assert all(b >= a for a, b in zip(rec.trace, rec.trace[1:]))
    assert rec.final_accuracy == max(table.lookup(g, INST.dataset, INST.attack) for g in rec.evaluated)


def test_llmo_echo_backend_never_moves(table):
    rec = llmo_run(LlmoConfig(budget=30, seed=5), DEFAULT_TEMPLATE, table, INST, mock_backend(0, "echo"), keep_evaluated=True)
    assert len(set(rec.evaluated)) == 1
    assert rec.final_genotype == rec.evaluated[0]
    assert len(set(rec.trace)) == 1


def test_llmo_replaces_only_on_strict_improvement():
    flat = BenchmarkTable(SurrogateSource(0, 0.0), np.full((15625, 2, 5), 42.0))
    rec = llmo_run(LlmoConfig(budget=20, seed=3), DEFAULT_TEMPLATE, flat, INST, mock_backend(1), keep_evaluated=True)
    assert len(set(rec.evaluated)) > 1
    assert rec.final_genotype == rec.evaluated[0]


def test_llmo_always_malformed_is_random_search(table):
    for seed in range(5):
        bad = mock_backend(seed, "adversarial", malformed=1.0)
        rec = llmo_run(LlmoConfig(budget=30, seed=seed), DEFAULT_TEMPLATE, table, INST, bad)
        ref = random_search_run(30, seed, table, INST)
        assert rec.trace == ref.trace
        # 1 initial + 29 iterations x (1 + 3 retries) queries
        assert bad.calls == 29 * 4


class _Scripted:
    name, model = "scripted", "s"

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        r = self.replies.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_parse_retries_are_free(table):
    backend = _Scripted(["nonsense", "[9,9,9,9,9,9]", "here: [1,1,1,1,1,1]", "[2,2,2,2,2,2]"])
    rec = llmo_run(LlmoConfig(budget=3, seed=0), DEFAULT_TEMPLATE, table, INST, backend, keep_evaluated=True)
    assert backend.calls == 4 and len(rec.trace) == 3
    assert [g.genes for g in rec.evaluated[1:]] == [(1,) * 6, (2,) * 6]


def test_retry_cap_zero_falls_back_immediately(table):
    backend = _Scripted(["nonsense"] * 5)
    rec = llmo_run(LlmoConfig(budget=6, seed=0, parse_retry_cap=0), DEFAULT_TEMPLATE, table, INST, backend)
    assert backend.calls == 5 and len(rec.trace) == 6


def test_backend_failure_aborts_with_partial_record(table):
    backend = _Scripted(["[1,1,1,1,1,1]", TransportError("down")])
    rec = llmo_run(LlmoConfig(budget=30, seed=0), DEFAULT_TEMPLATE, table, INST, backend)
    assert not rec.complete
    assert len(rec.trace) == 2


def test_transcript_records(table):
    buf = io.StringIO()
    backend = _Scripted(["oops", "[1,1,1,1,1,1]", "[0,0,0,0,0,0]"])
    llmo_run(LlmoConfig(budget=3, seed=0), DEFAULT_TEMPLATE, table, INST, backend, transcript=buf)
    lines = [json.loads(l) for l in buf.getvalue().splitlines()]
    assert [l["iteration"] for l in lines] == [1, 1, 2]
    assert lines[0]["parsed"] is None and lines[1]["parsed"] == [1] * 6
    assert set(lines[0]) == {"iteration", "prompt", "response", "parsed", "accepted"}


def test_llmo_config_validation():
    with pytest.raises(ValueError):
        LlmoConfig(budget=0)
    with pytest.raises(ValueError):
        LlmoConfig(parse_retry_cap=-1)
