"""LLM-in-the-loop optimizer.

Each iteration renders a five-part prompt (capacity/role, insight,
statement, personality, experiment) around the current best genotype, asks
a backend for a new candidate, parses the first feasible array out of the
reply, evaluates it and keeps it if it is strictly better.
"""
from __future__ import annotations

import json
import logging
import random
import re
import string
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Protocol

import httpx
import numpy as np

from .benchmark import BenchmarkTable, Instance
from .records import TrialRecord, Tracker
from .search_space import (
    NUM_EDGES,
    NUM_OPERATIONS,
    Genotype,
    format_genotype,
    random_genotype,
)

log = logging.getLogger(__name__)

PLACEHOLDERS = frozenset({"number_of_operations", "number_of_edges", "best_solution", "best_accuracy"})


class UnresolvedPlaceholder(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    capacity_role: str
    insight: str
    statement: str
    personality: str
    experiment: str

    SECTIONS = ("capacity_role", "insight", "statement", "personality", "experiment")

    def __post_init__(self):
        if not self.statement.strip() or not self.experiment.strip():
            raise ValueError("statement and experiment sections must be non-empty")

    def sections(self) -> list[str]:
        return [getattr(self, name) for name in self.SECTIONS]


DEFAULT_TEMPLATE = PromptTemplate(
    capacity_role=(
        "You are a combinatorial optimizer searching for neural network cell architectures "
        "that stay accurate under adversarial attack."
    ),
    insight="Higher accuracy is better; your goal is to maximize it.",
    statement=(
        "Each of the {number_of_edges} edges of the cell takes one of {number_of_operations} operations. "
        "Answer with a {number_of_edges}-bit array whose entries are integers in [0, {number_of_operations}). "
        "So far the best solution is {best_solution}, reaching accuracy {best_accuracy}."
    ),
    personality="",
    experiment="Reply with exactly one solution written as an array.",
)


@dataclass(frozen=True)
class PromptContext:
    best_solution: Genotype
    best_accuracy: float
    number_of_operations: int = NUM_OPERATIONS
    number_of_edges: int = NUM_EDGES

    def __post_init__(self):
        if self.number_of_operations != NUM_OPERATIONS or self.number_of_edges != NUM_EDGES:
            raise ValueError("prompt context does not match the search space")


def render_prompt(tpl: PromptTemplate, ctx: PromptContext) -> str:
    values = {
        "number_of_operations": str(ctx.number_of_operations),
        "number_of_edges": str(ctx.number_of_edges),
        "best_solution": format_genotype(ctx.best_solution),
        "best_accuracy": f"{ctx.best_accuracy:.2f}",
    }
    parts = []
    for text in tpl.sections():
        if not text.strip():
            continue
        for _, name, spec, conv in string.Formatter().parse(text):
            if name is not None and name not in PLACEHOLDERS:
                raise UnresolvedPlaceholder(f"unknown placeholder {{{name}}}")
        try:
            parts.append(text.format(**values))
        except (IndexError, ValueError) as exc:
            raise UnresolvedPlaceholder(str(exc)) from exc
    out = "\n".join(parts)
    leftover = re.search(r"\{(\w+)\}", out)
    if leftover:
        raise UnresolvedPlaceholder(f"placeholder {leftover.group(0)} left in prompt")
    return out


# ---------------------------------------------------------------------------
# response parsing


class ParseError(ValueError):
    def __init__(self, message: str, fragment: str):
        super().__init__(f"{message}: {fragment!r}")
        self.fragment = fragment


class NoArrayFound(ParseError):
    pass


class WrongLength(ParseError):
    pass


class OutOfRange(ParseError):
    pass


_INT_LIST = re.compile(r"\[\s*([+-]?\d+(?:\s*,\s*[+-]?\d+)*)\s*,?\s*\]")


def parse_solution(response: str, num_edges: int = NUM_EDGES, num_ops: int = NUM_OPERATIONS) -> Genotype:
    """Return the first bracketed integer list with ``num_edges`` entries in
    ``[0, num_ops)``.

    Anything else in the text (prose, code fences, other lists) is ignored.
    When no list qualifies, the error describes the most promising near miss.
    """
    wrong_length = out_of_range = None
    for m in _INT_LIST.finditer(response):
        values = [int(v) for v in m.group(1).split(",")]
        if len(values) != num_edges:
            wrong_length = wrong_length or m.group(0)
            continue
        if not all(0 <= v < num_ops for v in values):
            out_of_range = out_of_range or m.group(0)
            continue
        return Genotype(tuple(values))
    if out_of_range is not None:
        raise OutOfRange("gene values outside [0, %d)" % num_ops, out_of_range)
    if wrong_length is not None:
        raise WrongLength(f"array does not have {num_edges} entries", wrong_length)
    raise NoArrayFound("no integer array in response", response[:200])


# ---------------------------------------------------------------------------
# backends


class BackendError(RuntimeError):
    retryable = True


class AuthError(BackendError):
    retryable = False


class Timeout(BackendError):
    pass


class RateLimited(BackendError):
    pass


class TransportError(BackendError):
    pass


class BackendUnavailable(RuntimeError):
    pass


class LlmBackend(Protocol):
    name: str
    model: str

    def complete(self, prompt: str) -> str: ...


_PROSE = (
    "Sure! Here is one solution: {arr}. Good luck.",
    "Based on the current best, I suggest trying {arr}.",
    "```\n{arr}\n```",
    "A promising candidate architecture would be {arr}, which changes a few edges.",
    "Solution: {arr}",
)

PROFILES = ("perturb", "echo", "adversarial")
FAULTS = ("malformed", "out_of_range", "wrong_length", "empty")


@dataclass
class MockBackend:
    """Deterministic offline stand-in for a chat model.

    ``perturb`` reads the best array from the prompt and changes 1 or 2
    genes to different values. ``echo`` returns the best array unchanged.
    ``adversarial`` behaves like ``perturb`` but emits each fault kind in
    ``fault_rates`` with the given probability.
    """

    seed: int = 0
    profile: str = "perturb"
    fault_rates: dict[str, float] = field(default_factory=dict)
    name: str = "mock"
    model: str = "mock-1"
    calls: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown mock profile {self.profile!r}")
        unknown = set(self.fault_rates) - set(FAULTS)
        if unknown:
            raise ValueError(f"unknown fault kinds: {sorted(unknown)}")
        if sum(self.fault_rates.values()) > 1.0 + 1e-12:
            raise ValueError("fault rates must sum to at most 1")
        self._rng = random.Random(self.seed)

    def complete(self, prompt: str) -> str:
        self.calls += 1
        rng = self._rng
        if self.profile == "adversarial":
            u = rng.random()
            for kind in FAULTS:
                rate = self.fault_rates.get(kind, 0.0)
                if u < rate:
                    return self._fault(kind)
                u -= rate
        try:
            best = list(parse_solution(prompt).genes)
        except ParseError:
            best = [rng.randrange(NUM_OPERATIONS) for _ in range(NUM_EDGES)]
        if self.profile != "echo":
            for pos in rng.sample(range(NUM_EDGES), rng.choice((1, 2))):
                best[pos] = rng.choice([v for v in range(NUM_OPERATIONS) if v != best[pos]])
        arr = "[" + ", ".join(map(str, best)) + "]"
        return rng.choice(_PROSE).format(arr=arr)

    def _fault(self, kind: str) -> str:
        rng = self._rng
        if kind == "empty":
            return ""
        if kind == "malformed":
            words = ["I", "think", "the", "architecture", "should", "use", "convolutions", "everywhere"]
            return " ".join(rng.choice(words) for _ in range(rng.randint(3, 12))) + " (3; 1; 4)"
        if kind == "out_of_range":
            vals = [rng.randrange(NUM_OPERATIONS) for _ in range(NUM_EDGES)]
            vals[rng.randrange(NUM_EDGES)] = rng.randint(NUM_OPERATIONS, 9)
            return f"Try {vals}."
        n = rng.choice([k for k in range(1, 10) if k != NUM_EDGES])
        return "Try " + str([rng.randrange(NUM_OPERATIONS) for _ in range(n)]) + "."


def mock_backend(seed: int = 0, profile: str = "perturb", **fault_rates: float) -> MockBackend:
    return MockBackend(seed=seed, profile=profile, fault_rates=fault_rates)


class RateLimiter:
    """Caps concurrent requests and requests per rolling minute; thread-safe."""

    def __init__(self, max_concurrent: int = 4, requests_per_minute: int = 60, clock=time.monotonic, sleep=time.sleep):
        self._slots = threading.BoundedSemaphore(max_concurrent)
        self._rpm = requests_per_minute
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()
        self._clock = clock
        self._sleep = sleep

    def __enter__(self):
        self._slots.acquire()
        try:
            while self._rpm > 0:
                with self._lock:
                    now = self._clock()
                    while self._stamps and now - self._stamps[0] >= 60.0:
                        self._stamps.popleft()
                    if len(self._stamps) < self._rpm:
                        self._stamps.append(now)
                        break
                    wait = 60.0 - (now - self._stamps[0])
                self._sleep(wait)
        except BaseException:
            self._slots.release()
            raise
        return self

    def __exit__(self, *exc):
        self._slots.release()


API_KEY_ENV = "LLMO_API_KEY"


@dataclass
class RemoteConfig:
    endpoint: str
    model: str
    timeout_s: float = 30.0
    max_attempts: int = 3
    max_concurrent: int = 4
    requests_per_minute: int = 60
    backoff_s: float = 1.0
    sampling: dict = field(default_factory=dict)


class RemoteBackend:
    """Single-turn chat-completions client (OpenAI-compatible wire format)."""

    name = "remote"

    def __init__(self, config: RemoteConfig, api_key: str | None = None, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        if not api_key:
            raise AuthError(f"no API key; set {API_KEY_ENV}")
        self.config = config
        self.model = config.model
        self._api_key = api_key
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)
        self._limiter = RateLimiter(config.max_concurrent, config.requests_per_minute)
        self._sleep = sleep
        self.attempts = 0

    def complete(self, prompt: str) -> str:
        cfg = self.config
        last: BackendError | None = None
        for attempt in range(cfg.max_attempts):
            if attempt:
                self._sleep(cfg.backoff_s * 2 ** (attempt - 1))
            try:
                with self._limiter:
                    self.attempts += 1
                    return self._request(prompt)
            except BackendError as exc:
                if not exc.retryable:
                    raise
                log.warning("LLM request failed (attempt %d/%d): %s", attempt + 1, cfg.max_attempts, exc)
                last = exc
        raise last

    def _request(self, prompt: str) -> str:
        body = {"model": self.config.model, "messages": [{"role": "user", "content": prompt}], **self.config.sampling}
        try:
            resp = self._client.post(
                self.config.endpoint, json=body, headers={"Authorization": f"Bearer {self._api_key}"}
            )
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc) or "request timed out") from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code == 429:
            raise RateLimited("HTTP 429")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {resp.text[:200]}") from exc

    def close(self):
        self._client.close()


def remote_backend(config: RemoteConfig, env: dict | None = None, **kw) -> RemoteBackend:
    import os

    env = os.environ if env is None else env
    return RemoteBackend(config, api_key=env.get(API_KEY_ENV), **kw)


# ---------------------------------------------------------------------------
# the optimization loop


@dataclass
class LlmoConfig:
    budget: int = 30
    parse_retry_cap: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.parse_retry_cap < 0:
            raise ValueError("parse_retry_cap must be >= 0")


def llmo_run(
    cfg: LlmoConfig,
    tpl: PromptTemplate,
    table: BenchmarkTable,
    instance: Instance,
    backend: LlmBackend,
    trial: int = 0,
    transcript: IO[str] | None = None,
    keep_evaluated: bool = False,
) -> TrialRecord:
    """Run one LLMO trial; one fitness evaluation per accepted candidate.

    Re-queries after an unparseable reply are free. After ``parse_retry_cap``
    failed re-queries a uniformly random genotype is evaluated instead.
    A backend that keeps failing ends the trial early with an incomplete
    record.
    """
    rng = np.random.default_rng(cfg.seed)
    tracker = Tracker(table, instance, cfg.budget, keep_evaluated=keep_evaluated)
    best = random_genotype(rng)
    best_acc = tracker.evaluate(best)
    iteration = 0
    while tracker.remaining > 0:
        iteration += 1
        prompt = render_prompt(tpl, PromptContext(best, best_acc))
        candidate = None
        for _ in range(cfg.parse_retry_cap + 1):
            try:
                response = backend.complete(prompt)
            except BackendError as exc:
                log.error("backend unavailable, aborting trial %d: %s", trial, exc)
                return tracker.record("llmo", trial, cfg.seed, complete=False)
            try:
                candidate = parse_solution(response)
            except ParseError as exc:
                log.debug("unparseable response: %s", exc)
                _log_transcript(transcript, iteration, prompt, response, None, False)
                continue
            break
        if candidate is None:
            candidate = random_genotype(rng)
        acc = tracker.evaluate(candidate)
        accepted = acc > best_acc
        if accepted:
            best, best_acc = candidate, acc
        _log_transcript(transcript, iteration, prompt, response, candidate, accepted)
    return tracker.record("llmo", trial, cfg.seed)


def _log_transcript(fh, iteration, prompt, response, parsed, accepted):
    if fh is None:
        return
    rec = {
        "iteration": iteration,
        "prompt": prompt,
        "response": response,
        "parsed": None if parsed is None else list(parsed.genes),
        "accepted": accepted,
    }
    fh.write(json.dumps(rec) + "\n")


def random_search_run(budget: int, seed: int, table: BenchmarkTable, instance: Instance, trial: int = 0) -> TrialRecord:
    """Uniform random sampling drawn from the same stream layout LLMO uses."""
    rng = np.random.default_rng(seed)
    tracker = Tracker(table, instance, budget)
    while tracker.remaining > 0:
        tracker.evaluate(random_genotype(rng))
    return tracker.record("random", trial, seed)
