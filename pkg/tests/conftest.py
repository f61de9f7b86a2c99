import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from models.instance import Instance
from models.llm import CacheMode, LlmResponse, TokenLogprob
from models.queries import QuerySuite
from models.statement import StatementFactory
from services.db import CacheStore
from services.llm_client import LlmBackend
from services.synthetic import make_env


class PlantedBlocks:
    """Disjoint agent blocks; every agent values only its own block's statement."""

    def __init__(self, sizes, costs, budget, top=Fraction(2)):
        self.top = Fraction(top)
        self.factory = StatementFactory()
        self.block_of = [block for block, size in enumerate(sizes) for _ in range(size)]
        self.statements = [self.factory.create(payload=block, cost=cost) for block, cost in enumerate(costs)]
        self.instance = Instance.create([f"member of block {b}" for b in self.block_of], budget,
                                        [self.top, 1, 0])

    def utility(self, agent, statement):
        return self.top if self.block_of[agent] == statement.payload else Fraction(0)

    def gen(self, agents, level, cost_cap, rng):
        fitting = [s for s in self.statements if s.cost <= cost_cap]
        if not fitting:
            return None
        return max(fitting, key=lambda s: (sum(1 for a in agents if self.utility(a, s) >= level), -s.id))

    def suite(self) -> QuerySuite:
        return QuerySuite(disc=self.utility, gen=self.gen, factory=self.factory)


@pytest.fixture
def planted_blocks():
    return PlantedBlocks


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="module")
def default_env():
    return make_env(seed=0, num_issues=5, opinion_count=5, n=60, budget=15)


@pytest.fixture(scope="module")
def small_env():
    return make_env(seed=3, num_issues=3, opinion_count=3, n=8, budget=6)


class ScriptedBackend:
    """
    In-process stand-in for LlmBackend.

    responder(system, user, nonce, logprobs) returns an LlmResponse or a plain
    string; embedder(texts) returns one vector per text.
    """

    def __init__(self, responder, embedder=None):
        self.responder = responder
        self.embedder = embedder or (lambda texts: [[float(len(text))] for text in texts])
        self.calls = []

    def chat(self, system, user, temperature=None, max_tokens=None, logprobs=False, top_logprobs=None, nonce=0):
        self.calls.append((system, user, nonce))
        answer = self.responder(system, user, nonce, logprobs)
        return answer if isinstance(answer, LlmResponse) else LlmResponse(text=answer)

    def embed(self, texts):
        return np.asarray(self.embedder(list(texts)), dtype=np.float64).reshape(len(texts), -1)

    def map(self, fn, items):
        return [fn(item) for item in items]


def rating_response(*pairs):
    """LlmResponse whose first token carries the given (token, probability) alternatives."""
    top = [TokenLogprob(token=token, logprob=math.log(p)) for token, p in pairs]
    return LlmResponse(text=pairs[0][0], top_logprobs=top)


@pytest.fixture
def scripted_backend():
    return ScriptedBackend


FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures"
BOWLING_GREEN_AGENT = ("I have lived in Bowling Green for twelve years. Traffic on Nashville Road is the worst "
                       "part of my commute, and I want more bike lanes downtown.")
BOWLING_GREEN_STATEMENT = "Ease traffic on Nashville Road and add protected bike lanes downtown."


@pytest.fixture
def bowling_green_backend():
    """Replay-only backend over the committed Bowling Green recording."""
    store = CacheStore("sqlite://")
    store.import_jsonl(FIXTURE_DIR / "bowling_green_cache.jsonl")
    return LlmBackend(None, store, mode=CacheMode.REPLAY)
