import re
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from conftest import BOWLING_GREEN_AGENT, BOWLING_GREEN_STATEMENT, ScriptedBackend, rating_response
from models.instance import Agent, Instance
from models.llm import CacheMode, EmbeddingResponse, EmbeddingState, LlmResponse, ProseDatasetConfig
from models.statement import Statement, StatementFactory
from services.audit import sample_violation_rate
from services.db import CacheStore
from services.llm_client import LlmBackend
from services.prose import (CotScorer, ProseRunner, ProseScorer, consensus_statement, cot_utility, disc_utility,
                            expected_score, parse_cot_score)
from utils.exceptions import CacheMissError, GenerationError, ScoringError
from utils.text import extract_opinion, parse_bullets, render_prompt, word_count

BLOCK_TEXT = {"A": "block A block A block A", "B": "block B block B", "C": "block C"}
_TEAM = re.compile(r"team-(\w)")
_BLOCK = re.compile(r"block (\w)")
_BUDGET = re.compile(r"at most (\d+) words")


def planted_responder(system, user, nonce, logprobs):
    """Agents on team-X fully agree with statements about block X and nothing else."""
    if system == render_prompt("agreement_system"):
        team, block = _TEAM.search(user), _BLOCK.search(user)
        agrees = team is not None and block is not None and team.group(1) == block.group(1)
        return rating_response(("6", 1.0)) if agrees else rating_response(("1", 1.0))
    if system == render_prompt("specificity_system"):
        return rating_response(("6", 1.0))
    if "Now write the opinion." in user:
        teams = Counter(_TEAM.findall(user))
        tag = min(teams, key=lambda t: (-teams[t], t))
        budget = _BUDGET.search(system)
        text = BLOCK_TEXT[tag]
        if budget is not None and word_count(text) > int(budget.group(1)):
            text = "way too long " * 20
        return f"<opinion>{text}</opinion>"
    if system == render_prompt("issue_statements_system"):
        return "DONE"
    return "4"


def planted_instance(sizes=(("A", 6), ("B", 4), ("C", 2)), budget=12):
    descriptions = [f"I am on team-{tag}, member {i}." for tag, size in sizes for i in range(size)]
    return Instance.create(descriptions, budget, ["6", "3", "1"])


def planted_embeddings(instance):
    tags = [_TEAM.search(agent.description).group(1) for agent in instance.agents]
    text = np.array([[1.0 if tag == t else 0.0 for t in "ABC"] for tag in tags])
    return EmbeddingState(text_embedding=text, rating_embedding=np.full((instance.n, 1), 4.0))


def planted_config(budget=12):
    return ProseDatasetConfig(name="planted", budget=budget, cost_list=(12, 8, 6, 4, 2, 1),
                              level_list=("6", "3", "1"), min_statement_length=0)


def _agent(description="I am on team-A."):
    return Agent(id=0, description=description)


def _statement(text="block A", sid=0):
    return Statement(id=sid, payload=text, cost=word_count(text))


def test_expected_score_weights_rating_tokens():
    assert expected_score(rating_response(("5", 0.5), ("6", 0.5))) == Fraction(11, 2)


def test_expected_score_ignores_non_rating_tokens():
    assert expected_score(rating_response(("4", 0.25), ("The", 0.75))) == 4


def test_expected_score_falls_back_to_text():
    assert expected_score(rating_response(("I'd say 3", 1.0))) == 3
    with pytest.raises(ScoringError):
        expected_score(rating_response(("no idea", 1.0)))


@pytest.mark.parametrize("agreement,specificity,expected", [("6", "6", 6), ("4", "1", 3)])
def test_disc_utility_penalizes_vague_statements(agreement, specificity, expected):
    def responder(system, user, nonce, logprobs):
        token = agreement if system == render_prompt("agreement_system") else specificity
        return rating_response((token, 1.0))

    assert disc_utility(_agent(), _statement(), 1, ScriptedBackend(responder)) == expected


def test_disc_utility_weighted_agreement():
    def responder(system, user, nonce, logprobs):
        if system == render_prompt("agreement_system"):
            return rating_response(("5", 0.5), ("6", 0.5))
        return rating_response(("6", 1.0))

    assert disc_utility(_agent(), _statement(), 1, ScriptedBackend(responder)) == Fraction(11, 2)


def test_parse_cot_score():
    assert parse_cot_score('Sure. {"step1": "likes it", "step4": "mostly", "score": 4}') == 4
    with pytest.raises(ScoringError):
        parse_cot_score('{"score": 7}')
    with pytest.raises(ScoringError):
        parse_cot_score("score: 4")


def test_cot_utility_asks_again_once():
    answers = {0: "not json", 1: '{"score": 5}'}
    backend = ScriptedBackend(lambda system, user, nonce, logprobs: answers[nonce])
    assert cot_utility(_agent(), _statement(), backend) == 5
    assert [call[2] for call in backend.calls] == [0, 1]

    stubborn = ScriptedBackend(lambda *args: '{"score": 9}')
    with pytest.raises(ScoringError):
        cot_utility(_agent(), _statement(), stubborn)


def test_recorded_bowling_green_scores_replay(bowling_green_backend):
    agent = Agent(id=0, description=BOWLING_GREEN_AGENT)
    statement = _statement(BOWLING_GREEN_STATEMENT)
    assert cot_utility(agent, statement, bowling_green_backend) == 5
    assert disc_utility(agent, statement, 1, bowling_green_backend) == Fraction(51, 10)


def test_consensus_statement_cost_is_word_count():
    backend = ScriptedBackend(lambda *args: "Here you go: <opinion>Refugees are welcome!</opinion>")
    statement = consensus_statement([_agent()], 10, backend, StatementFactory())
    assert statement.payload == "Refugees are welcome!"
    assert statement.cost == 3


def test_consensus_without_tags_fails_after_one_retry():
    backend = ScriptedBackend(lambda *args: "Refugees are welcome!")
    with pytest.raises(GenerationError):
        consensus_statement([_agent()], 10, backend, StatementFactory())
    assert len(backend.calls) == 2


def test_consensus_over_budget_is_rejected():
    backend = ScriptedBackend(lambda *args: "<opinion>Refugees are welcome!</opinion>")
    with pytest.raises(GenerationError):
        consensus_statement([_agent()], 2, backend, StatementFactory())


def test_word_count_and_tag_parsing():
    assert word_count("") == 0
    assert word_count("Disappointed hope.") == 2
    assert word_count("  a\t b\nc ") == 3
    assert extract_opinion("<opinion>\n  two   words </opinion>") == "two words"
    assert extract_opinion("<opinion>  </opinion>") is None
    assert parse_bullets("Intro\n- first\n* second\n3. third") == ["first", "second", "third"]


def test_scorer_memoizes_by_text_and_records_failures():
    def responder(system, user, nonce, logprobs):
        return "???" if "unreadable" in user else rating_response(("6", 1.0))

    backend = ScriptedBackend(responder)
    instance = planted_instance()
    scorer = ProseScorer(instance, backend, 1)
    assert scorer(0, _statement("block A", 0)) == 6
    calls = len(backend.calls)
    assert scorer(0, _statement("block A", 7)) == 6
    assert len(backend.calls) == calls

    assert scorer(0, _statement("unreadable", 1)) == scorer.failure_score == -2
    assert scorer.failures == [(0, 1)]


def test_cot_scorer_scores_by_agent_id():
    backend = ScriptedBackend(lambda system, user, nonce, logprobs:
                              '{"score": 6}' if "team-A" in user else '{"score": 2}')
    instance = planted_instance()
    scorer = CotScorer(instance, backend)
    assert scorer.many([0, 11], _statement()) == [6, 2]


def _planted_run(seed=0):
    instance = planted_instance()
    runner = ProseRunner(ScriptedBackend(planted_responder))
    result = runner.run(instance, planted_config(), np.random.default_rng(seed), embeddings=planted_embeddings(instance))
    return instance, runner, result


def test_planted_blocks_get_one_statement_each():
    instance, runner, result = _planted_run()
    assert [s.payload for s in result.slate.statements] == [BLOCK_TEXT["A"], BLOCK_TEXT["B"], BLOCK_TEXT["C"]]
    assert result.slate.total_cost == 12
    assert result.assignment.is_total(instance.n)
    for statement in result.slate.statements:
        tag = statement.payload.split()[1]
        members = result.assignment.members(statement.id)
        assert all(f"team-{tag}" in instance.agents[a].description for a in members)


def test_planted_run_has_no_sampled_violations():
    instance, runner, result = _planted_run()
    rate = sample_violation_rate(result.bank, result.slate, result.assignment, runner.state.disc, 100,
                                 np.random.default_rng(1), instance.n, 12)
    assert rate == 0


def test_planted_run_is_reproducible(tmp_path):
    _, runner, first = _planted_run(seed=3)
    _, _, second = _planted_run(seed=3)
    assert first.slate == second.slate
    assert first.assignment == second.assignment
    assert [s.id for s in first.bank] == [s.id for s in second.bank]

    runner.save(first, tmp_path)
    assert (tmp_path / "slate.json").read_bytes().count(b"block A") >= 1
    assert (tmp_path / "bank.json").exists()


class PlantedClient:
    """ChatClient stand-in answering through planted_responder."""

    def complete(self, request):
        system, user = (message.content for message in request.messages)
        answer = planted_responder(system, user, request.nonce, request.logprobs)
        return answer if isinstance(answer, LlmResponse) else LlmResponse(text=answer)

    def embed(self, request):
        return EmbeddingResponse(vectors=[[float(len(text))] for text in request.texts])


def _cached_run(backend):
    instance = planted_instance()
    runner = ProseRunner(backend)
    result = runner.run(instance, planted_config(), np.random.default_rng(3), embeddings=planted_embeddings(instance))
    rate = sample_violation_rate(result.bank, result.slate, result.assignment, runner.state.disc, 50,
                                 np.random.default_rng(4), instance.n, 12)
    return runner, result, rate


def test_planted_run_replays_from_an_exported_recording(tmp_path):
    recording = LlmBackend(PlantedClient(), CacheStore("sqlite://"), mode=CacheMode.RECORD, max_concurrency=1)
    recorder, recorded, recorded_rate = _cached_run(recording)
    fixture = tmp_path / "planted.jsonl"
    assert recording.store.export_jsonl(fixture) == recording.store.count()

    store = CacheStore("sqlite://")
    store.import_jsonl(fixture)
    replayer, replayed, replayed_rate = _cached_run(LlmBackend(None, store, mode=CacheMode.REPLAY, max_concurrency=1))
    assert [s.payload for s in replayed.slate.statements] == [BLOCK_TEXT["A"], BLOCK_TEXT["B"], BLOCK_TEXT["C"]]
    assert replayed.slate == recorded.slate
    assert replayed.assignment == recorded.assignment
    assert replayed.bank == recorded.bank
    assert replayed_rate == recorded_rate == 0
    assert replayer.state.disc.scores() == recorder.state.disc.scores() != {}
    assert replayer.state.disc.failures == []

    recorder.save(recorded, tmp_path / "recorded")
    replayer.save(replayed, tmp_path / "replayed")
    for name in ("slate.json", "bank.json"):
        assert (tmp_path / "replayed" / name).read_bytes() == (tmp_path / "recorded" / name).read_bytes()


def test_replay_of_an_unrecorded_run_names_the_missing_key():
    backend = LlmBackend(None, CacheStore("sqlite://"), mode=CacheMode.REPLAY)
    with pytest.raises(CacheMissError, match="No cached response for key [0-9a-f]{64}"):
        _cached_run(backend)


def test_unit_cost_run_counts_statements_not_words():
    instance = planted_instance()
    config = planted_config().as_unit_cost(statements=3)
    runner = ProseRunner(ScriptedBackend(planted_responder))
    result = runner.run(instance, config, np.random.default_rng(0), embeddings=planted_embeddings(instance))
    assert 1 <= len(result.slate) <= 3
    assert result.assignment.is_total(instance.n)
    assert all("Use at most" not in system for system, _, _ in runner.backend.calls)
