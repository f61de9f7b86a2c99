import logging
import math
import re
import threading
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import orjson

from models.instance import Agent, Instance
from models.llm import EmbeddingState, LlmResponse, ProseDatasetConfig, ProseRunState
from models.process import ProcessConfig, Variant
from models.queries import QuerySuite
from models.slate import SlateResult
from models.statement import Statement, StatementFactory, UtilityValue
from services.embedding import build_embeddings, format_opinions
from services.grouping import GroupKind, propose_group
from services.llm_client import LlmBackend
from services.process import run_process
from utils.exceptions import ContractViolationError, GenerationError, ScoringError
from utils.text import extract_opinion, render_prompt, word_count

logger = logging.getLogger(__name__)

SCORE_TOKENS = {str(digit): digit for digit in range(1, 7)}
SCORE_PRECISION = 10 ** 6
_DIGIT = re.compile(r"[1-6]")

# each generator runs twice; the neighbourhood generators switch embedding on the second run
GENERATOR_PLAN: Tuple[Tuple[GroupKind, Optional[str]], ...] = (
    (GroupKind.TAG_NN, "text"), (GroupKind.TAG_NN, "rating"),
    (GroupKind.WEIGHTED_NN, "text"), (GroupKind.WEIGHTED_NN, "rating"),
    (GroupKind.CLOSEST_CLUSTER, "text"), (GroupKind.CLOSEST_CLUSTER, "rating"),
    (GroupKind.PREVIOUS_BEST, None), (GroupKind.PREVIOUS_BEST, None),
)


def expected_score(response: LlmResponse) -> Fraction:
    """
    Probability-weighted rating over the tokens "1".."6" of the first answer token.

    Falls back to the first digit of the text when no rating token carries a
    logprob. Weighted scores are rounded to six decimals.

    Raises:
        ScoringError: no rating can be read from the answer
    """
    weights: Dict[int, float] = {}
    for item in response.top_logprobs or []:
        digit = SCORE_TOKENS.get(item.token.strip())
        if digit is not None:
            weights[digit] = weights.get(digit, 0.0) + math.exp(item.logprob)
    total = sum(weights.values())
    if total > 0:
        mean = sum(digit * weight for digit, weight in weights.items()) / total
        return Fraction(round(mean * SCORE_PRECISION), SCORE_PRECISION)

    match = _DIGIT.search(response.text or "")
    if match is None:
        raise ScoringError(f"No rating between 1 and 6 in answer {response.text!r}")
    return Fraction(int(match.group()))


def _rated(prompt: str, agent: Agent, statement: Statement, backend: LlmBackend) -> Fraction:
    response = backend.chat(render_prompt(f"{prompt}_system"),
                            render_prompt(f"{prompt}_user", statement=statement.payload,
                                          user_information=agent.description),
                            temperature=0, max_tokens=1, logprobs=True, top_logprobs=20)
    return expected_score(response)


def disc_utility(agent: Agent, statement: Statement, specificity_coefficient, backend: LlmBackend) -> UtilityValue:
    """agreement - coefficient * (6 - specificity) / 5, both ratings on the 1-6 scale."""
    agreement = _rated("agreement", agent, statement, backend)
    specificity = _rated("specificity", agent, statement, backend)
    return agreement - Fraction(specificity_coefficient) * (6 - specificity) / 5


def parse_cot_score(text: str) -> int:
    start, end = (text or "").find("{"), (text or "").rfind("}")
    if start < 0 or end < start:
        raise ScoringError("Evaluator answer holds no JSON object")
    try:
        score = orjson.loads(text[start:end + 1])["score"]
        value = float(score)
    except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ScoringError(f"Evaluator answer has no usable score: {e}") from e
    if not value.is_integer() or not 1 <= value <= 6:
        raise ScoringError(f"Evaluator score {score!r} is not an integer in [1, 6]")
    return int(value)


def cot_utility(agent: Agent, statement: Statement, backend: LlmBackend) -> int:
    """Chain-of-thought 1-6 rating; an unusable answer is asked once more."""
    system = render_prompt("cot_system")
    user = render_prompt("cot_user", user_information=agent.description, statement=statement.payload)
    error: Optional[ScoringError] = None
    for attempt in range(2):
        try:
            return parse_cot_score(backend.chat(system, user, temperature=0, nonce=attempt).text)
        except ScoringError as e:
            logger.warning(f"Evaluator answer for agent {agent.id}, statement {statement.id} unusable: {e}")
            error = e
    raise ScoringError(f"No evaluator score for agent {agent.id}, statement {statement.id}") from error


def consensus_text(agents: Sequence[Agent], word_budget: Optional[int], backend: LlmBackend, nonce: int = 0) -> str:
    """
    Opinion text for a group, at most word_budget words (no limit when None).

    Raises:
        GenerationError: no opinion tags, or over budget, on both attempts
    """
    if word_budget is not None and word_budget < 1:
        raise ContractViolationError(f"Word budget must be positive, got {word_budget}")
    if word_budget is None:
        system = render_prompt("consensus_system_unbounded")
    else:
        system = render_prompt("consensus_system", word_budget=word_budget)
    user = render_prompt("consensus_user", user_information=format_opinions(agents))

    problem = ""
    for attempt in range(2):
        answer = backend.chat(system, user, nonce=2 * nonce + attempt).text
        text = extract_opinion(answer)
        if text is None:
            problem = "answer has no <opinion> tags"
        elif word_budget is not None and word_count(text) > word_budget:
            problem = f"{word_count(text)} words exceed the budget of {word_budget}"
        else:
            return text
        logger.debug(f"Consensus attempt {attempt + 1} rejected: {problem}")
    raise GenerationError(f"No usable consensus statement for {len(agents)} agents: {problem}")


def consensus_statement(agents: Sequence[Agent],
                        word_budget: Optional[int],
                        backend: LlmBackend,
                        factory: StatementFactory,
                        nonce: int = 0) -> Statement:
    text = consensus_text(agents, word_budget, backend, nonce)
    return factory.create(payload=text, cost=word_count(text))


class ProseScorer:
    """
    The run's discriminative query: disc_utility memoized per (agent, text).

    A pair that cannot be scored is logged and scored one point below the
    lowest reachable value, so the agent never approves that statement.
    """

    def __init__(self, instance: Instance, backend: LlmBackend, specificity_coefficient):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.instance = instance
        self.backend = backend
        self.coefficient = Fraction(specificity_coefficient)
        self.failure_score = -self.coefficient - 1
        self.failures: List[Tuple[int, int]] = []
        self._memo: Dict[Tuple[int, str], UtilityValue] = {}
        self._lock = threading.Lock()

    def __call__(self, agent_id: int, statement: Statement) -> UtilityValue:
        key = (agent_id, str(statement.payload))
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        try:
            value = disc_utility(self.instance.agents[agent_id], statement, self.coefficient, self.backend)
        except ScoringError as e:
            self.logger.warning(f"Skipping statement {statement.id} for agent {agent_id}: {e}")
            with self._lock:
                self.failures.append((agent_id, statement.id))
            value = self.failure_score
        with self._lock:
            self._memo[key] = value
        return value

    def scores(self) -> Dict[Tuple[int, str], UtilityValue]:
        """Every (agent, text) pair scored so far."""
        with self._lock:
            return dict(self._memo)

    def many(self, agent_ids: Sequence[int], statement: Statement) -> List[UtilityValue]:
        return self.backend.map(lambda agent_id: self(agent_id, statement), agent_ids)


class CotScorer:
    """Evaluation oracle: cot_utility by agent id, with a batched form."""

    def __init__(self, instance: Instance, backend: LlmBackend):
        self.instance = instance
        self.backend = backend

    def __call__(self, agent_id: int, statement: Statement) -> int:
        return cot_utility(self.instance.agents[agent_id], statement, self.backend)

    def many(self, agent_ids: Sequence[int], statement: Statement) -> List[int]:
        return self.backend.map(lambda agent_id: self(agent_id, statement), agent_ids)


def _minimum_length(level: UtilityValue, config: ProseDatasetConfig) -> int:
    if config.unit_cost or level == config.level_list[-1]:
        return 0
    return config.min_statement_length


def prose_gen_query(agents: Sequence[int],
                    level: UtilityValue,
                    cost_cap: int,
                    state: ProseRunState,
                    rng: np.random.Generator,
                    backend: LlmBackend,
                    factory: StatementFactory) -> Optional[Statement]:
    """
    Two-stage generation: propose groups, write a consensus statement for each,
    then return the fresh or banked statement most remaining agents approve.

    Returns:
        Optional[Statement]: None when no candidate meets the cost and length bounds
    """
    if cost_cap < 1:
        raise ContractViolationError(f"Cost cap must be at least 1, got {cost_cap}")
    config = state.config
    word_budget = None if config.unit_cost else cost_cap

    groups: List[Tuple[int, Tuple[int, ...]]] = []
    for position, (kind, space) in enumerate(GENERATOR_PLAN):
        group = propose_group(kind, agents, level, cost_cap, state, rng, space=space or "text")
        if group:
            groups.append((position, group))

    def write(item):
        position, group = item
        try:
            return consensus_text([state.instance.agents[a] for a in group], word_budget, backend, nonce=position % 2)
        except GenerationError as e:
            logger.warning(f"Generator {GENERATOR_PLAN[position][0].value} failed: {e}")
            return None

    texts = backend.map(write, groups)
    fresh = [factory.create(payload=text, cost=word_count(text)) for text in texts if text is not None]
    state.add_to_bank(fresh)

    min_length = _minimum_length(level, config)
    eligible = {}
    for statement in fresh + state.snapshot():
        fits = config.unit_cost or 1 <= statement.cost <= cost_cap
        if fits and statement.cost >= min_length:
            eligible.setdefault(statement.id, statement)

    score_many = getattr(state.disc, "many", None)
    best, best_support = None, -1
    for statement in sorted(eligible.values(), key=lambda s: s.id):
        values = score_many(agents, statement) if score_many else [state.disc(a, statement) for a in agents]
        support = sum(1 for value in values if value >= level)
        if support > best_support:
            best, best_support = statement, support
    logger.debug(f"Level {level}, cap {cost_cap}: {len(fresh)} fresh, {len(eligible)} eligible, "
                 f"best support {best_support}")
    return best


def prose_queries(state: ProseRunState, backend: LlmBackend, factory: StatementFactory) -> QuerySuite:
    def gen(agents, level, cost_cap, rng):
        return prose_gen_query(agents, level, cost_cap, state, rng, backend, factory)

    disc_many = getattr(state.disc, "many", None)
    return QuerySuite(disc=state.disc, gen=gen, factory=factory, disc_many=disc_many, bank=state.snapshot)


class ProseRunner:
    def __init__(self, backend: LlmBackend, factory: Optional[StatementFactory] = None):
        """
        Run PROSE end to end on a prepared instance.

        Args:
            backend (LlmBackend): chat and embedding access
            factory (StatementFactory): id source for generated statements
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.backend = backend
        self.factory = factory or StatementFactory()
        self.state: Optional[ProseRunState] = None

    def run(self,
            instance: Instance,
            config: ProseDatasetConfig,
            rng: np.random.Generator,
            embeddings: Optional[EmbeddingState] = None) -> SlateResult:
        process_instance = Instance(agents=instance.agents, budget=config.budget,
                                    level_grid=config.level_list, topic=instance.topic)
        self.logger.info(f"PROSE run on {config.name}: n={instance.n}, B={config.budget}, "
                         f"{'unit cost' if config.unit_cost else 'word costs'}")
        if embeddings is None:
            embeddings = build_embeddings(instance.agents, self.backend, rng)

        scorer = ProseScorer(process_instance, self.backend, config.specificity_coefficient)
        self.state = ProseRunState(instance=process_instance, embeddings=embeddings, config=config, disc=scorer)
        queries = prose_queries(self.state, self.backend, self.factory)
        process_config = ProcessConfig(cost_list=config.cost_list,
                                       min_statement_cost=config.min_statement_length,
                                       use_statement_bank=True,
                                       variant_tag=Variant.UNIT_COST if config.unit_cost else Variant.FAST)
        result = run_process(process_instance, queries, process_config, rng)
        if scorer.failures:
            self.logger.warning(f"{len(scorer.failures)} agent/statement pairs could not be scored")
        self.logger.info(f"PROSE slate: {len(result.slate)} statements, {result.slate.total_cost} words, "
                         f"bank of {len(result.bank)}")
        return result

    def save(self, result: SlateResult, out_dir: Union[str, Path]):
        """Write slate.json and bank.json into the run directory."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        slate = [{"id": s.id, "text": s.payload, "cost": s.cost, "members": result.assignment.members(s.id)}
                 for s in result.slate.statements]
        bank = [{"id": s.id, "text": s.payload, "cost": s.cost} for s in result.bank]
        option = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS
        (out_dir / "slate.json").write_bytes(orjson.dumps(slate, option=option))
        (out_dir / "bank.json").write_bytes(orjson.dumps(bank, option=option))
        self.logger.info(f"Wrote slate and bank to {out_dir}")
