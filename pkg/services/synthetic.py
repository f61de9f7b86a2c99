import itertools
import logging
import math
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.instance import Instance
from models.queries import QuerySuite
from models.statement import Statement, StatementFactory, UtilityValue
from models.synthetic import ErrorMode, ErrorModel, SyntheticEnv, SyntheticPayload
from utils.exceptions import ContractViolationError, InvalidInstanceError

logger = logging.getLogger(__name__)


class Universe:
    """Every partial opinion vector over the issues; index 0 is the empty statement."""

    def __init__(self, num_issues: int, opinion_count: int):
        self.num_issues = num_issues
        self.opinion_count = opinion_count
        self.opinions = np.array(list(itertools.product(range(opinion_count + 1), repeat=num_issues)),
                                 dtype=np.int64).reshape(-1, num_issues)
        self.costs = (self.opinions > 0).sum(axis=1)
        self.statements: List[Statement] = [
            Statement(id=index, payload=SyntheticPayload(index=index, opinions=tuple(int(o) for o in row)),
                      cost=int(cost))
            for index, (row, cost) in enumerate(zip(self.opinions, self.costs))
        ]

    def __len__(self):
        return len(self.statements)

    def half_utilities(self, ideals: np.ndarray) -> np.ndarray:
        """n x M matrix of twice the utility, exact in int64."""
        addressed = self.opinions > 0
        distance = np.abs(ideals[:, None, :] - self.opinions[None, :, :])
        per_issue = np.where(addressed[None, :, :], self.opinion_count - 2 * distance, 0)
        return per_issue.sum(axis=2)


@lru_cache(maxsize=8)
def enumerate_universe(num_issues: int, opinion_count: int) -> Universe:
    universe = Universe(num_issues, opinion_count)
    logger.debug(f"Enumerated {len(universe)} statements for |I|={num_issues}, b={opinion_count}")
    return universe


def half_level_grid(num_issues: int, opinion_count: int) -> List[Fraction]:
    """Achievable utility values in half steps, highest first, always reaching 0."""
    top = num_issues * opinion_count
    bottom = min(0, num_issues * (2 - opinion_count))
    return [Fraction(h, 2) for h in range(top, bottom - 1, -1)]


def make_env(seed: int, num_issues: int, opinion_count: int, n: int, budget: int) -> SyntheticEnv:
    """
    Draw agent ideals uniformly over [1, b] for every issue.

    Raises:
        InvalidInstanceError: if any parameter is below 1
    """
    for name, value in (("num_issues", num_issues), ("opinion_count", opinion_count), ("n", n), ("budget", budget)):
        if value < 1:
            raise InvalidInstanceError(f"{name} must be at least 1, got {value}")

    rng = np.random.default_rng(seed)
    ideals = rng.integers(1, opinion_count + 1, size=(n, num_issues))
    return env_from_ideals(ideals, opinion_count, budget, seed=seed)


def env_from_ideals(ideals, opinion_count: int, budget: int, seed: int = 0) -> SyntheticEnv:
    """Environment with fixed agent ideals (rows are agents, entries in [1, b])."""
    ideals = np.asarray(ideals, dtype=np.int64)
    if ideals.ndim != 2 or ideals.min() < 1 or ideals.max() > opinion_count:
        raise InvalidInstanceError(f"Ideals must be an n x |I| matrix with entries in [1, {opinion_count}]")
    num_issues = ideals.shape[1]
    instance = Instance.create(descriptions=[tuple(int(o) for o in row) for row in ideals],
                               budget=budget,
                               level_grid=half_level_grid(num_issues, opinion_count))
    return SyntheticEnv(num_issues=num_issues, opinion_count=opinion_count, seed=seed,
                        ideals=ideals, instance=instance)


def true_utility(env: SyntheticEnv, agent: int, statement: Statement) -> UtilityValue:
    """Sum over addressed issues of b/2 - |ideal - opinion|; 0 for the empty statement."""
    ideal = env.ideals[agent]
    half = sum(env.opinion_count - 2 * abs(int(ideal[j]) - opinion)
               for j, opinion in enumerate(statement.payload.opinions) if opinion)
    return Fraction(half, 2)


class TrueUtility:
    """Tabulated true utilities of an environment, usable as a disc oracle and by audits."""

    def __init__(self, env: SyntheticEnv):
        self.env = env
        self.universe = enumerate_universe(env.num_issues, env.opinion_count)
        self.half = self.universe.half_utilities(env.ideals)
        self._offset = int(self.half.min())
        self._table = [Fraction(h, 2) for h in range(self._offset, int(self.half.max()) + 1)]

    def value(self, half_units: int) -> UtilityValue:
        index = half_units - self._offset
        if 0 <= index < len(self._table):
            return self._table[index]
        return Fraction(int(half_units), 2)

    def __call__(self, agent: int, statement: Statement) -> UtilityValue:
        return self.value(int(self.half[agent, statement.payload.index]))

    def many(self, agents: Sequence[int], statement: Statement) -> List[UtilityValue]:
        column = self.half[list(agents), statement.payload.index]
        return [self.value(int(h)) for h in column]

    def matrix(self, agent_ids: Sequence[int], statements: Sequence[Statement]) -> Tuple[np.ndarray, int]:
        columns = [statement.payload.index for statement in statements]
        return self.half[np.ix_(list(agent_ids), columns)], 2


class SupportTable:
    """
    Support vectors over the whole universe for one remaining-agent set.

    Vectors are memoized per threshold and dropped when the agent set changes.
    """

    def __init__(self, utility: TrueUtility):
        self.utility = utility
        self._agents: Optional[Tuple[int, ...]] = None
        self._memo: Dict[int, np.ndarray] = {}

    def vector(self, agents: Sequence[int], level) -> np.ndarray:
        agents = tuple(agents)
        if agents != self._agents:
            self._agents = agents
            self._memo = {}
        threshold = math.ceil(Fraction(level) * 2)
        if threshold not in self._memo:
            rows = self.utility.half[list(agents)]
            self._memo[threshold] = (rows >= threshold).sum(axis=0).astype(np.int32)
        return self._memo[threshold]


class ExactOracle:
    """Exact disc and gen by full enumeration of the universe."""

    def __init__(self, env: SyntheticEnv):
        self.utility = TrueUtility(env)
        self.universe = self.utility.universe
        self.support = SupportTable(self.utility)

    def gen(self, agents: Sequence[int], level, cost_cap: int, rng: np.random.Generator) -> Statement:
        if cost_cap < 1:
            return self.universe.statements[0]
        sup = self.support.vector(agents, level)
        feasible = (self.universe.costs >= 1) & (self.universe.costs <= cost_cap)
        masked = np.where(feasible, sup, -1)
        maximizers = np.flatnonzero(masked == masked.max())
        return self.universe.statements[int(rng.choice(maximizers))]


class NoisyOracle:
    """
    Simulated approximate oracles.

    disc adds an integer error in [-beta, beta] (or exactly +-beta in
    worst_case mode) to the true utility. gen returns a statement within the
    cost cap whose support at level - delta is at least gamma times the best
    support at level among statements of cost <= ceil(mu * cap).
    """

    def __init__(self, env: SyntheticEnv, error_model: ErrorModel):
        self.error_model = error_model
        self.utility = TrueUtility(env)
        self.universe = self.utility.universe
        self.support = SupportTable(self.utility)
        self.rng = np.random.default_rng(error_model.seed)

    def _errors(self, size: int) -> np.ndarray:
        beta = self.error_model.beta
        if beta == 0:
            return np.zeros(size, dtype=np.int64)
        if self.error_model.mode == ErrorMode.WORST_CASE:
            return beta * self.rng.choice(np.array([-1, 1]), size=size)
        return self.rng.integers(-beta, beta + 1, size=size)

    def disc(self, agent: int, statement: Statement) -> UtilityValue:
        return self.disc_many([agent], statement)[0]

    def disc_many(self, agents: Sequence[int], statement: Statement) -> List[UtilityValue]:
        column = self.utility.half[list(agents), statement.payload.index]
        noisy = column + 2 * self._errors(len(column))
        return [self.utility.value(int(h)) for h in noisy]

    def gen(self, agents: Sequence[int], level, cost_cap: int, rng: np.random.Generator) -> Statement:
        if cost_cap < 1:
            return self.universe.statements[0]
        model = self.error_model
        costs = self.universe.costs
        reference_cap = math.ceil(model.mu * cost_cap)

        sup = self.support.vector(agents, level)
        best = int(sup[(costs >= 1) & (costs <= reference_cap)].max())
        shifted = self.support.vector(agents, Fraction(level) - model.delta)
        # shifted >= gamma * best, compared on integers
        meets_bound = shifted.astype(np.int64) * model.gamma.denominator >= model.gamma.numerator * best
        admissible = (costs >= 1) & (costs <= cost_cap) & meets_bound
        feasible = np.flatnonzero(admissible)
        if feasible.size == 0:
            raise ContractViolationError(f"No statement meets the accuracy bound at level {level}, cap {cost_cap}")

        if model.mode == ErrorMode.WORST_CASE:
            worst = shifted[feasible].min()
            feasible = feasible[shifted[feasible] == worst]
        return self.universe.statements[int(rng.choice(feasible))]


def exact_queries(env: SyntheticEnv) -> QuerySuite:
    oracle = ExactOracle(env)
    return QuerySuite(disc=oracle.utility,
                      gen=oracle.gen,
                      disc_many=oracle.utility.many,
                      factory=StatementFactory(start=len(oracle.universe)))


def noisy_queries(env: SyntheticEnv, error_model: ErrorModel) -> QuerySuite:
    oracle = NoisyOracle(env, error_model)
    return QuerySuite(disc=oracle.disc,
                      gen=oracle.gen,
                      disc_many=oracle.disc_many,
                      factory=StatementFactory(start=len(oracle.universe)))


def lookup_statement(env: SyntheticEnv, opinions: Sequence[int]) -> Statement:
    """The universe statement with the given opinion vector (0 = issue not addressed)."""
    index = 0
    for opinion in opinions:
        index = index * (env.opinion_count + 1) + int(opinion)
    return enumerate_universe(env.num_issues, env.opinion_count).statements[index]


def universe_candidates(env: SyntheticEnv) -> List[Statement]:
    """All selectable statements (everything but the empty one)."""
    return enumerate_universe(env.num_issues, env.opinion_count).statements[1:]
