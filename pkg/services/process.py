import logging
import math
from collections import Counter
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from models.instance import Instance
from models.process import ProcessConfig, Variant, level_and_above, same_level
from models.queries import QuerySuite
from models.slate import (Assignment, CandidateRecord, RemovedAgent, RoundRecord,
                          Slate, SlateResult)
from models.statement import Statement, UtilityValue, as_utility
from utils.exceptions import ConfigError, OracleContractError
from utils.proportionality import floor_quota, quota

logger = logging.getLogger(__name__)


def make_config(variant: Union[Variant, str],
                instance: Instance,
                k_or_cost: Optional[int] = None,
                min_statement_cost: int = 0,
                use_statement_bank: bool = False) -> ProcessConfig:
    """
    Build the cost list and level expansion of a named process variant.

    Args:
        variant: fast, complex, uniform or unit_cost
        instance: supplies n and B
        k_or_cost: the single cost value of the uniform variant

    Returns:
        ProcessConfig: ready to pass to run_process

    Raises:
        ConfigError: unknown variant, or uniform without a usable cost
    """
    try:
        variant = Variant(variant)
    except ValueError as e:
        raise ConfigError(f"Unknown process variant: {variant}") from e

    n, budget = instance.n, instance.budget
    expansion = same_level
    if variant == Variant.FAST:
        costs = sorted({j * budget // n for j in range(1, n + 1)} - {0}, reverse=True)
    elif variant == Variant.COMPLEX:
        costs = list(range(budget, 0, -1))
        expansion = level_and_above
    elif variant == Variant.UNIFORM:
        if k_or_cost is None:
            raise ConfigError("The uniform variant needs its statement cost")
        if not 1 <= k_or_cost <= budget:
            raise ConfigError(f"Uniform cost {k_or_cost} is outside [1, {budget}]")
        costs = [k_or_cost]
    elif variant == Variant.UNIT_COST:
        costs = [1]
    else:
        raise ConfigError("Custom processes are configured by building ProcessConfig directly")

    try:
        return ProcessConfig(cost_list=tuple(costs),
                             level_expansion=expansion,
                             min_statement_cost=min_statement_cost,
                             use_statement_bank=use_statement_bank,
                             variant_tag=variant)
    except ValidationError as e:
        raise ConfigError(f"Invalid process configuration: {e}") from e


def assign_leftovers(leftovers: Sequence[int],
                     statements: Sequence[Statement],
                     mapping: Dict[int, int],
                     n: int,
                     budget: int,
                     cost_of: Callable[[Statement], int]) -> List[int]:
    """
    Assign agents still unmatched at termination without breaking balance.

    Statements are first topped up to their floor quota, then to their ceiling
    quota, latest statements first. Agents that still do not fit go to the
    least-loaded statement.

    Returns:
        List[int]: the agents that were assigned here
    """
    pending = sorted(leftovers)
    if not pending:
        return []
    if not statements:
        logger.warning(f"{len(pending)} agents left unassigned: the slate is empty")
        return []

    assigned = list(pending)
    counts = Counter(mapping.values())
    latest_first = list(reversed(statements))
    for bound in (floor_quota, quota):
        for statement in latest_first:
            target = bound(cost_of(statement), n, budget)
            while pending and counts[statement.id] < target:
                mapping[pending.pop(0)] = statement.id
                counts[statement.id] += 1

    if pending:
        logger.warning(f"{len(pending)} agents exceed every ceiling quota; assignment will be unbalanced")
        for agent in pending:
            target = min(latest_first, key=lambda s: (counts[s.id], -statements.index(s)))
            mapping[agent] = target.id
            counts[target.id] += 1
    return assigned


class DemocraticProcess:
    """Greedy level-by-level slate construction driven by disc/gen queries."""

    def __init__(self, instance: Instance, queries: QuerySuite, config: ProcessConfig):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.instance = instance
        self.queries = queries
        self.config = config

        bad = [cost for cost in config.cost_list if not 1 <= cost <= instance.budget]
        if bad:
            raise ConfigError(f"Cost values {bad} are outside [1, {instance.budget}]")

    def cost_of(self, statement: Statement) -> int:
        return 1 if self.config.unit_cost else statement.cost

    def _required(self, statement: Statement) -> int:
        n, budget = self.instance.n, self.instance.budget
        if self.config.unit_cost:
            return n // budget
        return quota(statement.cost, n, budget)

    def _removal_count(self, statement: Statement) -> int:
        n, budget = self.instance.n, self.instance.budget
        if self.config.unit_cost:
            return n // budget
        return quota(statement.cost, n, budget)

    def _admissible(self, statement: Statement, cost_cap: int, min_cost: int, record: RoundRecord) -> bool:
        cost = self.cost_of(statement)
        try:
            if cost > cost_cap:
                raise OracleContractError(f"Statement {statement.id} costs {cost} > cap {cost_cap}")
            if cost < 1:
                raise OracleContractError(f"Statement {statement.id} has zero cost")
        except OracleContractError as e:
            self.logger.warning(str(e))
            record.contract_errors.append(str(e))
            return False
        return statement.cost >= min_cost

    def _candidates(self,
                    agents: Tuple[int, ...],
                    level: UtilityValue,
                    cost_cap: int,
                    min_cost: int,
                    bank: Dict[int, Statement],
                    record: RoundRecord,
                    rng: np.random.Generator) -> List[Statement]:
        found: Dict[int, Statement] = {}
        for query_level in self.config.level_expansion(level, self.instance.level_grid):
            statement = self.queries.gen(agents, query_level, cost_cap, rng)
            if statement is None:
                continue
            bank.setdefault(statement.id, statement)
            if self._admissible(statement, cost_cap, min_cost, record):
                found.setdefault(statement.id, statement)

        if self.config.use_statement_bank:
            pool = self.queries.bank() if self.queries.bank is not None else list(bank.values())
            for statement in pool:
                cost = self.cost_of(statement)
                if statement.id not in found and 1 <= cost <= cost_cap and statement.cost >= min_cost:
                    found[statement.id] = statement
        return sorted(found.values(), key=lambda s: s.id)

    def _best(self,
              agents: Tuple[int, ...],
              level: UtilityValue,
              candidates: List[Statement],
              record: RoundRecord) -> Tuple[Optional[Statement], List[Tuple[int, UtilityValue]]]:
        best, best_approvers = None, []
        for statement in candidates:
            values = self.queries.evaluate(agents, statement)
            approvers = [(agent, value) for agent, value in zip(agents, values) if value >= level]
            record.candidates.append(CandidateRecord(statement_id=statement.id,
                                                     cost=statement.cost,
                                                     support=len(approvers)))
            # candidates arrive sorted by id, so strict > keeps the lowest id on ties
            if best is None or len(approvers) > len(best_approvers):
                best, best_approvers = statement, approvers
        return best, best_approvers

    def run(self, rng: np.random.Generator) -> SlateResult:
        """
        Run the process to completion.

        Args:
            rng: seeded generator handed to every gen call

        Returns:
            SlateResult: slate, assignment, round trace and statement bank
        """
        n, budget = self.instance.n, self.instance.budget
        grid = self.instance.level_grid
        remaining = set(self.instance.agent_ids)
        slate: List[Statement] = []
        slate_ids = set()
        mapping: Dict[int, int] = {}
        trace: List[RoundRecord] = []
        bank: Dict[int, Statement] = {}
        spent = 0

        self.logger.info(f"Starting {self.config.variant_tag.value} process: n={n}, B={budget}, "
                         f"{len(self.config.cost_list)} cost values, {len(grid)} levels")

        for level_index, level in enumerate(grid):
            if not remaining:
                break
            min_cost = 0 if level_index == len(grid) - 1 else self.config.min_statement_cost
            j = 0
            while j < len(self.config.cost_list) and remaining:
                cost_cap = self.config.cost_list[j]
                if budget - spent < cost_cap:
                    j += 1
                    continue

                agents = tuple(sorted(remaining))
                record = RoundRecord(level=level, cost_cap=cost_cap)
                trace.append(record)
                candidates = self._candidates(agents, level, cost_cap, min_cost, bank, record, rng)
                best, approvers = self._best(agents, level, candidates, record)

                if best is None or len(approvers) < self._required(best):
                    self.logger.debug(f"Level {level}, cap {cost_cap}: best support "
                                      f"{len(approvers)} below quota, next cost value")
                    j += 1
                    continue

                chosen = self.queries.factory.duplicate(best) if best.id in slate_ids else best
                approvers.sort(key=lambda pair: (-pair[1], pair[0]))
                removed = approvers[:self._removal_count(best)]
                for agent, value in removed:
                    remaining.discard(agent)
                    mapping[agent] = chosen.id
                    record.removed.append(RemovedAgent(agent_id=agent, disc_value=value))

                slate.append(chosen)
                slate_ids.add(chosen.id)
                spent += self.cost_of(chosen)
                record.chosen_id = chosen.id
                record.accepted = True
                self.logger.info(f"Added statement {chosen.id} (cost {chosen.cost}) at level {level}: "
                                 f"{len(removed)} agents matched, {len(remaining)} remaining, spent {spent}/{budget}")

        leftovers = assign_leftovers(sorted(remaining), slate, mapping, n, budget, self.cost_of)
        suite_bank = self.queries.bank() if self.queries.bank is not None else list(bank.values())
        self.logger.info(f"Process finished: {len(slate)} statements, cost {spent}/{budget}, "
                         f"{len(leftovers)} leftover agents")
        return SlateResult(slate=Slate(statements=tuple(slate)),
                           assignment=Assignment(mapping=mapping),
                           trace=trace,
                           bank=list(suite_bank),
                           leftover_agents=leftovers)


def run_process(instance: Instance,
                queries: QuerySuite,
                config: ProcessConfig,
                rng: np.random.Generator) -> SlateResult:
    return DemocraticProcess(instance, queries, config).run(rng)


class UniformApproxProcess:
    """
    Unit-cost process for approximate oracles with known mu and gamma.

    A single cost cap floor(1/mu) is used; a statement is accepted when it
    reaches n*gamma/(B*gamma + 1) approvers, and that many (rounded up) agents
    are matched to it.
    """

    def __init__(self, instance: Instance, queries: QuerySuite, mu, gamma):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.instance = instance
        self.queries = queries
        self.mu = as_utility(mu)
        self.gamma = as_utility(gamma)
        for name, value in (("mu", self.mu), ("gamma", self.gamma)):
            if not 0 < value <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")

        n, budget = instance.n, instance.budget
        self.cost_cap = math.floor(1 / self.mu)
        self.threshold = Fraction(n) * self.gamma / (budget * self.gamma + 1)
        self.removal_count = math.ceil(self.threshold)

    def run(self, rng: np.random.Generator) -> SlateResult:
        n, budget = self.instance.n, self.instance.budget
        grid = self.instance.level_grid
        remaining = set(self.instance.agent_ids)
        slate: List[Statement] = []
        slate_ids = set()
        mapping: Dict[int, int] = {}
        trace: List[RoundRecord] = []
        bank: Dict[int, Statement] = {}
        spent = 0
        level_index = 0

        self.logger.info(f"Starting approximate unit-cost process: cap {self.cost_cap}, "
                         f"threshold {float(self.threshold):.3f}, removal {self.removal_count}")

        while level_index < len(grid) and remaining and spent < budget:
            level = grid[level_index]
            agents = tuple(sorted(remaining))
            cap = min(self.cost_cap, budget - spent)
            record = RoundRecord(level=level, cost_cap=cap)
            trace.append(record)

            found: Dict[int, Statement] = {}
            for query_level in level_and_above(level, grid):
                statement = self.queries.gen(agents, query_level, self.cost_cap, rng)
                if statement is None:
                    continue
                bank.setdefault(statement.id, statement)
                if not 1 <= statement.cost <= cap:
                    message = f"Statement {statement.id} costs {statement.cost}, allowed 1..{cap}"
                    self.logger.warning(message)
                    record.contract_errors.append(message)
                    continue
                found.setdefault(statement.id, statement)

            best, best_approvers = None, []
            for statement in sorted(found.values(), key=lambda s: s.id):
                values = self.queries.evaluate(agents, statement)
                approvers = [(agent, value) for agent, value in zip(agents, values) if value >= level]
                record.candidates.append(CandidateRecord(statement_id=statement.id,
                                                         cost=statement.cost,
                                                         support=len(approvers)))
                if best is None or len(approvers) > len(best_approvers):
                    best, best_approvers = statement, approvers

            if best is None or len(best_approvers) < self.threshold:
                level_index += 1
                continue

            chosen = self.queries.factory.duplicate(best) if best.id in slate_ids else best
            best_approvers.sort(key=lambda pair: (-pair[1], pair[0]))
            for agent, value in best_approvers[:self.removal_count]:
                remaining.discard(agent)
                mapping[agent] = chosen.id
                record.removed.append(RemovedAgent(agent_id=agent, disc_value=value))
            slate.append(chosen)
            slate_ids.add(chosen.id)
            spent += chosen.cost
            record.chosen_id = chosen.id
            record.accepted = True
            self.logger.debug(f"Added statement {chosen.id} at level {level}, {len(remaining)} remaining")

        leftovers = assign_leftovers(sorted(remaining), slate, mapping, n, budget, lambda s: s.cost)
        self.logger.info(f"Approximate process finished: {len(slate)} statements, "
                         f"{len(leftovers)} leftover agents")
        return SlateResult(slate=Slate(statements=tuple(slate)),
                           assignment=Assignment(mapping=mapping),
                           trace=trace,
                           bank=list(bank.values()),
                           leftover_agents=leftovers)


def run_uniform_approx(instance: Instance,
                       queries: QuerySuite,
                       mu,
                       gamma,
                       rng: np.random.Generator) -> SlateResult:
    return UniformApproxProcess(instance, queries, mu, gamma).run(rng)
