from typing import Callable, Iterable, Optional

from models.slate import Assignment, Slate
from models.statement import Statement, UtilityValue
from utils.exceptions import ContractViolationError, InvalidInstanceError

UtilitySource = Callable[[int, Statement], UtilityValue]
CostOf = Callable[[Statement], int]


def quota(cost: int, n: int, budget: int) -> int:
    """
    Number of agents that deserve a statement of the given cost: ceil(cost * n / B).

    Raises:
        InvalidInstanceError: if the budget is not positive
    """
    if budget < 1:
        raise InvalidInstanceError(f"Budget must be positive, got {budget}")
    if cost < 0 or n < 0:
        raise ContractViolationError(f"quota needs cost >= 0 and n >= 0, got cost={cost}, n={n}")
    return -(-cost * n // budget)


def floor_quota(cost: int, n: int, budget: int) -> int:
    if budget < 1:
        raise InvalidInstanceError(f"Budget must be positive, got {budget}")
    return cost * n // budget


def support(statement: Statement,
            agents: Iterable[int],
            level,
            utility_source: UtilitySource) -> int:
    """Count the agents whose utility for the statement is at least `level`."""
    return sum(1 for agent in agents if utility_source(agent, statement) >= level)


def is_balanced(assignment: Assignment,
                slate: Slate,
                n: int,
                budget: int,
                cost_of: Optional[CostOf] = None) -> bool:
    """
    Check that every slate statement holds its floor or ceiling quota of agents.

    Args:
        cost_of: cost used for the quota; defaults to the statement's own cost

    Raises:
        ContractViolationError: if the assignment names a statement outside the slate
    """
    cost_of = cost_of or (lambda statement: statement.cost)
    slate_ids = set(slate.ids)
    stray = set(assignment.mapping.values()) - slate_ids
    if stray:
        raise ContractViolationError(f"Assignment references statements outside the slate: {sorted(stray)}")

    counts = assignment.counts()
    for statement in slate.statements:
        cost = cost_of(statement)
        count = counts.get(statement.id, 0)
        if not floor_quota(cost, n, budget) <= count <= quota(cost, n, budget):
            return False
    return True
