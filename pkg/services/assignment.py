import logging
from typing import Callable, Optional

import numpy as np
from ortools.graph.python import min_cost_flow

from models.slate import Assignment, Slate
from models.statement import Statement
from utils.exceptions import InfeasibleAssignmentError
from utils.proportionality import floor_quota, quota
from utils.utility_matrix import UtilityMatrix


class BalancedAssignmentSolver:
    """
    Maximum-utility assignment of agents to slate statements where statement
    alpha receives between floor(c*n/B) and ceil(c*n/B) agents.

    Solved as a min-cost flow: each agent supplies one unit, each statement
    demands its lower bound and may pass up to (upper - lower) more units to a
    sink that absorbs the rest. Arc costs are negated scaled utilities.
    """

    def __init__(self, utilities: UtilityMatrix, slate: Slate, n: int, budget: int,
                 cost_of: Optional[Callable[[Statement], int]] = None):
        self.logger = logging.getLogger(self.__class__.__name__)
        cost_of = cost_of or (lambda statement: statement.cost)
        self.utilities = utilities
        self.slate = slate
        self.n = n
        self.lower = np.array([floor_quota(cost_of(s), n, budget) for s in slate.statements], dtype=np.int64)
        self.upper = np.array([quota(cost_of(s), n, budget) for s in slate.statements], dtype=np.int64)

    def check_feasible(self):
        low, high = int(self.lower.sum()), int(self.upper.sum())
        if low > self.n:
            raise InfeasibleAssignmentError(f"Floor quotas need {low} agents but only {self.n} exist "
                                            f"(excess {low - self.n})")
        if high < self.n:
            raise InfeasibleAssignmentError(f"Ceiling quotas hold {high} agents, {self.n - high} agents "
                                            f"cannot be placed")

    def solve(self) -> Assignment:
        """
        Returns:
            Assignment: an optimal balanced assignment

        Raises:
            InfeasibleAssignmentError: if no balanced assignment exists
        """
        self.check_feasible()
        n, k = self.n, len(self.slate.statements)
        columns = [self.utilities.column(s.id) for s in self.slate.statements]
        weights = self.utilities.values[:n, columns]

        sink = n + k
        agent_tails = np.repeat(np.arange(n), k)
        statement_heads = np.tile(np.arange(n, n + k), n)
        tails = np.concatenate([agent_tails, np.arange(n, n + k)])
        heads = np.concatenate([statement_heads, np.full(k, sink)])
        capacities = np.concatenate([np.ones(n * k, dtype=np.int64), self.upper - self.lower])
        costs = np.concatenate([-weights.reshape(-1), np.zeros(k, dtype=np.int64)])

        smcf = min_cost_flow.SimpleMinCostFlow()
        arcs = smcf.add_arcs_with_capacity_and_unit_cost(tails, heads, capacities, costs)
        supplies = np.concatenate([np.ones(n, dtype=np.int64), -self.lower,
                                   [-(n - int(self.lower.sum()))]])
        smcf.set_nodes_supplies(np.arange(n + k + 1), supplies)

        status = smcf.solve()
        if status != smcf.OPTIMAL:
            self.logger.error(f"Min-cost flow ended with status {status}")
            raise InfeasibleAssignmentError(f"Flow solver could not balance the assignment (status {status})")

        flows = smcf.flows(arcs[:n * k]).reshape(n, k)
        mapping = {agent: self.slate.statements[int(np.argmax(flows[agent]))].id for agent in range(n)}
        self.logger.debug(f"Balanced assignment found, total scaled utility {-smcf.optimal_cost()}")
        return Assignment(mapping=mapping)


def max_weight_balanced_assignment(utilities, slate: Slate, n: int, budget: int,
                                   cost_of: Optional[Callable[[Statement], int]] = None) -> Assignment:
    """
    Args:
        utilities: a UtilityMatrix over the slate, or a utility source to tabulate

    Returns:
        Assignment: the balanced assignment maximizing total utility
    """
    if not isinstance(utilities, UtilityMatrix):
        utilities = UtilityMatrix.from_source(list(range(n)), list(slate.statements), utilities)
    return BalancedAssignmentSolver(utilities, slate, n, budget, cost_of).solve()


def total_utility(utilities: UtilityMatrix, assignment: Assignment):
    """Exact total utility of an assignment."""
    scaled = sum(int(utilities.values[agent, utilities.column(sid)]) for agent, sid in assignment.mapping.items())
    return utilities.to_value(scaled)
