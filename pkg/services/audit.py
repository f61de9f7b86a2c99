import logging
import math
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.audit import AuditReport, ViolationWitness
from models.process import Variant
from models.slate import Assignment, Slate
from models.statement import Statement, UtilityValue, as_utility
from models.synthetic import ErrorModel
from utils.exceptions import ContractViolationError
from utils.proportionality import is_balanced, quota
from utils.utility_matrix import UtilityMatrix

logger = logging.getLogger(__name__)

CostOf = Callable[[Statement], int]


class ViolationSearch:
    """
    Vectorized search for coalitions that approve a candidate at some threshold
    while sitting more than a slack below it under the current outcome.

    For every threshold, the agents' dissatisfaction masks for all slack values
    are stacked and multiplied against the approval matrix, giving coalition
    sizes for every (slack, candidate) pair at once. Thresholds range over the
    distinct candidate utilities; the coalition size is a step function of the
    threshold, so nothing in between can do better.
    """

    def __init__(self,
                 candidates: Sequence[Statement],
                 utilities,
                 slate: Slate,
                 satisfaction: str,
                 n: int,
                 budget: int,
                 assignment: Optional[Assignment] = None,
                 cost_of: Optional[CostOf] = None):
        self.logger = logging.getLogger(self.__class__.__name__)
        cost_of = cost_of or (lambda statement: statement.cost)
        self.n = n
        self.budget = budget
        self.candidates = _unique(candidates)

        columns = _unique(list(self.candidates) + list(slate.statements))
        self.matrix = UtilityMatrix.from_source(list(range(n)), columns, utilities)
        self.candidate_columns = np.array([self.matrix.column(s.id) for s in self.candidates], dtype=np.int64)
        self.quotas = np.array([quota(cost_of(s), n, budget) for s in self.candidates], dtype=np.int64)

        if satisfaction == "assigned":
            matched = [self.matrix.column(assignment.mapping[agent]) for agent in range(n)]
            self.satisfaction = self.matrix.values_at(np.array(matched, dtype=np.int64))
        elif satisfaction == "slate":
            if slate.statements:
                slate_columns = [self.matrix.column(s.id) for s in slate.statements]
                self.satisfaction = self.matrix.values[:, slate_columns].max(axis=1)
            else:
                self.satisfaction = np.full(n, np.iinfo(np.int64).min // 4, dtype=np.int64)
        else:
            raise ValueError(f"Unknown satisfaction measure: {satisfaction}")

    def best_counts(self, slacks: Sequence[UtilityValue]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Largest coalition per (slack, candidate) and the highest threshold reaching it.

        Returns:
            Tuple[np.ndarray, np.ndarray]: counts and scaled thresholds, both (len(slacks), K)
        """
        approvals_source = self.matrix.values[:, self.candidate_columns]
        shifts = np.array([math.floor(Fraction(b) * self.matrix.scale) for b in slacks], dtype=np.int64)
        best = np.zeros((len(slacks), len(self.candidates)), dtype=np.int64)
        best_theta = np.zeros_like(best)
        if not len(self.candidates):
            return best, best_theta

        for theta in np.unique(approvals_source)[::-1]:
            approvals = (approvals_source >= theta).astype(np.float64)
            dissatisfied = (self.satisfaction[None, :] < (theta - shifts)[:, None]).astype(np.float64)
            counts = np.rint(dissatisfied @ approvals).astype(np.int64)
            better = counts > best
            best = np.where(better, counts, best)
            best_theta = np.where(better, theta, best_theta)
        return best, best_theta

    def witness(self, index: int, theta_scaled: int, slack: UtilityValue) -> ViolationWitness:
        statement = self.candidates[index]
        column = self.matrix.values[:, self.candidate_columns[index]]
        bound = theta_scaled - math.floor(Fraction(slack) * self.matrix.scale)
        members = np.flatnonzero((column >= theta_scaled) & (self.satisfaction < bound))
        return ViolationWitness(coalition=tuple(int(agent) for agent in members),
                                statement=statement,
                                threshold=self.matrix.to_value(theta_scaled),
                                ratio=Fraction(len(members), int(self.quotas[index])),
                                slack=as_utility(slack))

    def curve(self, slacks: Sequence[UtilityValue]) -> AuditReport:
        counts, thetas = self.best_counts(slacks)
        curve: Dict[UtilityValue, Fraction] = {}
        witnesses: Dict[UtilityValue, Optional[ViolationWitness]] = {}
        priced = self.quotas > 0
        for row, slack in enumerate(slacks):
            key = as_utility(slack)
            # correctly rounded division keeps equal rationals equal as floats
            ratios = np.where(priced, counts[row] / np.maximum(self.quotas, 1), 0.0)
            if not len(ratios) or ratios.max() <= 0:
                curve[key], witnesses[key] = Fraction(0), None
                continue
            index = int(np.argmax(ratios))
            curve[key] = Fraction(int(counts[row, index]), int(self.quotas[index]))
            witnesses[key] = self.witness(index, int(thetas[row, index]), slack)
        return AuditReport(curve=curve, witnesses=witnesses)


def _unique(statements: Sequence[Statement]) -> List[Statement]:
    seen = {}
    for statement in statements:
        seen.setdefault(statement.id, statement)
    return list(seen.values())


def _require_outcome(slate: Slate, assignment: Assignment, n: int, budget: int, cost_of: Optional[CostOf],
                     balanced: bool = True):
    if not assignment.is_total(n):
        raise ContractViolationError(f"Assignment covers {len(assignment.mapping)} of {n} agents")
    if balanced and not is_balanced(assignment, slate, n, budget, cost_of):
        raise ContractViolationError("Assignment is not balanced for the slate")


def audit_curve(slate: Slate,
                assignment: Assignment,
                candidates: Sequence[Statement],
                utilities,
                slacks: Sequence,
                n: int,
                budget: int,
                cost_of: Optional[CostOf] = None,
                strict: bool = True) -> AuditReport:
    """
    Maximum (b, d)-violation ratio for every slack value in one pass.

    Args:
        utilities: callable (agent, statement) -> utility, or an object with a matrix() method
        slacks: the b values to evaluate
        strict: require a balanced assignment (a total one is always required)

    Returns:
        AuditReport: ratio and witness per slack (0 and None when nothing violates)

    Raises:
        ContractViolationError: if the assignment is partial or unbalanced
    """
    _require_outcome(slate, assignment, n, budget, cost_of, balanced=strict)
    search = ViolationSearch(candidates, utilities, slate, "assigned", n, budget, assignment, cost_of)
    return search.curve(slacks)


def max_violation_ratio(slate: Slate,
                        assignment: Assignment,
                        candidates: Sequence[Statement],
                        utilities,
                        b,
                        n: int,
                        budget: int,
                        cost_of: Optional[CostOf] = None) -> Tuple[Fraction, Optional[ViolationWitness]]:
    report = audit_curve(slate, assignment, candidates, utilities, [b], n, budget, cost_of)
    key = as_utility(b)
    return report.curve[key], report.witnesses[key]


def check_cjr(slate: Slate,
              candidates: Sequence[Statement],
              utilities,
              b,
              d,
              n: int,
              budget: int,
              cost_of: Optional[CostOf] = None) -> Optional[ViolationWitness]:
    """Return a witness of ratio >= d against the best slate statement of each agent, if any."""
    d = as_utility(d)
    search = ViolationSearch(candidates, utilities, slate, "slate", n, budget, cost_of=cost_of)
    counts, thetas = search.best_counts([b])
    for index in range(len(search.candidates)):
        q = int(search.quotas[index])
        if q > 0 and counts[0, index] > 0 and counts[0, index] * d.denominator >= d.numerator * q:
            return search.witness(index, int(thetas[0, index]), b)
    return None


def sample_violation_rate(bank: Sequence[Statement],
                          slate: Slate,
                          assignment: Assignment,
                          utilities,
                          sample_size: int,
                          rng: np.random.Generator,
                          n: int,
                          budget: int,
                          cost_of: Optional[CostOf] = None,
                          strict: bool = True) -> Fraction:
    """
    Fraction of statements drawn from the bank (with replacement) that witness a
    (0, 1)-violation against the slate and assignment. With strict=False a
    total but unbalanced assignment is accepted.

    Raises:
        ContractViolationError: if the bank is empty or the outcome is invalid
    """
    if not bank:
        raise ContractViolationError("Cannot sample violations from an empty bank")
    _require_outcome(slate, assignment, n, budget, cost_of, balanced=strict)

    picks = [bank[int(i)] for i in rng.integers(0, len(bank), size=sample_size)]
    search = ViolationSearch(picks, utilities, slate, "assigned", n, budget, assignment, cost_of)
    counts, _ = search.best_counts([0])
    violating = {statement.id for index, statement in enumerate(search.candidates)
                 if search.quotas[index] > 0 and counts[0, index] >= search.quotas[index]}
    hits = sum(1 for statement in picks if statement.id in violating)
    logger.debug(f"{hits} of {sample_size} sampled statements witness a violation")
    return Fraction(hits, sample_size)


def max_violating_slack(report: AuditReport, d=1) -> UtilityValue:
    """Largest slack at which a ratio of at least d is still reached (0 when none)."""
    d = as_utility(d)
    violating = [slack for slack, ratio in report.curve.items() if ratio >= d]
    return max(violating, default=Fraction(0))


def guarantee_bound(variant, error_model: ErrorModel) -> Optional[Tuple[UtilityValue, Fraction]]:
    """
    The (b, d) pair a run of the given variant is entitled to under the error model.

    Returns:
        Optional[Tuple]: None when the variant carries no guarantee for these errors
    """
    variant = Variant(variant)
    gamma, mu = error_model.gamma, error_model.mu
    exact_disc = error_model.beta == 0 and error_model.delta == 0
    if variant == Variant.COMPLEX:
        return Fraction(2 * error_model.beta) + error_model.delta, 1 / (gamma * mu)
    if variant == Variant.FAST and exact_disc and mu == 1:
        return Fraction(0), 1 / gamma
    return None


def approx_guarantee_bound(error_model: ErrorModel, budget: int) -> Tuple[UtilityValue, Fraction]:
    """Bound of the unit-cost approximate-oracle process (the epsilon is left to the caller)."""
    gamma = error_model.gamma
    return Fraction(2 * error_model.beta) + error_model.delta, Fraction(budget) / (budget * gamma + 1)
