import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from models.process import Variant
from models.slate import Slate
from models.statement import StatementFactory
from services.assignment import max_weight_balanced_assignment, total_utility
from services.process import make_config, run_process
from services.synthetic import TrueUtility, exact_queries, make_env
from utils.exceptions import InfeasibleAssignmentError
from utils.proportionality import floor_quota, is_balanced, quota
from utils.utility_matrix import UtilityMatrix


def _slate(costs):
    factory = StatementFactory()
    return Slate(statements=tuple(factory.create(payload=f"s{i}", cost=c) for i, c in enumerate(costs)))


def _matrix(slate, rows):
    return UtilityMatrix.from_source(list(range(len(rows))), list(slate.statements),
                                     lambda a, s: Fraction(rows[a][s.id]))


def test_equal_utilities_total():
    slate = _slate([2, 2])
    utilities = _matrix(slate, [[3, 3]] * 4)
    assignment = max_weight_balanced_assignment(utilities, slate, 4, 4)
    assert is_balanced(assignment, slate, 4, 4)
    assert total_utility(utilities, assignment) == 12


def test_diagonal_assignment():
    slate = _slate([1, 1])
    utilities = _matrix(slate, [[5, 1], [1, 5]])
    assignment = max_weight_balanced_assignment(utilities, slate, 2, 2)
    assert assignment.mapping == {0: 0, 1: 1}
    assert total_utility(utilities, assignment) == 10


def test_fractional_utilities_are_exact():
    slate = _slate([1, 1])
    utilities = _matrix(slate, [[Fraction(11, 2), Fraction(1, 5)], [Fraction(26, 5), Fraction(3)]])
    assignment = max_weight_balanced_assignment(utilities, slate, 2, 2)
    assert total_utility(utilities, assignment) == Fraction(11, 2) + 3


def test_infeasible_bounds_name_the_deficit():
    slate = _slate([1])
    with pytest.raises(InfeasibleAssignmentError, match="cannot be placed"):
        max_weight_balanced_assignment(lambda a, s: Fraction(1), slate, 4, 4)


def _brute_force(rows, slate, n, budget):
    best = None
    for choice in itertools.product(range(len(slate.statements)), repeat=n):
        counts = [choice.count(k) for k in range(len(slate.statements))]
        if all(floor_quota(s.cost, n, budget) <= c <= quota(s.cost, n, budget)
               for s, c in zip(slate.statements, counts)):
            value = sum(rows[a][k] for a, k in enumerate(choice))
            best = value if best is None else max(best, value)
    return best


@given(st.data())
@settings(max_examples=200, deadline=None)
def test_flow_matches_brute_force(data):
    n = data.draw(st.integers(1, 8))
    k = data.draw(st.integers(1, 3))
    costs = data.draw(st.lists(st.integers(1, 6), min_size=k, max_size=k))
    budget = data.draw(st.integers(max(costs), 12))
    rows = data.draw(st.lists(st.lists(st.integers(-3, 9), min_size=k, max_size=k), min_size=n, max_size=n))
    slate = _slate(costs)
    utilities = _matrix(slate, rows)
    expected = _brute_force(rows, slate, n, budget)

    if expected is None:
        with pytest.raises(InfeasibleAssignmentError):
            max_weight_balanced_assignment(utilities, slate, n, budget)
        return
    assignment = max_weight_balanced_assignment(utilities, slate, n, budget)
    assert is_balanced(assignment, slate, n, budget)
    assert total_utility(utilities, assignment) == expected


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_flow_dominates_the_process_assignment(data):
    n = data.draw(st.integers(2, 12))
    budget = data.draw(st.integers(1, 6))
    env = make_env(seed=data.draw(st.integers(0, 10 ** 4)), num_issues=data.draw(st.integers(1, 3)),
                   opinion_count=data.draw(st.integers(2, 3)), n=n, budget=budget)
    variant = data.draw(st.sampled_from([Variant.FAST, Variant.COMPLEX, Variant.UNIFORM]))
    cost = data.draw(st.integers(1, budget)) if variant == Variant.UNIFORM else None
    result = run_process(env.instance, exact_queries(env), make_config(variant, env.instance, cost),
                         np.random.default_rng(data.draw(st.integers(0, 99))))
    if not is_balanced(result.assignment, result.slate, n, budget):
        return

    utilities = UtilityMatrix.from_source(list(range(n)), list(result.slate.statements), TrueUtility(env))
    flow = max_weight_balanced_assignment(utilities, result.slate, n, budget)
    assert is_balanced(flow, result.slate, n, budget)
    assert total_utility(utilities, flow) >= total_utility(utilities, result.assignment)
