from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from models.dataset import VoteRecord
from models.experiment import CURVE_COLUMNS, TABLE_COLUMNS, EnvParams, SweepSpec
from models.instance import Instance
from models.process import Variant
from models.slate import Assignment, Slate
from models.statement import StatementFactory
from models.synthetic import ErrorModel
from services.audit import guarantee_bound
from services.experiment import (aggregate, derived_seed, evaluate_llm_slates, run_error_sweep, run_param_scan,
                                 vote_validation)
from utils.exceptions import ConfigError, ContractViolationError

NOISY = ErrorModel(beta=1, delta=1, gamma=Fraction(85, 100), mu=Fraction(85, 100))


def _spec(**overrides):
    values = dict(settings=(ErrorModel(), NOISY), num_instances=3,
                  env=EnvParams(num_issues=3, opinion_count=3, n=12, budget=6), slacks=(0, 1, 2, 3))
    values.update(overrides)
    return SweepSpec(**values)


@pytest.fixture(scope="module")
def small_sweep():
    return run_error_sweep(_spec(check_guarantees=False))


def test_sweep_tables_have_one_row_per_setting_and_variant(small_sweep):
    table, curves = small_sweep.table, small_sweep.curves
    assert list(table.columns) == TABLE_COLUMNS
    assert list(curves.columns) == CURVE_COLUMNS
    assert len(table) == 2 * 3
    assert (table["n_seeds"] == 3).all()
    assert len(curves) == 2 * 3 * 4
    assert len(small_sweep.instances) == 2 * 3 * 3
    assert len(set(small_sweep.seeds)) == 3


def test_exact_fast_and_complex_never_violate(small_sweep):
    exact = small_sweep.table[small_sweep.table["setting"] == ErrorModel().label]
    assert exact.set_index("variant").loc[["fast", "complex"], "violations"].tolist() == [0, 0]


def test_sweep_is_reproducible(small_sweep):
    again = run_error_sweep(_spec(check_guarantees=False))
    pd.testing.assert_frame_equal(small_sweep.table, again.table)
    pd.testing.assert_frame_equal(small_sweep.curves, again.curves)


def test_aggregate_ignores_input_order(small_sweep):
    shuffled = list(small_sweep.instances)
    np.random.default_rng(7).shuffle(shuffled)
    table, curves = aggregate(shuffled)
    pd.testing.assert_frame_equal(table, small_sweep.table)
    pd.testing.assert_frame_equal(curves, small_sweep.curves)


def test_aggregate_of_nothing_keeps_the_columns():
    table, curves = aggregate([])
    assert table.empty and list(table.columns) == TABLE_COLUMNS
    assert curves.empty and list(curves.columns) == CURVE_COLUMNS


def test_noisy_complex_runs_stay_within_their_bound():
    result = run_error_sweep(_spec(settings=(NOISY,), variants=(Variant.COMPLEX,), num_instances=2))
    assert len(result.instances) == 2


@pytest.mark.parametrize("gamma", [Fraction(1, 2), Fraction(7, 10)])
def test_weak_generator_runs_stay_within_their_bound(gamma):
    setting = ErrorModel(gamma=gamma)
    for variant in (Variant.FAST, Variant.COMPLEX):
        assert guarantee_bound(variant, setting) == (0, 1 / gamma)

    result = run_error_sweep(_spec(settings=(setting,), variants=(Variant.FAST, Variant.COMPLEX), num_instances=6))
    assert len(result.instances) == 2 * 6
    at_zero = result.curves[result.curves["b"] == 0].set_index("variant")["mean_max_d"]
    assert (at_zero < float(1 / gamma)).all()


def test_curves_do_not_increase_with_slack(small_sweep):
    for _, rows in small_sweep.curves.groupby(["setting", "variant"]):
        values = rows.sort_values("b")["mean_max_d"].to_numpy()
        assert (np.diff(values) <= 1e-12).all()


def test_exact_scan_point_matches_the_exact_sweep(small_sweep):
    spec = _spec(settings=(ErrorModel(),), variants=(Variant.COMPLEX,))
    scan = run_param_scan("mu_gamma", [1.0], spec)
    curves = small_sweep.curves
    exact = curves[(curves["setting"] == ErrorModel().label) & (curves["variant"] == "complex") & (curves["b"] == 0)]
    assert scan.frame["metric"].tolist() == ["mean_max_d"]
    assert scan.frame["mean"].iloc[0] == pytest.approx(exact["mean_max_d"].iloc[0])


def test_beta_scan_reports_violating_slack():
    scan = run_param_scan("beta", [0, 1], _spec(num_instances=2, check_guarantees=False))
    assert scan.frame["metric"].unique().tolist() == ["mean_max_b"]
    assert (scan.frame["n_seeds"] == 2).all()


def test_invalid_scan_is_a_config_error():
    with pytest.raises(ConfigError):
        run_param_scan("mu_gamma", [1.5], _spec())
    with pytest.raises(ConfigError):
        run_param_scan("beta", [0.5], _spec())


def test_sweep_spec_validation():
    assert _spec(slacks=(3, 0, 3)).slacks == (0, 3)
    with pytest.raises(ValidationError):
        _spec(env=EnvParams(num_issues=8, opinion_count=2, n=10, budget=6))
    with pytest.raises(ValidationError):
        _spec(variants=(Variant.UNIT_COST,))


def test_derived_seeds_are_stable_and_distinct():
    assert derived_seed(0, 1, 0) == derived_seed(0, 1, 0)
    assert len({derived_seed(0, k, stream) for k in range(5) for stream in range(3)}) == 15
    assert derived_seed(0, 1, 0) != derived_seed(1, 1, 0)


class EvalFixture:
    """Two pairs of agents, each pair loving one of two short statements; one long compromise."""

    def __init__(self):
        factory = StatementFactory()
        self.left = factory.create(payload="left", cost=2)
        self.right = factory.create(payload="right", cost=2)
        self.middle = factory.create(payload="middle", cost=4)
        self.scores = {self.left.id: [6, 6, 2, 2], self.right.id: [2, 2, 6, 6], self.middle.id: [6, 4, 2, 2]}
        self.instance = Instance.create(["a", "b", "c", "d"], 4, ["6", "1"])
        self.bank = [self.left, self.right, self.middle]

    def disc(self, agent, statement):
        return Fraction(self.scores[statement.id][agent])

    def prose(self):
        slate = Slate(statements=(self.left, self.right))
        return slate, Assignment(mapping={0: self.left.id, 1: self.left.id, 2: self.right.id, 3: self.right.id})


@pytest.fixture
def evaluation():
    return EvalFixture()


def test_evaluation_statistics(evaluation):
    slates = {"prose": evaluation.prose(), "middle": (Slate(statements=(evaluation.middle,)), None)}
    report = evaluate_llm_slates(slates, evaluation.instance, evaluation.disc, evaluation.bank,
                                 np.random.default_rng(0))
    prose, middle = report.methods["prose"], report.methods["middle"]
    assert (prose.mean, prose.q1, prose.p_value, prose.assignment_source) == (6.0, 6.0, 1.0, "own")
    assert middle.utilities == (6.0, 4.0, 2.0, 2.0)
    assert middle.mean == 3.5
    assert middle.q1 == 2.0
    assert middle.assignment_source == "balanced"
    assert 0 < middle.p_value < 1
    assert prose.violation_rate == 0
    assert 0 < middle.violation_rate < 1
    assert report.frame()["method"].tolist() == ["prose", "middle"]


def test_identical_slates_have_p_value_one(evaluation):
    slates = {"prose": evaluation.prose(), "copy": evaluation.prose()}
    report = evaluate_llm_slates(slates, evaluation.instance, evaluation.disc, (), np.random.default_rng(0))
    assert report.methods["copy"].p_value == 1.0
    assert report.methods["copy"].violation_rate is None


def test_partial_own_assignment_is_replaced(evaluation):
    slate, _ = evaluation.prose()
    partial = Assignment(mapping={0: evaluation.left.id})
    slates = {"prose": evaluation.prose(), "partial": (slate, partial)}
    report = evaluate_llm_slates(slates, evaluation.instance, evaluation.disc, (), np.random.default_rng(0))
    assert report.methods["partial"].assignment_source == "balanced"
    assert report.methods["partial"].mean == 6.0


def test_unbalanceable_slate_falls_back_to_best_statement(evaluation):
    lone = StatementFactory(start=100).create(payload="lone", cost=1)
    evaluation.scores[lone.id] = [1, 2, 3, 4]
    slates = {"prose": evaluation.prose(), "lone": (Slate(statements=(lone,)), None)}
    report = evaluate_llm_slates(slates, evaluation.instance, evaluation.disc, (), np.random.default_rng(0))
    assert report.methods["lone"].assignment_source == "best"
    assert report.methods["lone"].utilities == (1.0, 2.0, 3.0, 4.0)


def test_evaluation_contract_errors(evaluation):
    with pytest.raises(ContractViolationError):
        evaluate_llm_slates({"other": evaluation.prose()}, evaluation.instance, evaluation.disc, (),
                            np.random.default_rng(0))
    with pytest.raises(ContractViolationError):
        evaluate_llm_slates({"prose": evaluation.prose(), "empty": (Slate(statements=()), None)},
                            evaluation.instance, evaluation.disc, (), np.random.default_rng(0))


def _voter(agent_id, ups=6, downs=6):
    return VoteRecord(id=agent_id, description=f"voter {agent_id}",
                      upvoted=tuple(f"up {agent_id} {'x' * i}" for i in range(ups)),
                      downvoted=tuple(f"down {agent_id}" for _ in range(downs)))


def _oracle(agent, statement):
    return 1 if statement.payload.startswith("up") else -1


def _by_length(agent, statement):
    return len(statement.payload) * (agent.id + 1)


def test_vote_oracle_separates_every_agent():
    records = [_voter(i) for i in range(4)] + [_voter(9, ups=3)]
    report = vote_validation(records, {"oracle": _oracle, "copy": _oracle}, np.random.default_rng(0))
    agreement = report.impls["oracle"]
    assert agreement.fraction_correct == 1.0
    assert agreement.agents == 4
    assert agreement.ci_high == 1.0 and 0 < agreement.ci_low < 1
    assert report.skipped == (9,)
    assert report.pearson_r == 1.0
    assert report.kappa == 1.0


def test_vote_correlation_with_a_constant_impl_is_undefined():
    records = [_voter(i) for i in range(4)]
    report = vote_validation(records, {"oracle": _oracle, "flat": lambda agent, statement: 3},
                             np.random.default_rng(0))
    assert report.impls["flat"].fraction_correct == 0.0
    assert report.pearson_r is None


def test_vote_statements_get_distinct_ids():
    seen = []

    def recording(agent, statement):
        seen.append(statement.id)
        return _oracle(agent, statement)

    vote_validation([_voter(i) for i in range(3)], {"oracle": recording}, np.random.default_rng(0))
    assert len(seen) == len(set(seen)) == 3 * 2 * 5


def test_vote_correlation_of_an_impl_with_itself():
    records = [_voter(i) for i in range(5)]
    report = vote_validation(records, {"first": _by_length, "second": _by_length}, np.random.default_rng(0))
    assert report.pearson_r == pytest.approx(1.0)
    assert report.impls["first"].differences == report.impls["second"].differences


def test_vote_sampling_is_seeded():
    records = [_voter(i, ups=9) for i in range(3)]
    first = vote_validation(records, {"len": _by_length}, np.random.default_rng(2))
    second = vote_validation(records, {"len": _by_length}, np.random.default_rng(2))
    assert first == second
