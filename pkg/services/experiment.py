import logging
import math
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy import stats
from sklearn.metrics import cohen_kappa_score

from models.dataset import VoteRecord
from models.experiment import (CURVE_COLUMNS, SCAN_COLUMNS, TABLE_COLUMNS, ImplAgreement, InstanceMetrics,
                               EvalReport, MethodStats, ScanParam, ScanResult, ScanSpec, SweepResult, SweepSpec,
                               VoteValidationReport)
from models.instance import Agent, Instance
from models.process import Variant
from models.slate import Assignment, Slate
from models.statement import Statement, StatementFactory, UtilityValue
from models.synthetic import ErrorModel, SyntheticEnv
from services.assignment import max_weight_balanced_assignment
from services.audit import audit_curve, guarantee_bound, max_violating_slack, sample_violation_rate
from services.process import make_config, run_process
from services.synthetic import TrueUtility, exact_queries, make_env, noisy_queries, universe_candidates
from utils.exceptions import (ConfigError, ContractViolationError, GuaranteeViolationError,
                              InfeasibleAssignmentError)
from utils.proportionality import is_balanced
from utils.text import word_count

logger = logging.getLogger(__name__)

VARIANT_CODES = {Variant.UNIFORM: 0, Variant.FAST: 1, Variant.COMPLEX: 2}
MIN_VOTES = 5


def derived_seed(base_seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(base_seed, spawn_key=key).generate_state(1)[0])


def derived_rng(base_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=key))


def run_instance(env: SyntheticEnv,
                 truth: TrueUtility,
                 candidates: Sequence[Statement],
                 error_model: ErrorModel,
                 variant: Variant,
                 seed_index: int,
                 spec: SweepSpec) -> InstanceMetrics:
    """
    Run one variant on one environment and measure it under the true utilities.

    Raises:
        GuaranteeViolationError: if spec.check_guarantees and the run admits a
            witness its proven bound rules out
    """
    if error_model.is_exact:
        queries = exact_queries(env)
    else:
        oracle_model = error_model.model_copy(update={"seed": derived_seed(spec.base_seed, seed_index, 1)})
        queries = noisy_queries(env, oracle_model)
    config = make_config(variant, env.instance, k_or_cost=env.num_issues if variant == Variant.UNIFORM else None)
    rng = derived_rng(spec.base_seed, seed_index, 2, VARIANT_CODES[variant])
    result = run_process(env.instance, queries, config, rng)

    n, budget = env.n, env.budget
    slate, assignment = result.slate, result.assignment
    by_id = slate.by_id()
    utilities = np.array([float(truth(agent, by_id[assignment.mapping[agent]])) if agent in assignment.mapping
                          else 0.0 for agent in range(n)])
    balanced = is_balanced(assignment, slate, n, budget)
    if not balanced:
        logger.warning(f"Seed {seed_index}, {variant.value}, {error_model.label}: "
                       f"assignment is unbalanced after leftover fill")

    report = audit_curve(slate, assignment, candidates, truth, spec.slacks, n, budget, strict=False)
    metrics = InstanceMetrics(setting=error_model.label,
                              variant=variant,
                              seed_index=seed_index,
                              mean_utility=float(utilities.mean()),
                              p10_utility=float(np.percentile(utilities, 10)),
                              curve={int(b): float(report.ratio_at(b)) for b in spec.slacks},
                              violation=report.violates(0, 1),
                              max_violating_slack=float(max_violating_slack(report, 1)),
                              balanced=balanced)

    bound = guarantee_bound(variant, error_model) if spec.check_guarantees else None
    if bound is not None:
        b, d = bound
        at_b = report.curve.get(b)
        if at_b is None:
            at_b = audit_curve(slate, assignment, candidates, truth, [b], n, budget, strict=False).ratio_at(b)
        if at_b >= d:
            logger.error(f"Seed {seed_index}, {variant.value}, {error_model.label}: "
                         f"ratio {float(at_b):.4f} at b={b} reaches the bound d={float(d):.4f}")
            raise GuaranteeViolationError(f"{variant.value} run on seed {seed_index} under {error_model.label} "
                                          f"has a ({b}, {float(d):.4f}) violation (ratio {at_b})")
    return metrics


def run_seed(spec: SweepSpec, settings: Sequence[ErrorModel], variants: Sequence[Variant],
             seed_index: int) -> List[InstanceMetrics]:
    """Every (setting, variant) pair on the environment of one seed."""
    env = make_env(derived_seed(spec.base_seed, seed_index, 0), spec.env.num_issues, spec.env.opinion_count,
                   spec.env.n, spec.env.budget)
    truth = TrueUtility(env)
    candidates = universe_candidates(env)
    return [run_instance(env, truth, candidates, setting, variant, seed_index, spec)
            for setting in settings for variant in variants]


def _run_seed_task(args) -> List[InstanceMetrics]:
    return run_seed(*args)


def run_seeds(spec: SweepSpec, settings: Sequence[ErrorModel], variants: Sequence[Variant]) -> List[InstanceMetrics]:
    tasks = [(spec, tuple(settings), tuple(variants), k) for k in range(spec.num_instances)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            batches = list(pool.map(_run_seed_task, tasks))
    else:
        batches = [_run_seed_task(task) for task in tasks]
    metrics = [m for batch in batches for m in batch]
    setting_order = {setting.label: i for i, setting in enumerate(settings)}
    variant_order = {variant: i for i, variant in enumerate(variants)}
    metrics.sort(key=lambda m: (setting_order[m.setting], variant_order[m.variant], m.seed_index))
    return metrics


def aggregate(metrics: Sequence[InstanceMetrics]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per (setting, variant) means over seeds.

    Returns:
        Tuple[pd.DataFrame, pd.DataFrame]: the utility/violation table and the max-d curves
    """
    if not metrics:
        return pd.DataFrame(columns=TABLE_COLUMNS), pd.DataFrame(columns=CURVE_COLUMNS)
    rows = pd.DataFrame([{"setting": m.setting, "variant": m.variant.value, "seed": m.seed_index,
                          "mean_utility": m.mean_utility, "p10_utility": m.p10_utility,
                          "violation": int(m.violation)} for m in metrics])
    keys = ["setting", "variant"]
    table = (rows.sort_values(keys + ["seed"], kind="stable")
             .groupby(keys, sort=False)
             .agg(mean_utility=("mean_utility", "mean"), p10_utility=("p10_utility", "mean"),
                  violations=("violation", "sum"), n_seeds=("seed", "count"))
             .reset_index())

    points = pd.DataFrame([{"setting": m.setting, "variant": m.variant.value, "seed": m.seed_index,
                            "b": b, "max_d": ratio} for m in metrics for b, ratio in m.curve.items()])
    curves = (points.sort_values(keys + ["b", "seed"], kind="stable")
              .groupby(keys + ["b"], sort=False)
              .agg(mean_max_d=("max_d", "mean"), n_seeds=("seed", "count"))
              .reset_index())
    return table[TABLE_COLUMNS], curves[CURVE_COLUMNS]


def run_error_sweep(spec: SweepSpec) -> SweepResult:
    """
    Run every variant under every error setting on num_instances environments.

    Args:
        spec (SweepSpec): settings, variants, environment and seeding

    Returns:
        SweepResult: per-instance metrics, aggregated table and curves
    """
    logger.info(f"Sweep: {len(spec.settings)} settings x {len(spec.variants)} variants x "
                f"{spec.num_instances} instances, {spec.workers} workers")
    metrics = run_seeds(spec, spec.settings, spec.variants)
    table, curves = aggregate(metrics)
    seeds = [derived_seed(spec.base_seed, k, 0) for k in range(spec.num_instances)]
    logger.info(f"Sweep finished: {len(metrics)} runs")
    return SweepResult(spec=spec, instances=metrics, table=table, curves=curves, seeds=seeds)


def run_param_scan(param: Union[ScanParam, str],
                   values: Sequence[float],
                   spec: Optional[SweepSpec] = None,
                   mode=None) -> ScanResult:
    """
    Vary one error parameter with the others exact, complex variant only.

    The mu_gamma scan reports the mean max-d at b=0; the beta and delta scans
    report the mean of the largest slack that still has a ratio of at least 1.
    """
    spec = spec or SweepSpec()
    try:
        scan = ScanSpec(param=param, values=tuple(values), **({"mode": mode} if mode is not None else {}))
    except ValidationError as e:
        raise ConfigError(f"Invalid scan: {e}") from e
    metric = "mean_max_d" if scan.param == ScanParam.MU_GAMMA else "mean_max_b"
    rows = []
    for value in scan.values:
        setting = scan.error_model(value)
        metrics = run_seeds(spec, [setting], [Variant.COMPLEX])
        if scan.param == ScanParam.MU_GAMMA:
            mean = float(np.mean([m.curve[0] for m in metrics]))
        else:
            mean = float(np.mean([m.max_violating_slack for m in metrics]))
        logger.info(f"Scan {scan.param.value}={value}: {metric}={mean:.4f}")
        rows.append([scan.param.value, float(value), metric, mean, len(metrics)])
    return ScanResult(scan=scan, frame=pd.DataFrame(rows, columns=SCAN_COLUMNS))


class ScoreTable:
    """
    Memoized evaluation scores exposed through matrix().

    Missing columns are scored with the scorer's many() when it has one.
    """

    def __init__(self, scorer: Callable[[int, Statement], UtilityValue]):
        self.scorer = scorer
        self._memo: Dict[Tuple[int, int], Fraction] = {}

    def _column(self, agent_ids: Sequence[int], statement: Statement):
        missing = [agent for agent in agent_ids if (agent, statement.id) not in self._memo]
        if not missing:
            return
        many = getattr(self.scorer, "many", None)
        values = many(missing, statement) if many else [self.scorer(agent, statement) for agent in missing]
        for agent, value in zip(missing, values):
            self._memo[(agent, statement.id)] = Fraction(value)

    def __call__(self, agent_id: int, statement: Statement) -> Fraction:
        self._column([agent_id], statement)
        return self._memo[(agent_id, statement.id)]

    def matrix(self, agent_ids: Sequence[int], statements: Sequence[Statement]) -> Tuple[np.ndarray, int]:
        for statement in statements:
            self._column(agent_ids, statement)
        exact = [[self._memo[(agent, s.id)] for s in statements] for agent in agent_ids]
        scale = math.lcm(1, *(value.denominator for row in exact for value in row))
        values = np.array([[int(value * scale) for value in row] for row in exact], dtype=np.int64)
        return values.reshape(len(agent_ids), len(statements)), scale


def _best_statement_assignment(table: ScoreTable, slate: Slate, n: int) -> Assignment:
    values, _ = table.matrix(list(range(n)), list(slate.statements))
    return Assignment(mapping={agent: slate.statements[int(np.argmax(values[agent]))].id for agent in range(n)})


def _evaluation_assignment(method: str, slate: Slate, own: Optional[Assignment], table: ScoreTable,
                           n: int, budget: int) -> Tuple[Assignment, str]:
    if own is not None and own.is_total(n):
        return own, "own"
    if own is not None:
        logger.warning(f"{method}: own assignment covers {len(own.mapping)} of {n} agents; solving a balanced one")
    try:
        return max_weight_balanced_assignment(table, slate, n, budget), "balanced"
    except InfeasibleAssignmentError as e:
        logger.warning(f"{method}: {e}; matching every agent to their best statement")
        return _best_statement_assignment(table, slate, n), "best"


def evaluate_llm_slates(slates: Mapping[str, Tuple[Slate, Optional[Assignment]]],
                        instance: Instance,
                        eval_disc: Callable[[int, Statement], UtilityValue],
                        bank: Sequence[Statement],
                        rng: np.random.Generator,
                        reference: str = "prose",
                        sample_size: int = 100) -> EvalReport:
    """
    Compare slates under a separate evaluation oracle.

    Methods with their own total assignment are scored on it; the others get the
    utility-maximizing balanced assignment under the evaluation scores.

    Args:
        slates: method name -> (slate, own assignment or None)
        eval_disc: evaluation oracle (agent id, statement) -> utility
        bank: statements the violation rate is sampled from
        reference: method the paired t-tests compare against

    Raises:
        ContractViolationError: if the reference method is missing or a slate is empty
        CacheMissError: propagated from the oracle in replay mode
    """
    if reference not in slates:
        raise ContractViolationError(f"Reference method {reference} is not among {sorted(slates)}")
    n, budget = instance.n, instance.budget
    table = ScoreTable(eval_disc)
    sample_seed = int(rng.integers(2 ** 32))

    per_method: Dict[str, Tuple[np.ndarray, Optional[float], str]] = {}
    for method, (slate, own) in slates.items():
        if not slate.statements:
            raise ContractViolationError(f"{method} produced an empty slate")
        assignment, source = _evaluation_assignment(method, slate, own, table, n, budget)
        by_id = slate.by_id()
        utilities = np.array([float(table(agent, by_id[assignment.mapping[agent]])) for agent in range(n)])
        rate = None
        if bank:
            rate = float(sample_violation_rate(bank, slate, assignment, table, sample_size,
                                               np.random.default_rng(sample_seed), n, budget, strict=False))
        per_method[method] = (utilities, rate, source)
        logger.info(f"{method}: mean {utilities.mean():.3f} ({source} assignment), violation rate {rate}")

    reference_utilities = per_method[reference][0]
    methods = {}
    for method, (utilities, rate, source) in per_method.items():
        p_value = 1.0
        if method != reference and not np.allclose(utilities, reference_utilities):
            p_value = float(stats.ttest_rel(utilities, reference_utilities).pvalue)
            if math.isnan(p_value):
                p_value = 1.0
        methods[method] = MethodStats(method=method,
                                      mean=float(utilities.mean()),
                                      q1=float(np.percentile(utilities, 25)),
                                      p_value=p_value,
                                      violation_rate=rate,
                                      utilities=tuple(float(u) for u in utilities),
                                      assignment_source=source)
    return EvalReport(reference=reference, methods=methods)


def _vote_sample(votes: Sequence[str], rng: np.random.Generator) -> List[str]:
    if len(votes) <= MIN_VOTES:
        return list(votes)
    return [votes[int(i)] for i in sorted(rng.choice(len(votes), size=MIN_VOTES, replace=False))]


def vote_validation(records: Sequence[VoteRecord],
                    disc_impls: Mapping[str, Callable[[Agent, Statement], UtilityValue]],
                    rng: np.random.Generator) -> VoteValidationReport:
    """
    Check whether discriminative scores separate each agent's up- and downvotes.

    For every implementation: the fraction of agents whose mean score on
    upvoted statements exceeds the mean on downvoted ones, with an exact
    binomial 95% interval. With two implementations, the Pearson correlation of
    the per-agent differences and Cohen's kappa of the indicators are added.
    """
    kept: List[Tuple[Agent, List[str], List[str]]] = []
    skipped = []
    for record in records:
        if len(record.upvoted) < MIN_VOTES or len(record.downvoted) < MIN_VOTES:
            logger.warning(f"Agent {record.id} has {len(record.upvoted)} up and {len(record.downvoted)} "
                           f"down votes; skipped")
            skipped.append(record.id)
            continue
        agent = Agent(id=record.id, description=record.description)
        kept.append((agent, _vote_sample(record.upvoted, rng), _vote_sample(record.downvoted, rng)))

    factory = StatementFactory()

    def mean_score(impl, agent: Agent, texts: Sequence[str]) -> float:
        scores = [impl(agent, factory.create(payload=text, cost=word_count(text))) for text in texts]
        return float(np.mean([float(score) for score in scores]))

    impls: Dict[str, ImplAgreement] = {}
    differences: Dict[str, np.ndarray] = {}
    for name, impl in disc_impls.items():
        diffs = np.array([mean_score(impl, agent, up) - mean_score(impl, agent, down) for agent, up, down in kept])
        correct = int((diffs > 0).sum())
        if kept:
            interval = stats.binomtest(correct, len(kept)).proportion_ci(confidence_level=0.95, method="exact")
            low, high, fraction = float(interval.low), float(interval.high), correct / len(kept)
        else:
            low, high, fraction = 0.0, 1.0, 0.0
        differences[name] = diffs
        impls[name] = ImplAgreement(fraction_correct=fraction, ci_low=low, ci_high=high, agents=len(kept),
                                    differences=tuple(float(d) for d in diffs))
        logger.info(f"{name}: {correct}/{len(kept)} agents rank their upvotes higher")

    pearson_r = kappa = None
    if len(differences) == 2 and len(kept) >= 2:
        first, second = differences.values()
        if np.array_equal(first, second):
            pearson_r = 1.0
        elif np.ptp(first) > 0 and np.ptp(second) > 0:
            pearson_r = float(stats.pearsonr(first, second).statistic)
        if np.array_equal(first > 0, second > 0):
            kappa = 1.0
        else:
            kappa = float(cohen_kappa_score(first > 0, second > 0))
            if math.isnan(kappa):
                kappa = None
    return VoteValidationReport(impls=impls, pearson_r=pearson_r, kappa=kappa, skipped=tuple(skipped))
