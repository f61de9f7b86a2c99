from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.dataset import DatasetKind, DrugReviewParams, PolisParams
from models.llm import ProseDatasetConfig
from models.process import Variant
from models.synthetic import ErrorMode, ErrorModel

SWEEP_VARIANTS = (Variant.UNIFORM, Variant.FAST, Variant.COMPLEX)

TABLE_COLUMNS = ["setting", "variant", "mean_utility", "p10_utility", "violations", "n_seeds"]
CURVE_COLUMNS = ["setting", "variant", "b", "mean_max_d", "n_seeds"]
SCAN_COLUMNS = ["param", "value", "metric", "mean", "n_seeds"]
EVAL_COLUMNS = ["method", "mean_utility", "q1_utility", "p_value", "violation_rate", "assignment_source"]
VOTE_COLUMNS = ["impl", "fraction_correct", "ci_low", "ci_high", "agents"]


def default_settings() -> List[ErrorModel]:
    """The exact setting followed by three increasingly noisy ones."""
    return [
        ErrorModel(),
        ErrorModel(beta=1, delta=1, gamma=Fraction(85, 100), mu=Fraction(85, 100)),
        ErrorModel(beta=2, delta=2, gamma=Fraction(70, 100), mu=Fraction(70, 100)),
        ErrorModel(beta=3, delta=3, gamma=Fraction(55, 100), mu=Fraction(55, 100)),
    ]


class EnvParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_issues: int = Field(default=5, ge=1)
    opinion_count: int = Field(default=5, ge=1)
    n: int = Field(default=60, ge=1)
    budget: int = Field(default=15, ge=1)


class SweepSpec(BaseModel):
    """
    Monte-Carlo sweep over error settings, process variants and seeds.

    The uniform variant uses statements of cost num_issues.
    """
    model_config = ConfigDict(frozen=True)

    settings: Tuple[ErrorModel, ...] = Field(default_factory=lambda: tuple(default_settings()))
    variants: Tuple[Variant, ...] = SWEEP_VARIANTS
    num_instances: int = Field(default=100, ge=1)
    env: EnvParams = Field(default_factory=EnvParams)
    base_seed: int = 0
    slacks: Tuple[int, ...] = tuple(range(11))
    workers: int = Field(default=1, ge=1)
    check_guarantees: bool = True

    @field_validator("variants")
    @classmethod
    def _sweepable(cls, value):
        unknown = [variant for variant in value if variant not in SWEEP_VARIANTS]
        if unknown or not value:
            raise ValueError(f"sweep variants must be a non-empty subset of {[v.value for v in SWEEP_VARIANTS]}")
        return value

    @field_validator("slacks")
    @classmethod
    def _nonnegative(cls, value):
        if not value or min(value) < 0:
            raise ValueError("slacks must be a non-empty list of nonnegative values")
        return tuple(sorted(set(value)))

    @model_validator(mode="after")
    def _uniform_fits(self):
        if Variant.UNIFORM in self.variants and self.env.num_issues > self.env.budget:
            raise ValueError("the uniform variant needs num_issues <= budget")
        return self


class InstanceMetrics(BaseModel):
    """Outcome of one (setting, variant, seed) run under true utilities."""
    model_config = ConfigDict(frozen=True)

    setting: str
    variant: Variant
    seed_index: int
    mean_utility: float
    p10_utility: float
    curve: Dict[int, float]
    violation: bool
    max_violating_slack: float
    balanced: bool = True


class SweepResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: SweepSpec
    instances: List[InstanceMetrics] = Field(default_factory=list)
    table: pd.DataFrame
    curves: pd.DataFrame
    seeds: List[int] = Field(default_factory=list)


class ScanParam(str, Enum):
    BETA = "beta"
    DELTA = "delta"
    MU_GAMMA = "mu_gamma"


class ScanSpec(BaseModel):
    """One error parameter varied, the others exact."""
    model_config = ConfigDict(frozen=True)

    param: ScanParam
    values: Tuple[float, ...]
    mode: ErrorMode = ErrorMode.UNIFORM

    @model_validator(mode="after")
    def _legal(self):
        if not self.values:
            raise ValueError("a scan needs at least one value")
        if self.param == ScanParam.MU_GAMMA and any(not 0 < v <= 1 for v in self.values):
            raise ValueError("mu_gamma values must lie in (0, 1]")
        if self.param == ScanParam.BETA and any(v < 0 or v != int(v) for v in self.values):
            raise ValueError("beta values must be nonnegative integers")
        if self.param == ScanParam.DELTA and any(v < 0 for v in self.values):
            raise ValueError("delta values must be nonnegative")
        return self

    def error_model(self, value: float, seed: int = 0) -> ErrorModel:
        if self.param == ScanParam.BETA:
            return ErrorModel(beta=int(value), mode=self.mode, seed=seed)
        if self.param == ScanParam.DELTA:
            return ErrorModel(delta=value, mode=self.mode, seed=seed)
        return ErrorModel(gamma=value, mu=value, mode=self.mode, seed=seed)


class ScanResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scan: ScanSpec
    frame: pd.DataFrame


class MethodStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: str
    mean: float
    q1: float
    p_value: float
    violation_rate: Optional[float]
    utilities: Tuple[float, ...]
    assignment_source: str


class EvalReport(BaseModel):
    """Per-method utility statistics under the evaluation oracle, compared to `reference`."""
    model_config = ConfigDict(frozen=True)

    reference: str
    methods: Dict[str, MethodStats]

    def frame(self) -> pd.DataFrame:
        rows = [[stats.method, stats.mean, stats.q1, stats.p_value, stats.violation_rate, stats.assignment_source]
                for stats in self.methods.values()]
        return pd.DataFrame(rows, columns=EVAL_COLUMNS)


class ImplAgreement(BaseModel):
    model_config = ConfigDict(frozen=True)

    fraction_correct: float
    ci_low: float
    ci_high: float
    agents: int
    differences: Tuple[float, ...]


class VoteValidationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    impls: Dict[str, ImplAgreement]
    pearson_r: Optional[float] = None
    kappa: Optional[float] = None
    skipped: Tuple[int, ...] = ()

    def frame(self) -> pd.DataFrame:
        rows = [[name, impl.fraction_correct, impl.ci_low, impl.ci_high, impl.agents]
                for name, impl in self.impls.items()]
        return pd.DataFrame(rows, columns=VOTE_COLUMNS)


class DatasetSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: DatasetKind
    paths: Tuple[Path, ...]
    drug_review: Optional[DrugReviewParams] = None
    polis: Optional[PolisParams] = None


class RunConfig(BaseModel):
    """Top-level YAML run document; every section is optional."""
    model_config = ConfigDict(frozen=True)

    output_dir: Path = Path("runs")
    seed: int = 0
    sweep: Optional[SweepSpec] = None
    scans: Tuple[ScanSpec, ...] = ()
    scan_env: Optional[SweepSpec] = None
    dataset: Optional[DatasetSection] = None
    prose: Optional[ProseDatasetConfig] = None
    votes: Optional[Path] = None
    eval_sample_size: int = Field(default=100, ge=1)
