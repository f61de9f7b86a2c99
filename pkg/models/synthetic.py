from enum import Enum
from fractions import Fraction
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.instance import Instance
from models.statement import as_utility


class ErrorMode(str, Enum):
    UNIFORM = "uniform"
    WORST_CASE = "worst_case"


class SyntheticPayload(BaseModel):
    """Partial opinion vector: one entry per issue, 0 when the issue is not addressed."""
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0)
    opinions: Tuple[int, ...]

    @property
    def issues(self) -> Tuple[int, ...]:
        return tuple(j for j, opinion in enumerate(self.opinions) if opinion)


class SyntheticEnv(BaseModel):
    """Issue/opinion environment with uniformly drawn agent ideals."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    num_issues: int = Field(ge=1)
    opinion_count: int = Field(ge=1)
    seed: int
    ideals: np.ndarray
    instance: Instance

    @property
    def n(self) -> int:
        return self.instance.n

    @property
    def budget(self) -> int:
        return self.instance.budget

    @property
    def universe_size(self) -> int:
        return (self.opinion_count + 1) ** self.num_issues


class ErrorModel(BaseModel):
    """Accuracy parameters of simulated queries (exact when beta = delta = 0 and gamma = mu = 1)."""
    model_config = ConfigDict(frozen=True)

    beta: int = Field(default=0, ge=0)
    gamma: Fraction = Fraction(1)
    delta: Fraction = Fraction(0)
    mu: Fraction = Fraction(1)
    mode: ErrorMode = ErrorMode.UNIFORM
    seed: int = 0

    @field_validator("gamma", "delta", "mu", mode="before")
    @classmethod
    def _exact(cls, value):
        return as_utility(value)

    @field_validator("gamma", "mu")
    @classmethod
    def _unit_interval(cls, value):
        if not 0 < value <= 1:
            raise ValueError("must lie in (0, 1]")
        return value

    @field_validator("delta")
    @classmethod
    def _nonnegative(cls, value):
        if value < 0:
            raise ValueError("must be nonnegative")
        return value

    @property
    def is_exact(self) -> bool:
        return self.beta == 0 and self.delta == 0 and self.gamma == 1 and self.mu == 1

    @property
    def label(self) -> str:
        return (f"beta={self.beta},delta={float(self.delta):g},"
                f"gamma={float(self.gamma):g},mu={float(self.mu):g},{self.mode.value}")
