from enum import Enum
from typing import Callable, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.statement import UtilityValue


class Variant(str, Enum):
    FAST = "fast"
    COMPLEX = "complex"
    UNIFORM = "uniform"
    UNIT_COST = "unit_cost"
    CUSTOM = "custom"


LevelExpansion = Callable[[UtilityValue, Sequence[UtilityValue]], Tuple[UtilityValue, ...]]


def same_level(level: UtilityValue, grid: Sequence[UtilityValue]) -> Tuple[UtilityValue, ...]:
    return (level,)


def level_and_above(level: UtilityValue, grid: Sequence[UtilityValue]) -> Tuple[UtilityValue, ...]:
    """Every grid level at or above `level`, highest first."""
    return tuple(value for value in grid if value >= level)


class ProcessConfig(BaseModel):
    """
    Parameters of one democratic process run.

    cost_list is walked front to back by the inner loop; level_expansion maps
    the current level to the levels the generative oracle is asked at.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    cost_list: Tuple[int, ...]
    level_expansion: LevelExpansion = same_level
    min_statement_cost: int = Field(default=0, ge=0)
    use_statement_bank: bool = False
    variant_tag: Variant = Variant.CUSTOM

    @field_validator("cost_list")
    @classmethod
    def _positive_costs(cls, value):
        if not value:
            raise ValueError("cost list must not be empty")
        if any(cost < 1 for cost in value):
            raise ValueError("cost list entries must be positive")
        return value

    @property
    def unit_cost(self) -> bool:
        return self.variant_tag == Variant.UNIT_COST
