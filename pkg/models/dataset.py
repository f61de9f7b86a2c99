from enum import Enum
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DatasetKind(str, Enum):
    DRUG_REVIEW = "drug_review"
    POLIS = "polis"


UNIFORM_STRATA = {rating: 8 for rating in range(1, 11)}
IMBALANCED_STRATA = {1: 20, 2: 10, 5: 20, 9: 10, 10: 20}


class DrugReviewParams(BaseModel):
    """
    Filtering and sampling of one drug-review dataset.

    Reviews of `drug` whose word count lies between the two percentiles are
    kept; `strata` maps a rating to how many reviews to draw with it.
    """
    model_config = ConfigDict(frozen=True)

    name: str
    drug: str
    topic: str
    percentiles: Tuple[float, float] = (50.0, 75.0)
    strata: Dict[int, int] = Field(default_factory=lambda: dict(UNIFORM_STRATA))
    budget: int = Field(default=160, ge=1)
    filter_brands: bool = True

    @model_validator(mode="after")
    def _check(self):
        low, high = self.percentiles
        if not 0 <= low <= high <= 100:
            raise ValueError(f"invalid percentile range {self.percentiles}")
        if any(not 1 <= rating <= 10 or count < 0 for rating, count in self.strata.items()):
            raise ValueError("strata must map ratings 1..10 to nonnegative counts")
        return self

    @classmethod
    def birth_control(cls, imbalanced: bool = False) -> "DrugReviewParams":
        return cls(name="birth_control_imbalanced" if imbalanced else "birth_control_uniform",
                   drug="Ethinyl estradiol / norethindrone",
                   topic="Your experience with the birth control drug Ethinyl estradiol / norethindrone",
                   strata=dict(IMBALANCED_STRATA if imbalanced else UNIFORM_STRATA))

    @classmethod
    def obesity(cls) -> "DrugReviewParams":
        return cls(name="obesity", drug="Contrave",
                   topic="Your experience with the weight-loss drug Contrave",
                   percentiles=(25.0, 75.0))


class PolisParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "bowling_green"
    topic: Optional[str] = "Improving life in Bowling Green"
    budget: int = Field(default=164, ge=1)


class VoteRecord(BaseModel):
    """An agent with the statements they voted up and down."""
    model_config = ConfigDict(frozen=True)

    id: int
    description: str
    upvoted: Tuple[str, ...] = ()
    downvoted: Tuple[str, ...] = ()
