from fractions import Fraction
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from models.statement import Statement, UtilityValue


class ViolationWitness(BaseModel):
    """A coalition, statement and threshold certifying a proportionality breach."""
    model_config = ConfigDict(frozen=True)

    coalition: Tuple[int, ...]
    statement: Statement
    threshold: UtilityValue
    ratio: Fraction
    slack: UtilityValue

    @property
    def size(self) -> int:
        return len(self.coalition)


class AuditReport(BaseModel):
    """Maximum violation ratio per slack value, with the witness achieving it."""
    model_config = ConfigDict(frozen=True)

    curve: Dict[UtilityValue, Fraction] = Field(default_factory=dict)
    witnesses: Dict[UtilityValue, Optional[ViolationWitness]] = Field(default_factory=dict)

    def ratio_at(self, slack) -> Fraction:
        return self.curve[Fraction(slack)]

    def violates(self, slack, d) -> bool:
        return self.ratio_at(slack) >= Fraction(d)
