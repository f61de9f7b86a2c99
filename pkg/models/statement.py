import threading
from fractions import Fraction
from typing import Any, Union

from pydantic import BaseModel, ConfigDict, Field

# Exact scalar for every utility, level and threshold in the engine.
UtilityValue = Fraction


def as_utility(value: Union[int, float, str, Fraction]) -> UtilityValue:
    """
    Convert a user-facing number into an exact utility value.

    Floats go through their shortest decimal representation so that 0.85
    becomes 17/20 rather than the binary expansion of 0.85.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


class Statement(BaseModel):
    """A selectable statement: opaque payload plus integer cost."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    id: int = Field(ge=0)
    payload: Any
    cost: int = Field(ge=0)

    def __repr__(self):
        return f"<Statement(id={self.id}, cost={self.cost})>"


class StatementFactory:
    """Allocates statement ids from a per-run monotone counter."""

    def __init__(self, start: int = 0):
        self._next_id = start
        self._lock = threading.Lock()

    def _allocate(self) -> int:
        with self._lock:
            statement_id = self._next_id
            self._next_id += 1
        return statement_id

    @property
    def next_id(self) -> int:
        return self._next_id

    def create(self, payload: Any, cost: int) -> Statement:
        return Statement(id=self._allocate(), payload=payload, cost=cost)

    def duplicate(self, statement: Statement) -> Statement:
        """Re-issue a statement under a fresh id (same payload and cost)."""
        return statement.model_copy(update={"id": self._allocate()})
