import math
from fractions import Fraction
from typing import Dict, List, Sequence

import numpy as np

from models.statement import Statement, UtilityValue


class UtilityMatrix:
    """
    Agent x statement utilities held as int64 multiples of 1/scale.

    Comparisons against exact levels are done on integers: u >= level iff
    scaled(u) >= ceil(level * scale), and u < x iff scaled(u) < ceil(x * scale).
    """

    def __init__(self, values: np.ndarray, scale: int, statements: Sequence[Statement]):
        if values.ndim != 2 or values.shape[1] != len(statements):
            raise ValueError(f"Utility matrix shape {values.shape} does not match {len(statements)} statements")
        self.values = values.astype(np.int64, copy=False)
        self.scale = int(scale)
        self.statements: List[Statement] = list(statements)
        self._column: Dict[int, int] = {statement.id: col for col, statement in enumerate(self.statements)}

    @classmethod
    def from_source(cls, agent_ids: Sequence[int], statements: Sequence[Statement], utility_source) -> "UtilityMatrix":
        """
        Tabulate a utility source over agents x statements.

        Sources that expose `matrix(agent_ids, statements) -> (int array, scale)`
        are tabulated in one call.
        """
        if hasattr(utility_source, "matrix"):
            values, scale = utility_source.matrix(agent_ids, statements)
            return cls(np.asarray(values), scale, statements)

        exact = [[Fraction(utility_source(agent, statement)) for statement in statements] for agent in agent_ids]
        scale = 1
        for row in exact:
            for value in row:
                scale = math.lcm(scale, value.denominator)
        values = np.array([[int(value * scale) for value in row] for row in exact], dtype=np.int64)
        return cls(values.reshape(len(agent_ids), len(statements)), scale, statements)

    @property
    def shape(self):
        return self.values.shape

    def column(self, statement_id: int) -> int:
        return self._column[statement_id]

    def column_of(self, statement: Statement) -> np.ndarray:
        return self.values[:, self._column[statement.id]]

    def lower_bound(self, level) -> int:
        """Smallest scaled integer that is >= level."""
        return math.ceil(Fraction(level) * self.scale)

    def to_value(self, scaled: int) -> UtilityValue:
        return Fraction(int(scaled), self.scale)

    def values_at(self, assignment_columns: np.ndarray) -> np.ndarray:
        """Per-agent scaled utility of the column each agent is matched to."""
        return self.values[np.arange(self.values.shape[0]), assignment_columns]

    def __repr__(self):
        return f"<UtilityMatrix(shape={self.values.shape}, scale={self.scale})>"
