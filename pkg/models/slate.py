from collections import Counter
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from models.statement import Statement, UtilityValue


class Slate(BaseModel):
    """Selected statements in order of addition."""
    model_config = ConfigDict(frozen=True)

    statements: Tuple[Statement, ...] = ()

    @property
    def total_cost(self) -> int:
        return sum(statement.cost for statement in self.statements)

    @property
    def ids(self) -> List[int]:
        return [statement.id for statement in self.statements]

    def by_id(self) -> Dict[int, Statement]:
        return {statement.id: statement for statement in self.statements}

    def __len__(self):
        return len(self.statements)


class Assignment(BaseModel):
    """The map agent id -> statement id of a slate (omega)."""
    model_config = ConfigDict(frozen=True)

    mapping: Dict[int, int] = Field(default_factory=dict)

    def counts(self) -> Counter:
        return Counter(self.mapping.values())

    def members(self, statement_id: int) -> List[int]:
        return sorted(agent for agent, sid in self.mapping.items() if sid == statement_id)

    def is_total(self, n: int) -> bool:
        return set(self.mapping) == set(range(n))


class CandidateRecord(BaseModel):
    statement_id: int
    cost: int
    support: int


class RemovedAgent(BaseModel):
    agent_id: int
    disc_value: UtilityValue


class RoundRecord(BaseModel):
    """One pass of the inner loop: candidates, choice and removals."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    level: UtilityValue
    cost_cap: int
    candidates: List[CandidateRecord] = Field(default_factory=list)
    chosen_id: Optional[int] = None
    accepted: bool = False
    removed: List[RemovedAgent] = Field(default_factory=list)
    contract_errors: List[str] = Field(default_factory=list)


class SlateResult(BaseModel):
    """Slate, induced assignment, full round trace and statement bank."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    slate: Slate
    assignment: Assignment
    trace: List[RoundRecord] = Field(default_factory=list)
    bank: List[Statement] = Field(default_factory=list)
    leftover_agents: List[int] = Field(default_factory=list)

    @property
    def additions(self) -> List[RoundRecord]:
        return [record for record in self.trace if record.accepted]
