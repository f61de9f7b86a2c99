from typing import Any, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from models.statement import UtilityValue, as_utility
from utils.exceptions import InvalidInstanceError


class Agent(BaseModel):
    """
    Model representing one participant.

    The description is whatever the oracles need to judge the agent:
    review text, a bundle of comments, or an ideal opinion vector.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    id: int = Field(ge=0)
    description: Any


class Instance(BaseModel):
    """Agent roster, budget and the descending utility-level grid."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    agents: tuple[Agent, ...]
    budget: int = Field(ge=1)
    level_grid: tuple[UtilityValue, ...]
    topic: Optional[str] = None

    @field_validator("level_grid", mode="before")
    @classmethod
    def _exact_levels(cls, value):
        return tuple(as_utility(level) for level in value)

    @model_validator(mode="after")
    def _check_roster_and_grid(self):
        if [agent.id for agent in self.agents] != list(range(len(self.agents))):
            raise ValueError("agent ids must be dense 0..n-1 in roster order")
        if not self.level_grid:
            raise ValueError("level grid must not be empty")
        if any(hi <= lo for hi, lo in zip(self.level_grid, self.level_grid[1:])):
            raise ValueError("level grid must be strictly descending")
        return self

    @classmethod
    def create(cls,
               descriptions: Sequence[Any],
               budget: int,
               level_grid: Sequence[Any],
               topic: Optional[str] = None) -> "Instance":
        """
        Build an instance from raw agent descriptions.

        Raises:
            InvalidInstanceError: if the budget, roster or grid is invalid
        """
        try:
            agents = tuple(Agent(id=i, description=d) for i, d in enumerate(descriptions))
            return cls(agents=agents, budget=budget, level_grid=level_grid, topic=topic)
        except ValidationError as e:
            raise InvalidInstanceError(f"Invalid instance: {e}") from e

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def agent_ids(self) -> List[int]:
        return [agent.id for agent in self.agents]

    def with_budget(self, budget: int) -> "Instance":
        return Instance(agents=self.agents, budget=budget, level_grid=self.level_grid, topic=self.topic)
