from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from models.statement import Statement, StatementFactory, UtilityValue

DiscQuery = Callable[[int, Statement], UtilityValue]
DiscBatchQuery = Callable[[Sequence[int], Statement], List[UtilityValue]]
GenQuery = Callable[[Sequence[int], UtilityValue, int, np.random.Generator], Optional[Statement]]


@dataclass(frozen=True)
class QuerySuite:
    """
    The only access the process has to utilities and the statement universe.

    disc(agent_id, statement) estimates one utility; gen(agents, level,
    cost_cap, rng) proposes a statement of cost at most cost_cap, or None.
    disc_many is an optional batched form of disc. bank, when set, exposes
    every statement the oracle has produced so far.
    """
    disc: DiscQuery
    gen: GenQuery
    factory: StatementFactory = field(default_factory=StatementFactory)
    disc_many: Optional[DiscBatchQuery] = None
    bank: Optional[Callable[[], List[Statement]]] = None

    def evaluate(self, agent_ids: Sequence[int], statement: Statement) -> List[UtilityValue]:
        if self.disc_many is not None:
            return list(self.disc_many(agent_ids, statement))
        return [self.disc(agent_id, statement) for agent_id in agent_ids]
