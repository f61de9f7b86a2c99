import logging
import warnings
from enum import Enum
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from sklearn.cluster import AffinityPropagation
from sklearn.decomposition import PCA
from sklearn.exceptions import ConvergenceWarning

from models.instance import Instance
from models.llm import ProseDatasetConfig
from models.slate import Assignment, Slate
from models.statement import StatementFactory
from services.llm_client import LlmBackend
from services.prose import ProseRunner, consensus_statement
from utils.exceptions import ConfigError, GenerationError
from utils.text import parse_bullets, render_prompt, word_count

PCA_COMPONENTS = 5


class BaselineMethod(str, Enum):
    CONTEXTLESS_ZERO_SHOT = "contextless_zero_shot"
    ZERO_SHOT = "zero_shot"
    CLUSTERING = "clustering"
    UNIT_COST = "unit_cost"


class BaselineResult(BaseModel):
    """A comparison slate; assignment is None when the method does not produce one."""
    model_config = ConfigDict(frozen=True)

    method: BaselineMethod
    slate: Slate
    assignment: Optional[Assignment] = None
    over_budget: bool = False


def cluster_labels(embedding: np.ndarray, random_state: int = 0) -> np.ndarray:
    """
    Affinity propagation on the leading principal components.

    Falls back to a single cluster when the message passing does not converge.
    """
    n = embedding.shape[0]
    if n < 2:
        return np.zeros(n, dtype=int)
    components = min(PCA_COMPONENTS, n, embedding.shape[1])
    reduced = PCA(n_components=components).fit_transform(embedding) if components else embedding
    model = AffinityPropagation(damping=0.5, max_iter=200, convergence_iter=15, random_state=random_state)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        labels = model.fit_predict(reduced)
    unconverged = any(issubclass(w.category, ConvergenceWarning) for w in caught)
    if unconverged or (labels < 0).any():
        logging.getLogger(__name__).warning("Affinity propagation did not converge; using one cluster")
        return np.zeros(n, dtype=int)
    return labels


class BaselineService:
    def __init__(self, backend: LlmBackend, factory: Optional[StatementFactory] = None):
        """
        Comparison slates: zero-shot prompting, clustering, unit-cost PROSE.

        Args:
            backend (LlmBackend): chat and embedding access
            factory (StatementFactory): id source for the statements
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.backend = backend
        self.factory = factory or StatementFactory()

    def _zero_shot(self, instance: Instance, method: BaselineMethod, user: str) -> BaselineResult:
        system = render_prompt("zero_shot_system", topic=instance.topic or "", word_budget=instance.budget)
        answer = self.backend.chat(system, user).text
        statements = tuple(self.factory.create(payload=text, cost=word_count(text)) for text in parse_bullets(answer))
        slate = Slate(statements=statements)
        over = slate.total_cost > instance.budget
        if over:
            self.logger.warning(f"{method.value} slate uses {slate.total_cost} words of a {instance.budget} budget")
        return BaselineResult(method=method, slate=slate, over_budget=over)

    def contextless_zero_shot(self, instance: Instance) -> BaselineResult:
        return self._zero_shot(instance, BaselineMethod.CONTEXTLESS_ZERO_SHOT, render_prompt("contextless_user"))

    def zero_shot(self, instance: Instance) -> BaselineResult:
        opinions = "\n\n".join(f"- {agent.description}" for agent in instance.agents)
        return self._zero_shot(instance, BaselineMethod.ZERO_SHOT,
                               render_prompt("zero_shot_user", user_opinions=opinions))

    def clustering(self, instance: Instance) -> BaselineResult:
        embedding = self.backend.embed([str(agent.description) for agent in instance.agents])
        labels = cluster_labels(embedding)
        n, budget = instance.n, instance.budget
        statements = []
        mapping: Dict[int, int] = {}
        complete = True
        for label in sorted(set(labels.tolist())):
            members: List[int] = [int(i) for i in np.flatnonzero(labels == label)]
            word_budget = max(1, len(members) * budget // n)
            try:
                statement = consensus_statement([instance.agents[i] for i in members], word_budget,
                                                self.backend, self.factory)
            except GenerationError as e:
                self.logger.warning(f"Cluster {label} ({len(members)} agents) got no statement: {e}")
                complete = False
                continue
            statements.append(statement)
            mapping.update({agent: statement.id for agent in members})
        self.logger.info(f"Clustering baseline: {len(set(labels.tolist()))} clusters, {len(statements)} statements")
        slate = Slate(statements=tuple(statements))
        return BaselineResult(method=BaselineMethod.CLUSTERING, slate=slate,
                              assignment=Assignment(mapping=mapping) if complete else None,
                              over_budget=slate.total_cost > budget)

    def unit_cost(self, instance: Instance, config: ProseDatasetConfig, rng: np.random.Generator,
                  statements: int = 5) -> BaselineResult:
        result = ProseRunner(self.backend, self.factory).run(instance, config.as_unit_cost(statements), rng)
        return BaselineResult(method=BaselineMethod.UNIT_COST, slate=result.slate, assignment=result.assignment)


def baseline_slate(method: Union[BaselineMethod, str],
                   instance: Instance,
                   backend: LlmBackend,
                   rng: np.random.Generator,
                   config: Optional[ProseDatasetConfig] = None,
                   factory: Optional[StatementFactory] = None) -> BaselineResult:
    """
    Build one comparison slate.

    Raises:
        ConfigError: unknown method, or unit_cost without a dataset configuration
    """
    try:
        method = BaselineMethod(method)
    except ValueError as e:
        raise ConfigError(f"Unknown baseline method: {method}") from e
    service = BaselineService(backend, factory)
    if method == BaselineMethod.CONTEXTLESS_ZERO_SHOT:
        return service.contextless_zero_shot(instance)
    if method == BaselineMethod.ZERO_SHOT:
        return service.zero_shot(instance)
    if method == BaselineMethod.CLUSTERING:
        return service.clustering(instance)
    if config is None:
        raise ConfigError("The unit-cost baseline needs the dataset's PROSE configuration")
    return service.unit_cost(instance, config, rng)
