import logging
import math
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from models.llm import ProseRunState
from models.statement import UtilityValue

logger = logging.getLogger(__name__)

REWEIGHT_ROUNDS = 100
CLUSTER_EPSILON = 1e-6


class GroupKind(str, Enum):
    TAG_NN = "tag_nn"
    WEIGHTED_NN = "weighted_nn"
    CLOSEST_CLUSTER = "closest_cluster"
    PREVIOUS_BEST = "previous_best"


def target_size(cost_cap: int, n: int, budget: int, available: int) -> int:
    """Agents a statement of cost cost_cap stands for, capped at what is left."""
    return max(1, min(math.ceil(cost_cap * n / budget), available))


def nearest(distances: np.ndarray, anchor: int, m: int) -> np.ndarray:
    """The anchor and its m-1 nearest points; ties go to the lower index."""
    index = np.arange(len(distances))
    order = np.lexsort((index, index != anchor, distances[anchor]))
    return np.sort(order[:m])


def tag_nn(distances: np.ndarray, m: int, rng: np.random.Generator, anchor: Optional[int] = None) -> np.ndarray:
    if anchor is None:
        anchor = int(rng.integers(len(distances)))
    return nearest(distances, anchor, m)


def inclusion_weights(incidence: np.ndarray, rounds: int = REWEIGHT_ROUNDS) -> np.ndarray:
    """
    Cluster weights that even out how likely each point is to be included.

    incidence is clusters x points; weights are updated multiplicatively
    towards the mean inclusion probability.
    """
    weights = np.full(incidence.shape[0], 1.0 / incidence.shape[0])
    sizes = incidence.sum(axis=1)
    for _ in range(rounds):
        inclusion = weights @ incidence
        target = inclusion.mean()
        member_mean = (incidence @ inclusion) / sizes
        weights *= target / np.maximum(member_mean, 1e-12)
        weights /= weights.sum()
    return weights


def weighted_nn(distances: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    clusters = [nearest(distances, anchor, m) for anchor in range(len(distances))]
    incidence = np.zeros((len(clusters), len(distances)))
    for row, members in enumerate(clusters):
        incidence[row, members] = 1.0
    weights = inclusion_weights(incidence)
    return clusters[int(rng.choice(len(clusters), p=weights))]


def agglomerate(distances: np.ndarray, anchor: int, m: int) -> Tuple[np.ndarray, float]:
    """Greedy cluster grown from anchor by the smallest summed distance; returns members and spread."""
    members = [anchor]
    inside = np.zeros(len(distances), dtype=bool)
    inside[anchor] = True
    summed = distances[anchor].copy()
    spread = 0.0
    while len(members) < m:
        pick = int(np.argmin(np.where(inside, np.inf, summed)))
        spread += float(summed[pick])
        members.append(pick)
        inside[pick] = True
        summed += distances[pick]
    return np.sort(np.array(members)), spread


def closest_cluster(distances: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    grown = [agglomerate(distances, anchor, m) for anchor in range(len(distances))]
    weights = np.array([1.0 / (CLUSTER_EPSILON + spread) for _, spread in grown])
    weights /= weights.sum()
    return grown[int(rng.choice(len(grown), p=weights))][0]


def previous_best(agents: Sequence[int], level: UtilityValue, cost_cap: int, state: ProseRunState) -> Tuple[int, ...]:
    """Approvers at level of the banked statement most of the agents approve."""
    best: Tuple[int, ...] = ()
    best_id = None
    for statement in sorted(state.snapshot(), key=lambda s: s.id):
        if not state.config.unit_cost and not 1 <= statement.cost <= cost_cap:
            continue
        approvers = tuple(agent for agent in agents if state.disc(agent, statement) >= level)
        if len(approvers) > len(best):
            best, best_id = approvers, statement.id
    if best_id is not None:
        logger.debug(f"previous_best: statement {best_id} approved by {len(best)} agents")
    return best


def propose_group(kind: Union[GroupKind, str],
                  agents: Sequence[int],
                  level: UtilityValue,
                  cost_cap: int,
                  state: ProseRunState,
                  rng: np.random.Generator,
                  space: str = "text") -> Tuple[int, ...]:
    """
    Propose a group of remaining agents to write a consensus statement for.

    Args:
        kind: which generator to use
        agents: the remaining agents
        space: embedding the neighbourhood generators measure distance in

    Returns:
        Tuple[int, ...]: sorted agent ids (empty when previous_best finds nothing)
    """
    kind = GroupKind(kind)
    agents = sorted(agents)
    if not agents:
        return ()
    if len(agents) == 1:
        return (agents[0],)
    if kind == GroupKind.PREVIOUS_BEST:
        return previous_best(agents, level, cost_cap, state)

    points = state.embeddings.space(space)[agents]
    distances = cdist(points, points) if points.shape[1] else np.zeros((len(agents), len(agents)))
    m = target_size(cost_cap, state.instance.n, state.instance.budget, len(agents))
    if kind == GroupKind.TAG_NN:
        chosen = tag_nn(distances, m, rng)
    elif kind == GroupKind.WEIGHTED_NN:
        chosen = weighted_nn(distances, m, rng)
    else:
        chosen = closest_cluster(distances, m, rng)
    return tuple(agents[int(i)] for i in chosen)
