import logging
import re
from typing import List, Sequence

import numpy as np

from models.instance import Agent
from models.llm import EmbeddingState
from services.llm_client import LlmBackend
from utils.text import parse_bullets, render_prompt

NEUTRAL_RATING = 4
_RATING = re.compile(r"[1-7]")


def format_opinions(agents: Sequence[Agent]) -> str:
    return "\n\n".join(f"User {position + 1}: {agent.description}" for position, agent in enumerate(agents))


class EmbeddingService:
    def __init__(self, backend: LlmBackend, rated_statements: int = 50, max_statements: int = 120,
                 max_rounds: int = 12):
        """
        Build the two agent embeddings PROSE groups agents with.

        Args:
            backend (LlmBackend): chat and embedding access
            rated_statements (int): issue statements kept for the rating embedding
            max_statements (int): stop asking for issue statements past this many
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.backend = backend
        self.rated_statements = rated_statements
        self.max_statements = max_statements
        self.max_rounds = max_rounds

    def text_embedding(self, agents: Sequence[Agent]) -> np.ndarray:
        return self.backend.embed([str(agent.description) for agent in agents])

    def issue_statements(self, agents: Sequence[Agent]) -> List[str]:
        """
        Ask for brief statements until the model answers DONE or the cap is hit.
        """
        system = render_prompt("issue_statements_system")
        opinions = format_opinions(agents)
        statements: List[str] = []
        for round_number in range(self.max_rounds):
            existing = "\n".join(f"- {s}" for s in statements) or "(none yet)"
            answer = self.backend.chat(system, render_prompt("issue_statements_user",
                                                             user_opinions=opinions, existing=existing),
                                       temperature=0).text
            if answer.strip().upper().startswith("DONE"):
                break
            fresh = [s for s in parse_bullets(answer) if s.upper() != "DONE" and s not in statements]
            if not fresh:
                break
            statements.extend(fresh)
            self.logger.debug(f"Issue statement round {round_number}: {len(statements)} statements")
            if len(statements) >= self.max_statements:
                break
        return statements[:self.max_statements]

    def rate(self, agent: Agent, statement: str) -> int:
        answer = self.backend.chat(render_prompt("rating_system"),
                                   render_prompt("rating_user", user_information=agent.description,
                                                 statement=statement),
                                   temperature=0, max_tokens=2).text
        match = _RATING.search(answer)
        if match is None:
            self.logger.warning(f"Unparseable rating {answer!r} for agent {agent.id}; using {NEUTRAL_RATING}")
            return NEUTRAL_RATING
        return int(match.group())

    def rating_embedding(self, agents: Sequence[Agent], statements: Sequence[str]) -> np.ndarray:
        pairs = [(agent, statement) for agent in agents for statement in statements]
        ratings = self.backend.map(lambda pair: self.rate(*pair), pairs)
        return np.asarray(ratings, dtype=np.float64).reshape(len(agents), len(statements))

    def build(self, agents: Sequence[Agent], rng: np.random.Generator) -> EmbeddingState:
        try:
            text = self.text_embedding(agents)
            statements = self.issue_statements(agents)
            if len(statements) > self.rated_statements:
                keep = np.sort(rng.choice(len(statements), size=self.rated_statements, replace=False))
                statements = [statements[int(i)] for i in keep]
            ratings = self.rating_embedding(agents, statements)
        except Exception as e:
            self.logger.error(f"Failed to build embeddings for {len(agents)} agents: {str(e)}")
            raise
        self.logger.info(f"Embeddings ready: text dim {text.shape[1] if text.size else 0}, "
                         f"{len(statements)} rated issue statements")
        return EmbeddingState(text_embedding=text, rating_embedding=ratings, issue_statements=tuple(statements))


def build_embeddings(agents: Sequence[Agent], backend: LlmBackend, rng: np.random.Generator,
                     rated_statements: int = 50) -> EmbeddingState:
    return EmbeddingService(backend, rated_statements=rated_statements).build(agents, rng)
