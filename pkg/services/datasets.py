import html
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import orjson
import pandas as pd
from pydantic import ValidationError

from models.dataset import DatasetKind, DrugReviewParams, PolisParams, VoteRecord
from models.instance import Instance
from models.llm import PROSE_LEVELS
from services.llm_client import LlmBackend
from utils.exceptions import ConfigError, DatasetError
from utils.text import render_prompt, word_count

REVIEW_COLUMNS = ("drugName", "review", "rating")


def clean_review(text: str) -> str:
    text = html.unescape(str(text)).strip()
    if len(text) >= 2 and text[0] == text[-1] == '"':
        text = text[1:-1]
    return " ".join(text.split())


def _read_jsonl(path: Path) -> List[dict]:
    try:
        with path.open("rb") as handle:
            return [orjson.loads(line) for line in handle if line.strip()]
    except (OSError, orjson.JSONDecodeError) as e:
        raise DatasetError(f"Cannot read {path}: {e}") from e


class DatasetService:
    def __init__(self, backend: Optional[LlmBackend] = None):
        """
        Turn review tables and prepared agent files into instances.

        Args:
            backend (LlmBackend): needed only for the brand filter
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.backend = backend

    def load_reviews(self, paths: Sequence[Union[str, Path]]) -> pd.DataFrame:
        frames = []
        for path in map(Path, paths):
            sep = "\t" if path.suffix in (".tsv", ".txt") else ","
            try:
                frame = pd.read_csv(path, sep=sep)
            except (OSError, pd.errors.ParserError) as e:
                self.logger.error(f"Failed to read reviews from {path}: {str(e)}")
                raise DatasetError(f"Cannot read review table {path}: {e}") from e
            missing = [column for column in REVIEW_COLUMNS if column not in frame.columns]
            if missing:
                raise DatasetError(f"{path} lacks columns {missing}")
            frames.append(frame)
        if not frames:
            raise DatasetError("No review files given")
        reviews = pd.concat(frames, ignore_index=True)
        reviews["review"] = reviews["review"].map(clean_review)
        reviews["drugName"] = reviews["drugName"].map(lambda name: html.unescape(str(name)).strip())
        return reviews

    def mentions_brand(self, drug: str, review: str) -> bool:
        answer = self.backend.chat(render_prompt("brand_filter_system"),
                                   render_prompt("brand_filter_user", drug=drug, review=review),
                                   temperature=0, max_tokens=2).text
        return answer.strip().lower().startswith("yes")

    def select_reviews(self, reviews: pd.DataFrame, params: DrugReviewParams,
                       rng: np.random.Generator) -> pd.DataFrame:
        """
        Filter to one drug, drop brand talk, keep the length band, then sample per rating.

        Raises:
            DatasetError: when a rating stratum has too few reviews
        """
        drug = reviews[reviews["drugName"].str.casefold() == params.drug.casefold()]
        drug = drug.drop_duplicates(subset="review").reset_index(drop=True)
        self.logger.info(f"{len(drug)} reviews of {params.drug}")

        if params.filter_brands:
            if self.backend is None:
                raise ConfigError("The brand filter needs an LLM backend")
            flags = self.backend.map(lambda text: self.mentions_brand(params.drug, text), drug["review"].tolist())
            drug = drug[~np.array(flags, dtype=bool)].reset_index(drop=True)
            self.logger.info(f"{len(drug)} reviews left after the brand filter")

        lengths = drug["review"].map(word_count)
        low, high = np.percentile(lengths, params.percentiles) if len(drug) else (0, 0)
        drug = drug[(lengths >= low) & (lengths <= high)].reset_index(drop=True)
        self.logger.info(f"{len(drug)} reviews between {low:.0f} and {high:.0f} words")

        picked = []
        for rating, count in sorted(params.strata.items()):
            pool = drug.index[drug["rating"].astype(int) == rating].to_numpy()
            if len(pool) < count:
                raise DatasetError(f"Rating stratum {rating} of {params.name} has {len(pool)} reviews, "
                                   f"{count} needed")
            picked.extend(sorted(rng.choice(pool, size=count, replace=False).tolist()))
        return drug.loc[picked].reset_index(drop=True)

    def drug_review_instance(self, paths: Sequence[Union[str, Path]], params: DrugReviewParams,
                             rng: np.random.Generator) -> Instance:
        sample = self.select_reviews(self.load_reviews(paths), params, rng)
        return Instance.create(sample["review"].tolist(), params.budget, list(PROSE_LEVELS), topic=params.topic)

    def polis_instance(self, path: Union[str, Path], params: PolisParams) -> Instance:
        records = _read_jsonl(Path(path))
        try:
            descriptions = [str(record["description"]) for record in records]
        except (KeyError, TypeError) as e:
            raise DatasetError(f"{path}: every line needs a description ({e})") from e
        if not descriptions:
            raise DatasetError(f"{path} holds no agents")
        return Instance.create(descriptions, params.budget, list(PROSE_LEVELS), topic=params.topic)


def ingest_dataset(kind: Union[DatasetKind, str],
                   paths: Sequence[Union[str, Path]],
                   params: Optional[Union[DrugReviewParams, PolisParams]],
                   backend: Optional[LlmBackend],
                   rng: np.random.Generator) -> Instance:
    """
    Build the instance of a drug-review or Polis dataset.

    Raises:
        DatasetError: unreadable files or empty strata
        ConfigError: unknown kind or parameters of the wrong kind
    """
    try:
        kind = DatasetKind(kind)
    except ValueError as e:
        raise ConfigError(f"Unknown dataset kind: {kind}") from e
    service = DatasetService(backend)
    if kind == DatasetKind.DRUG_REVIEW:
        if not isinstance(params, DrugReviewParams):
            raise ConfigError("Drug-review ingestion needs DrugReviewParams")
        return service.drug_review_instance(paths, params, rng)
    if len(paths) != 1:
        raise ConfigError("Polis ingestion reads exactly one prepared agent file")
    return service.polis_instance(paths[0], params if isinstance(params, PolisParams) else PolisParams())


def load_votes(path: Union[str, Path]) -> List[VoteRecord]:
    records = _read_jsonl(Path(path))
    try:
        return [VoteRecord.model_validate(record) for record in records]
    except ValidationError as e:
        raise DatasetError(f"{path}: malformed vote record ({e})") from e
