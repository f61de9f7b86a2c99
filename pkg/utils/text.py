import re
from functools import lru_cache
from pathlib import Path
from string import Template
from typing import List, Optional

PROMPT_DIR = Path(__file__).resolve().parent.parent / "prompts"

_OPINION = re.compile(r"<opinion>(.*?)</opinion>", re.DOTALL | re.IGNORECASE)
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")


def word_count(text: str) -> int:
    """Number of maximal whitespace-separated tokens."""
    return len(text.split())


def extract_opinion(text: str) -> Optional[str]:
    """Text inside the first <opinion>...</opinion> pair, whitespace-trimmed."""
    match = _OPINION.search(text or "")
    if match is None:
        return None
    opinion = " ".join(match.group(1).split())
    return opinion or None


def parse_bullets(text: str) -> List[str]:
    """
    Statements of a bulleted answer, one per line.

    Lines without a bullet are kept only when no line carries one.
    """
    lines = [line for line in (text or "").splitlines() if line.strip()]
    bulleted = [_BULLET.sub("", line).strip() for line in lines if _BULLET.match(line)]
    items = bulleted if bulleted else [line.strip() for line in lines]
    return [item for item in items if item]


@lru_cache(maxsize=None)
def load_prompt(name: str) -> Template:
    path = PROMPT_DIR / f"{name}.txt"
    return Template(path.read_text(encoding="utf-8").rstrip("\n"))


def render_prompt(name: str, **values) -> str:
    return load_prompt(name).substitute(**{key: str(value) for key, value in values.items()})
