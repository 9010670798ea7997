"""Sentiment-driven antonym substitution over word-level transcripts."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence


@dataclass(frozen=True)
class Token:
    word: str
    start: float
    end: float


@dataclass(frozen=True)
class Transcript:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        prev = None
        for tok in self.tokens:
            if tok.end <= tok.start:
                raise ValueError(f"token {tok.word!r} has end <= start")
            if prev is not None and tok.start < prev.end:
                raise ValueError("token intervals overlap or are unsorted")
            prev = tok

    @classmethod
    def from_words(cls, words: Sequence[str], step: float = 0.4) -> "Transcript":
        """Evenly spaced tokens; handy for tests and demos."""
        return cls(tuple(Token(w, i * step, (i + 1) * step) for i, w in enumerate(words)))

    @property
    def words(self) -> list[str]:
        return [t.word for t in self.tokens]

    def __len__(self):
        return len(self.tokens)


@dataclass
class SentimentLexicon:
    valence: dict[str, float]
    antonyms: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        for word, ants in self.antonyms.items():
            for ant in ants:
                self.valence.setdefault(ant, 0.0)

    @classmethod
    def from_json(cls, obj: dict) -> "SentimentLexicon":
        unknown = set(obj) - {"valence", "antonyms"}
        if unknown:
            raise ValueError(f"unknown lexicon keys {sorted(unknown)}")
        valence = {str(k): float(v) for k, v in obj.get("valence", {}).items()}
        antonyms = {str(k): [str(a) for a in v] for k, v in obj.get("antonyms", {}).items()}
        return cls(valence, antonyms)

    @classmethod
    def load(cls, path: str | Path) -> "SentimentLexicon":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def bundled(cls) -> "SentimentLexicon":
        text = resources.files("glitchloc.data").joinpath("lexicon.json").read_text(encoding="utf-8")
        return cls.from_json(json.loads(text))

    def to_json(self) -> dict:
        return {"valence": dict(self.valence), "antonyms": {k: list(v) for k, v in self.antonyms.items()}}

    def score_word(self, word: str) -> float:
        return self.valence.get(word, 0.0)


@dataclass(frozen=True)
class Replacement:
    index: int
    original: str
    replacement: str
    delta: float  # S(D') - S(D) for this substitution alone


@dataclass(frozen=True)
class ReplacementPlan:
    replacements: tuple[Replacement, ...] = ()
    max_replacements: int = 1

    def __post_init__(self):
        if len(self.replacements) > self.max_replacements:
            raise ValueError("plan exceeds its replacement budget")
        if len({r.index for r in self.replacements}) != len(self.replacements):
            raise ValueError("plan replaces one token twice")

    @property
    def total_delta(self) -> float:
        return sum(r.delta for r in self.replacements)

    def __bool__(self):
        return bool(self.replacements)

    def apply(self, transcript: Transcript) -> Transcript:
        swap = {r.index: r.replacement for r in self.replacements}
        return Transcript(
            tuple(Token(swap.get(i, t.word), t.start, t.end) for i, t in enumerate(transcript.tokens))
        )


def sentiment_score(transcript: Transcript, lexicon: SentimentLexicon) -> float:
    return sum(lexicon.score_word(t.word) for t in transcript.tokens)


def candidate_replacements(transcript: Transcript, lexicon: SentimentLexicon) -> Iterator[Replacement]:
    """Every single-token antonym swap, in (token index, antonym) order."""
    for idx, tok in enumerate(transcript.tokens):
        base = lexicon.score_word(tok.word)
        for ant in sorted(lexicon.antonyms.get(tok.word, ())):
            yield Replacement(idx, tok.word, ant, lexicon.score_word(ant) - base)


def _plan_key(combo: Sequence[Replacement]):
    return (
        -abs(sum(r.delta for r in combo)),
        len(combo),
        tuple(r.index for r in combo),
        tuple(r.replacement for r in combo),
    )


def best_single_replacement(transcript: Transcript, lexicon: SentimentLexicon) -> Replacement | None:
    best = None
    for cand in candidate_replacements(transcript, lexicon):
        if cand.delta == 0:
            continue
        if best is None or _plan_key((cand,)) < _plan_key((best,)):
            best = cand
    return best


def select_replacements(transcript: Transcript, lexicon: SentimentLexicon, max_replacements: int) -> ReplacementPlan:
    """Pick up to ``max_replacements`` swaps maximizing |sum of sentiment changes|.

    Exhaustive over candidate subsets with distinct token indices; ties go
    to fewer swaps, then lower token indices, then alphabetical antonyms.
    Zero-change swaps never enter a plan.
    """
    if max_replacements < 1:
        raise ValueError("max_replacements must be >= 1")
    cands = [c for c in candidate_replacements(transcript, lexicon) if c.delta != 0]
    best: tuple[Replacement, ...] = ()
    best_key = None
    for size in range(1, max_replacements + 1):
        for combo in itertools.combinations(cands, size):
            if len({c.index for c in combo}) != size:
                continue
            key = _plan_key(combo)
            if best_key is None or key < best_key:
                best, best_key = combo, key
    if best and sum(r.delta for r in best) == 0:
        best = ()
    return ReplacementPlan(tuple(best), max_replacements)


def replacement_budget(duration: float) -> int:
    """Up to one swap for clips shorter than 10 s, two otherwise."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    return 1 if duration < 10.0 else 2
