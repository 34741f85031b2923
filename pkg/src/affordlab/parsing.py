"""Turn free-text LLM replies into object lists, verdicts and property subsets."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from affordlab.domain import ObjectClass, PropertyCatalog, canonicalize_label
from affordlab.errors import DataError, EmptyLabel, EmptySelection, NoObjectsFound

_WORD = r"[^\W_]+(?:'[^\W_]+)*"
_WORD_RE = re.compile(_WORD)
_PLAIN_WORD_RE = re.compile(r"[^\W_]+")
_LIST_LINE_RE = re.compile(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.*\S)")
_ITEM_CUT_RE = re.compile(r"\s[-\u2013\u2014]\s|[:(\[,;]|\.(?:\s|$)|\s[\u2013\u2014]|[\u2013\u2014]\s")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+|\n+")
_CLAUSE_RE = re.compile(r"[,;:()\u2013\u2014]|\s-\s|\b(?:but|while|whereas|however)\b", re.IGNORECASE)
_FALLBACK_SPLIT_RE = re.compile(r",|;|\band\b|\bor\b", re.IGNORECASE)
_ARTICLES = {"a", "an", "the", "some", "any"}
_NEGATION_CUES = {"not", "no", "never", "irrelevant", "unimportant", "nor", "neither", "without"}
NEGATION_WINDOW = 4


def _tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower().replace("’", "'"))


class VerdictValue(str, Enum):
    AFFIRMATIVE = "affirmative"
    NEGATIVE = "negative"
    AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class Verdict:
    value: VerdictValue
    evidence: str = ""

    def __post_init__(self):
        if (self.value is VerdictValue.AMBIGUOUS) != (self.evidence == ""):
            raise ValueError("evidence must be empty exactly when the verdict is ambiguous")

    @property
    def affirmative(self) -> bool:
        return self.value is VerdictValue.AFFIRMATIVE


@dataclass(frozen=True)
class Lexicon:
    affirmative: tuple[str, ...] = ("yes", "certainly", "indeed", "can", "is able")
    negative: tuple[str, ...] = ("no", "not", "cannot", "can't", "unable", "unsafe")

    @classmethod
    def from_file(cls, path: str | Path) -> Lexicon:
        try:
            data = json.loads(Path(path).read_text())
            return cls(
                affirmative=tuple(str(w) for w in data["affirmative"]),
                negative=tuple(str(w) for w in data["negative"]),
            )
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"invalid lexicon file {path}: {exc}") from exc

    def _phrases(self, words: Sequence[str]) -> list[tuple[str, tuple[str, ...]]]:
        out = []
        for w in words:
            toks = tuple(_tokens(w))
            if toks:
                out.append((w, toks))
        return out


DEFAULT_LEXICON = Lexicon()


def _find(tokens: Sequence[str], phrases, leading_only: bool = False) -> str:
    for word, toks in phrases:
        k = len(toks)
        starts = [0] if leading_only else range(len(tokens) - k + 1)
        for i in starts:
            if tuple(tokens[i : i + k]) == toks:
                return word
    return ""


def _negative(tokens: Sequence[str], phrases, leading_only: bool = False) -> str:
    hit = _find(tokens, phrases, leading_only)
    if hit:
        return hit
    # Contractions such as "shouldn't" count as negations too.
    for tok in tokens[:1] if leading_only else tokens:
        if tok.endswith("n't"):
            return tok
    return ""


def parse_verdict(text: str, lexicon: Lexicon = DEFAULT_LEXICON) -> Verdict:
    """Classify a yes/no style reply.

    Any negative word in the first sentence wins over affirmative ones.  If the
    first sentence carries no cue at all, the sentence- and clause-leading words
    of the remaining sentences are checked, negatives first.
    """
    neg = lexicon._phrases(lexicon.negative)
    aff = lexicon._phrases(lexicon.affirmative)
    sentences = [s for s in _SENTENCE_RE.split(text.strip()) if s.strip()]
    if not sentences:
        return Verdict(VerdictValue.AMBIGUOUS)
    first = _tokens(sentences[0])
    if hit := _negative(first, neg):
        return Verdict(VerdictValue.NEGATIVE, hit)
    if hit := _find(first, aff):
        return Verdict(VerdictValue.AFFIRMATIVE, hit)
    for sentence in sentences[1:]:
        for clause in _CLAUSE_RE.split(sentence):
            toks = _tokens(clause)
            if not toks:
                continue
            if hit := _negative(toks, neg, leading_only=True):
                return Verdict(VerdictValue.NEGATIVE, hit)
            if hit := _find(toks, aff, leading_only=True):
                return Verdict(VerdictValue.AFFIRMATIVE, hit)
    return Verdict(VerdictValue.AMBIGUOUS)


def _item_label(words: list[str]) -> str | None:
    while words and words[0] in _ARTICLES:
        words = words[1:]
    if not words or not any(ch.isalpha() for ch in "".join(words)):
        return None
    try:
        return canonicalize_label(" ".join(words))
    except EmptyLabel:
        return None


def clean_words(fragment: str) -> list[str]:
    """Lowercased word tokens with apostrophes dropped ("children's" -> "childrens")."""
    return _PLAIN_WORD_RE.findall(fragment.lower().replace("'", "").replace("’", ""))


def _list_items(text: str) -> list[str]:
    labels = []
    for line in text.splitlines():
        m = _LIST_LINE_RE.match(line)
        if not m:
            continue
        item = m.group(1).replace("*", " ").replace("`", " ").replace("_", " ")
        item = _ITEM_CUT_RE.split(item, maxsplit=1)[0]
        label = _item_label(clean_words(item))
        if label:
            labels.append(label)
    return labels


def _fallback_items(text: str) -> list[str]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    line = max(lines, key=len)
    segments = _FALLBACK_SPLIT_RE.split(line.rsplit(":", 1)[-1])
    # A lone sentence ("I am not sure.") is not a list; only split real enumerations.
    if len(segments) < 2 and ":" not in line:
        return []
    labels = []
    for segment in segments:
        words = clean_words(segment)
        # "try a bowl" -> "bowl": an article inside the segment starts the noun phrase.
        cut = max((i for i, w in enumerate(words) if w in _ARTICLES), default=-1)
        words = words[cut + 1 :]
        if len(words) > 3:
            words = words[-1:]
        label = _item_label(words)
        if label:
            labels.append(label)
    return labels


def parse_object_list(text: str, limit: int) -> list[ObjectClass]:
    """Extract object names from a numbered or bulleted reply.

    Replies without list markers fall back to comma splitting of the longest
    line.  Labels are canonicalised, de-duplicated in order and cut to ``limit``.
    """
    if limit < 1:
        raise ValueError("limit must be at least 1")
    labels = _list_items(text) or _fallback_items(text)
    out: list[ObjectClass] = []
    seen = set()
    for label in labels:
        if label in seen:
            continue
        seen.add(label)
        out.append(ObjectClass(label))
        if len(out) == limit:
            break
    if not out:
        raise NoObjectsFound("no object names found in reply")
    return out


def _is_cue(tok: str) -> bool:
    return tok in _NEGATION_CUES or tok.endswith("n't")


def parse_property_subset(text: str, catalog: PropertyCatalog) -> list[str]:
    """Return catalog dimensions the reply treats as relevant, in catalog order.

    A mention is dropped when a negation cue sits within four tokens of it in
    the same clause ("color is not relevant", "not the color").  Sentence ends
    also close a clause.
    """
    if not catalog.dimensions:
        raise ValueError("catalog must have at least one dimension")
    wanted = {name: tuple(name.split()) for name in catalog.names}
    selected = set()
    lowered = text.lower().replace("’", "'")
    clauses = [c for sentence in _SENTENCE_RE.split(lowered) for c in _CLAUSE_RE.split(sentence)]
    for clause in clauses:
        toks = [t[:-2] if t.endswith("'s") else t for t in _tokens(clause)]
        canon = [canonicalize_label(t) for t in toks]
        for name, parts in wanted.items():
            k = len(parts)
            for i in range(len(toks) - k + 1):
                window = tuple(toks[i : i + k - 1]) + (canon[i + k - 1],)
                if window != parts:
                    continue
                before = toks[max(0, i - NEGATION_WINDOW) : i]
                after = toks[i + k : i + k + NEGATION_WINDOW]
                if not any(_is_cue(t) for t in before + after):
                    selected.add(name)
    if not selected:
        raise EmptySelection("reply selected no catalog dimension")
    return [name for name in catalog.names if name in selected]
