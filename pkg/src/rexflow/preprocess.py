"""Tokenization and the pre-processing variants.

Each variant is a pure function ``RelationInstance -> RelationInstance``.
Tokens may be dropped or whole spans collapsed to a single placeholder, but
the two relation arguments are never dropped and their spans are re-indexed
onto the new token sequence.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .corpus import RelationInstance, Span
from .errors import ConfigError, DataError

VARIANTS = ("original", "entity_blind", "punct_digit", "punct_digit_stop", "ner_blind")
UNTYPED_NER_TOKEN = "Entity"
DIGIT_SYMBOL = "#"

_DIGITS = re.compile(r"\d+")


def is_punct_char(c: str) -> bool:
    return unicodedata.category(c)[0] in "PS"


def is_punct_token(tok: str) -> bool:
    return bool(tok) and all(is_punct_char(c) for c in tok)


def tokenize_lower(text: str) -> list[str]:
    """Whitespace split, detach leading/trailing punctuation, lowercase.

    >>> tokenize_lower("Aspirin, 50mg!")
    ['aspirin', ',', '50mg', '!']
    """
    out: list[str] = []
    for chunk in text.split():
        i, j = 0, len(chunk)
        while i < j and is_punct_char(chunk[i]):
            i += 1
        if i == j:
            out.extend(chunk)
            continue
        while is_punct_char(chunk[j - 1]):
            j -= 1
        out.extend(chunk[:i])
        out.append(chunk[i:j].lower())
        out.extend(chunk[j:])
    return out


def default_stop_list() -> frozenset[str]:
    text = resources.files("rexflow").joinpath("data/stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(w for w in text.split() if w)


def load_stop_list(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as f:
        return frozenset(line.strip() for line in f if line.strip())


# ---------------------------------------------------------------------------
# span-preserving rebuild


def rebuild(
    inst: RelationInstance,
    drop: Iterable[int] = (),
    collapse: Sequence[tuple[Span, str]] = (),
    rewrite: Optional[Callable[[str], str]] = None,
) -> RelationInstance:
    """Drop tokens, collapse spans to one token, and re-index e1/e2.

    ``collapse`` spans must be mutually disjoint; dropped indices inside a
    collapsed span are ignored.  ``rewrite`` is applied to every token that is
    kept as-is (not to collapse replacements).
    """
    n = len(inst.tokens)
    drop = set(drop)
    starts = {}
    for span, repl in collapse:
        starts[span.start] = (span, repl)
    new_tokens: list[str] = []
    new_index: list[Optional[int]] = [None] * n
    i = 0
    while i < n:
        if i in starts:
            span, repl = starts[i]
            for k in range(span.start, span.end + 1):
                new_index[k] = len(new_tokens)
            new_tokens.append(repl)
            i = span.end + 1
            continue
        if i not in drop:
            new_index[i] = len(new_tokens)
            tok = inst.tokens[i]
            new_tokens.append(rewrite(tok) if rewrite else tok)
        i += 1

    def remap(span: Span) -> Span:
        kept = [new_index[k] for k in range(span.start, span.end + 1) if new_index[k] is not None]
        if not kept:
            raise DataError(f"{inst.id}: entity span {span} removed entirely")
        return Span(min(kept), max(kept))

    return inst.replace(tokens=tuple(new_tokens), e1=remap(inst.e1), e2=remap(inst.e2))


def _entity_positions(inst: RelationInstance) -> set[int]:
    return set(range(inst.e1.start, inst.e1.end + 1)) | set(range(inst.e2.start, inst.e2.end + 1))


# ---------------------------------------------------------------------------
# variants


def entity_blind(inst: RelationInstance) -> RelationInstance:
    """Replace each argument span by a single token naming its concept type."""
    if not inst.e1_type or not inst.e2_type:
        raise DataError(f"{inst.id}: entity blinding needs both concept types")
    return rebuild(inst, collapse=[(inst.e1, inst.e1_type), (inst.e2, inst.e2_type)])


def punct_digit_normalize(inst: RelationInstance, symbol: str = DIGIT_SYMBOL) -> RelationInstance:
    protected = _entity_positions(inst)
    drop = [i for i, t in enumerate(inst.tokens) if i not in protected and is_punct_token(t)]
    return rebuild(inst, drop=drop, rewrite=lambda t: _DIGITS.sub(symbol, t))


def stop_remove(inst: RelationInstance, stop_list: Iterable[str]) -> RelationInstance:
    stops = set(stop_list)
    protected = _entity_positions(inst)
    drop = [i for i, t in enumerate(inst.tokens) if i not in protected and t in stops]
    return rebuild(inst, drop=drop)


@dataclass(frozen=True)
class NerAnnotation:
    id: str
    entities: tuple[tuple[Span, str], ...] = ()

    def __post_init__(self):
        ents = tuple(sorted(self.entities, key=lambda e: (e[0].start, e[0].end)))
        object.__setattr__(self, "entities", ents)
        for (a, _), (b, _) in zip(ents, ents[1:]):
            if a.overlaps(b):
                raise DataError(f"{self.id}: overlapping NER spans {a} and {b}")


def ner_blind(inst: RelationInstance, ann: Optional[NerAnnotation], typed: bool = True) -> RelationInstance:
    """Collapse automatically detected named entities to their type (or ``Entity``).

    NER spans that touch a gold argument span are skipped.
    """
    if ann is None or not ann.entities:
        return inst
    n = len(inst.tokens)
    collapse = []
    for span, ty in ann.entities:
        if span.end >= n:
            raise DataError(f"{inst.id}: NER span {span} out of bounds for {n} tokens")
        if span.overlaps(inst.e1) or span.overlaps(inst.e2):
            continue
        collapse.append((span, ty if typed else UNTYPED_NER_TOKEN))
    return rebuild(inst, collapse=collapse)


def load_ner_sidecar(path: str | Path) -> dict[str, NerAnnotation]:
    out: dict[str, NerAnnotation] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ents = tuple((Span(int(e["start"]), int(e["end"])), str(e["type"])) for e in rec["entities"])
                iid = str(rec["id"])
                if min((s.start for s, _ in ents), default=0) < 0:
                    raise DataError("negative span index")
                ann = NerAnnotation(iid, ents)
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"{path}: malformed NER record at line {line_no}: {e}") from None
            if iid in out:
                raise DataError(f"{path}: duplicate id {iid!r} at line {line_no}")
            out[iid] = ann
    return out


def write_ner_sidecar(annotations: Iterable[NerAnnotation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ann in annotations:
            ents = [{"start": s.start, "end": s.end, "type": t} for s, t in ann.entities]
            f.write(json.dumps({"id": ann.id, "entities": ents}) + "\n")


TOY_GAZETTEER = {
    ("london",): "GPE",
    ("boston",): "GPE",
    ("smith",): "PERSON",
    ("john",): "PERSON",
    ("acme",): "ORGANIZATION",
    ("monday",): "DATE",
}


def toy_ner(tokens: Sequence[str], gazetteer: Mapping[tuple[str, ...], str] = TOY_GAZETTEER) -> list[tuple[Span, str]]:
    """Longest-match gazetteer lookup plus a capitalization fallback.

    Only meant for tests and synthetic corpora; real annotations come from a
    sidecar file produced by an external tagger.
    """
    longest = max((len(k) for k in gazetteer), default=0)
    lowered = [t.lower() for t in tokens]
    found = []
    i = 0
    while i < len(tokens):
        for size in range(min(longest, len(tokens) - i), 0, -1):
            key = tuple(lowered[i:i + size])
            if key in gazetteer:
                found.append((Span(i, i + size - 1), gazetteer[key]))
                i += size
                break
        else:
            if i > 0 and tokens[i][:1].isupper():
                found.append((Span(i, i), "MISC"))
            i += 1
    return found


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreprocessVariant:
    kind: str = "original"
    stop_list: frozenset[str] = field(default_factory=frozenset)
    ner_typed: bool = True
    digit_symbol: str = DIGIT_SYMBOL

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ConfigError(f"unknown pre-processing variant {self.kind!r}; expected one of {VARIANTS}")
        if self.kind == "punct_digit_stop" and not self.stop_list:
            object.__setattr__(self, "stop_list", default_stop_list())
        object.__setattr__(self, "stop_list", frozenset(self.stop_list))

    def apply(self, inst: RelationInstance, ner: Optional[Mapping[str, NerAnnotation]] = None) -> RelationInstance:
        if self.kind == "original":
            return inst
        if self.kind == "entity_blind":
            return entity_blind(inst)
        if self.kind == "punct_digit":
            return punct_digit_normalize(inst, self.digit_symbol)
        if self.kind == "punct_digit_stop":
            return stop_remove(punct_digit_normalize(inst, self.digit_symbol), self.stop_list)
        if ner is None:
            raise ConfigError("NER blinding requires an annotation sidecar")
        return ner_blind(inst, ner.get(inst.id), typed=self.ner_typed)

    def apply_all(self, instances: Iterable[RelationInstance],
                  ner: Optional[Mapping[str, NerAnnotation]] = None) -> list[RelationInstance]:
        return [self.apply(inst, ner) for inst in instances]
