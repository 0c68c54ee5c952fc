"""Data model, common CSV interchange, dataset adapters and synthetic corpora.

Every stage of the pipeline consumes and produces :class:`RelationInstance`
values.  Instances are immutable; transforms return new instances.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from .errors import DataError

CSV_HEADER = ["id", "tokens", "e1_start", "e1_end", "e2_start", "e2_end", "e1_type", "e2_type", "label"]


@dataclass(frozen=True)
class Span:
    """Inclusive token range ``[start, end]``."""

    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise DataError(f"span start {self.start} > end {self.end}")

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, i: int) -> bool:
        return self.start <= i <= self.end

    def overlaps(self, other: "Span") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class RelationInstance:
    id: str
    tokens: tuple[str, ...]
    e1: Span
    e2: Span
    label: str
    e1_type: Optional[str] = None
    e2_type: Optional[str] = None
    # not part of the CSV layout, so excluded from equality
    source: str = field(default="csv", compare=False)

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))

    def check(self, schema: Optional["RelationSchema"] = None) -> None:
        """Raise :class:`DataError` if any instance invariant is violated."""
        n = len(self.tokens)
        for name, span in (("e1", self.e1), ("e2", self.e2)):
            if not (0 <= span.start <= span.end < n):
                raise DataError(f"span out of bounds ({name}={span.start}..{span.end}, {n} tokens)")
        if self.e1.overlaps(self.e2):
            raise DataError("entity spans overlap")
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise DataError(f"invalid token {tok!r}")
        if schema is not None and self.label not in schema.labels:
            raise DataError(f"unknown label {self.label!r}")

    def replace(self, **changes) -> "RelationInstance":
        values = dict(
            id=self.id, tokens=self.tokens, e1=self.e1, e2=self.e2, label=self.label,
            e1_type=self.e1_type, e2_type=self.e2_type, source=self.source,
        )
        values.update(changes)
        return RelationInstance(**values)


@dataclass(frozen=True)
class RelationSchema:
    """Label inventory and evaluation policy of one dataset."""

    name: str
    labels: tuple[str, ...]
    null_label: Optional[str]
    metric_included: tuple[str, ...]
    averaging: str = "macro"
    detection_enabled: bool = False
    concept_types: tuple[str, ...] = ()

    def __post_init__(self):
        for attr in ("labels", "metric_included", "concept_types"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"schema {self.name}: duplicate labels")
        if not set(self.metric_included) <= set(self.labels):
            raise DataError(f"schema {self.name}: metric_included is not a subset of labels")
        if self.null_label is not None and self.null_label not in self.labels:
            raise DataError(f"schema {self.name}: null label {self.null_label!r} not among labels")
        if self.averaging not in ("macro", "micro"):
            raise DataError(f"schema {self.name}: averaging must be macro or micro")
        if self.detection_enabled and self.null_label is None:
            raise DataError(f"schema {self.name}: detection requires a null label")

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "labels": list(self.labels),
            "null_label": self.null_label,
            "metric_included": list(self.metric_included),
            "averaging": self.averaging,
            "detection_enabled": self.detection_enabled,
            "concept_types": list(self.concept_types),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RelationSchema":
        known = {"name", "labels", "null_label", "metric_included", "averaging", "detection_enabled", "concept_types"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise DataError(f"unknown schema keys: {', '.join(unknown)}")
        labels = d["labels"]
        return cls(
            name=d.get("name", "custom"),
            labels=labels,
            null_label=d.get("null_label"),
            metric_included=d.get("metric_included", labels),
            averaging=d.get("averaging", "macro"),
            detection_enabled=bool(d.get("detection_enabled", False)),
            concept_types=d.get("concept_types", ()),
        )


_SEMEVAL_RELATIONS = [
    "Cause-Effect", "Component-Whole", "Content-Container", "Entity-Destination", "Entity-Origin",
    "Instrument-Agency", "Member-Collection", "Message-Topic", "Product-Producer",
]
_SEMEVAL_LABELS = tuple(f"{r}({a},{b})" for r in _SEMEVAL_RELATIONS for a, b in (("e1", "e2"), ("e2", "e1")))

SEMEVAL_SCHEMA = RelationSchema(
    name="semeval",
    labels=_SEMEVAL_LABELS + ("Other",),
    null_label="Other",
    metric_included=_SEMEVAL_LABELS,
    averaging="macro",
    detection_enabled=False,
    concept_types=("ENTITY",),
)

DDI_SCHEMA = RelationSchema(
    name="ddi",
    labels=("advise", "effect", "mechanism", "int", "None"),
    null_label="None",
    metric_included=("advise", "effect", "mechanism", "int", "None"),
    averaging="macro",
    detection_enabled=True,
    concept_types=("DRUG",),
)

_I2B2_LABELS = ("TrIP", "TrWP", "TrCP", "TrAP", "TrNAP", "TeRP", "TeCP", "PIP")
I2B2_SCHEMA = RelationSchema(
    name="i2b2",
    labels=_I2B2_LABELS + ("None",),
    null_label="None",
    metric_included=_I2B2_LABELS,
    averaging="micro",
    detection_enabled=True,
    concept_types=("PROBLEM", "TEST", "TREATMENT"),
)

BUILTIN_SCHEMAS = {s.name: s for s in (SEMEVAL_SCHEMA, DDI_SCHEMA, I2B2_SCHEMA)}


def load_schema(name_or_path: str | Path) -> RelationSchema:
    """Return a builtin schema by name, or read one from a YAML file."""
    if str(name_or_path) in BUILTIN_SCHEMAS:
        return BUILTIN_SCHEMAS[str(name_or_path)]
    path = Path(name_or_path)
    if not path.exists():
        raise DataError(f"no builtin schema or schema file named {name_or_path!r}")
    with open(path, encoding="utf-8") as f:
        d = yaml.safe_load(f) or {}
    if not isinstance(d, dict):
        raise DataError(f"{path}: schema file must be a mapping")
    return RelationSchema.from_dict(d)


def save_schema(schema: RelationSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(schema.to_dict(), f, sort_keys=False)


@dataclass(frozen=True)
class Dataset:
    schema: RelationSchema
    train: tuple[RelationInstance, ...]
    test: Optional[tuple[RelationInstance, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        if self.test is not None:
            object.__setattr__(self, "test", tuple(self.test))
        for split in (self.train, self.test or ()):
            validate_instances(split, self.schema)


def validate_instances(instances: Sequence[RelationInstance], schema: Optional[RelationSchema] = None) -> None:
    seen = set()
    for row, inst in enumerate(instances, start=1):
        try:
            inst.check(schema)
        except DataError as e:
            raise DataError(f"{e}, row {row}") from None
        if inst.id in seen:
            raise DataError(f"duplicate id {inst.id!r}, row {row}")
        seen.add(inst.id)


# ---------------------------------------------------------------------------
# common CSV


def read_common_csv(path: str | Path, schema: Optional[RelationSchema] = None, source: str = "csv") -> list[RelationInstance]:
    """Read instances from the common CSV format.

    Errors name the 1-based data row (the header is not counted).
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header") from None
        if header != CSV_HEADER:
            raise DataError(f"{path}: header {header} does not match {CSV_HEADER}")
        out: list[RelationInstance] = []
        seen: set[str] = set()
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DataError(f"malformed row ({len(row)} fields), row {row_no}")
            iid, toks, s1, t1, s2, t2, ty1, ty2, label = row
            try:
                e1 = Span(int(s1), int(t1))
                e2 = Span(int(s2), int(t2))
            except ValueError:
                raise DataError(f"malformed span, row {row_no}") from None
            tokens = tuple(toks.split(" ")) if toks else ()
            inst = RelationInstance(
                id=iid, tokens=tokens, e1=e1, e2=e2, label=label,
                e1_type=ty1 or None, e2_type=ty2 or None, source=source,
            )
            try:
                inst.check(schema)
            except DataError as e:
                raise DataError(f"{e}, row {row_no}") from None
            if iid in seen:
                raise DataError(f"duplicate id {iid!r}, row {row_no}")
            seen.add(iid)
            out.append(inst)
    return out


def _csv_row(inst: RelationInstance) -> list:
    return [
        inst.id, " ".join(inst.tokens), inst.e1.start, inst.e1.end, inst.e2.start, inst.e2.end,
        inst.e1_type or "", inst.e2_type or "", inst.label,
    ]


def write_common_csv(instances: Iterable[RelationInstance], path: str | Path) -> None:
    instances = list(instances)
    validate_instances(instances)
    try:
        f = open(path, "w", newline="", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from None
    with f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for inst in instances:
            writer.writerow(_csv_row(inst))


def dumps_common_csv(instances: Iterable[RelationInstance]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_HEADER)
    for inst in instances:
        writer.writerow(_csv_row(inst))
    return buf.getvalue()


# ---------------------------------------------------------------------------
# SemEval-2010 Task 8

_TAG_RE = re.compile(r"<(/?)(e[12])>")


def parse_tagged_sentence(sentence: str) -> tuple[list[str], Span, Span]:
    """Tokenize a sentence with inline ``<e1>..</e1>``/``<e2>..</e2>`` tags."""
    from .preprocess import tokenize_lower

    tokens: list[str] = []
    opened: dict[str, int] = {}
    spans: dict[str, Span] = {}
    pos = 0
    for m in _TAG_RE.finditer(sentence):
        tokens.extend(tokenize_lower(sentence[pos:m.start()]))
        pos = m.end()
        closing, name = m.group(1) == "/", m.group(2)
        if not closing:
            if name in opened or name in spans:
                raise DataError(f"repeated <{name}> tag")
            opened[name] = len(tokens)
        else:
            if name not in opened:
                raise DataError(f"</{name}> without opening tag")
            start = opened.pop(name)
            if len(tokens) == start:
                raise DataError(f"empty <{name}> entity")
            spans[name] = Span(start, len(tokens) - 1)
    tokens.extend(tokenize_lower(sentence[pos:]))
    if opened or set(spans) != {"e1", "e2"}:
        raise DataError("missing entity tag")
    return tokens, spans["e1"], spans["e2"]


def _semeval_blocks(text: str):
    lines = [ln.rstrip("\r") for ln in text.split("\n")]
    block: list[tuple[int, str]] = []
    for no, ln in enumerate(lines, start=1):
        if ln.strip():
            block.append((no, ln))
        elif block:
            yield block
            block = []
    if block:
        yield block


def parse_semeval(path: str | Path, schema: RelationSchema = SEMEVAL_SCHEMA) -> list[RelationInstance]:
    """Parse one SemEval-2010 Task 8 file (``TRAIN_FILE.TXT`` layout).

    Comment lines are discarded.
    """
    text = Path(path).read_text(encoding="utf-8")
    out = []
    for block in _semeval_blocks(text):
        line_no, first = block[0]
        m = re.match(r'^\s*(\d+)\s+"?(.*?)"?\s*$', first)
        if not m or len(block) < 2:
            raise DataError(f"{path}: unparseable block at line {line_no}")
        iid, sentence = m.group(1), m.group(2)
        relation = block[1][1].strip()
        if relation not in schema.labels:
            raise DataError(f"{path}: unknown relation {relation!r} at line {block[1][0]}")
        try:
            tokens, e1, e2 = parse_tagged_sentence(sentence)
        except DataError as e:
            raise DataError(f"{path}: {e} at line {line_no}") from None
        inst = RelationInstance(
            id=iid, tokens=tuple(tokens), e1=e1, e2=e2, label=relation,
            e1_type="ENTITY", e2_type="ENTITY", source="semeval",
        )
        try:
            inst.check(schema)
        except DataError as e:
            raise DataError(f"{path}: {e} at line {line_no}") from None
        out.append(inst)
    return out


def adapt_semeval(raw_train: str | Path, raw_test: Optional[str | Path] = None) -> Dataset:
    train = parse_semeval(raw_train)
    test = parse_semeval(raw_test) if raw_test is not None else None
    return Dataset(SEMEVAL_SCHEMA, train, test)


# ---------------------------------------------------------------------------
# synthetic corpora

SYNTH_FILLERS = (
    "the", "a", "of", "with", "is", "was", "in", "on", "and", "to", "for", "after",
    ",", ".", "(", ")", ";", "10", "250", "2", "mg", "b12",
    "patient", "report", "noted", "daily", "study", "found", "dose", "level",
    "london", "boston", "smith", "acme", "monday",
)
SYNTH_TYPES = ("PROBLEM", "TEST", "TREATMENT")


def _alpha(i: int) -> str:
    """Digit-free code for an integer: 0 -> 'a', 25 -> 'z', 26 -> 'ba'."""
    s = ""
    while True:
        s = chr(ord("a") + i % 26) + s
        i //= 26
        if i == 0:
            return s


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic toy corpus.

    ``mode="trigger"`` ties each class to a trigger-word pair placed between
    the entities.  ``mode="typed"`` makes the label a function of the
    concept-type pair of the two entities; entity words are drawn from large
    pools so the surface form carries no label information.
    ``trigger_noise`` swaps that fraction of triggers to another class's
    pattern while keeping the label.
    """

    size: int
    classes: int
    seed: int = 0
    test_size: Optional[int] = None
    mode: str = "trigger"
    trigger_noise: float = 0.0
    concept_types: tuple[str, ...] = SYNTH_TYPES

    def __post_init__(self):
        if self.classes < 2:
            raise DataError("synthetic corpus needs at least 2 classes")
        if self.size < self.classes:
            raise DataError("synthetic corpus size must be >= number of classes")
        if self.mode not in ("trigger", "typed"):
            raise DataError(f"unknown synthetic mode {self.mode!r}")
        if self.mode == "typed" and self.classes > len(self.concept_types) ** 2:
            raise DataError("typed mode supports at most |types|^2 classes")


def synth_labels(classes: int) -> tuple[str, ...]:
    return tuple(f"rel_{_alpha(c)}" for c in range(classes))


def synth_schema(spec: SynthSpec) -> RelationSchema:
    labels = synth_labels(spec.classes)
    return RelationSchema(
        name=f"synth{spec.classes}",
        labels=labels,
        null_label=None,
        metric_included=labels,
        averaging="macro",
        detection_enabled=False,
        concept_types=spec.concept_types,
    )


def _synth_split(spec: SynthSpec, n: int, rng: np.random.Generator, prefix: str,
                 pairs: list[tuple[str, str]]) -> list[RelationInstance]:
    labels = synth_labels(spec.classes)
    types = spec.concept_types
    class_ids = np.arange(n) % spec.classes
    rng.shuffle(class_ids)
    pool = 4000  # typed mode: entity words per type

    def fillers(lo, hi):
        k = int(rng.integers(lo, hi + 1))
        return [SYNTH_FILLERS[j] for j in rng.integers(0, len(SYNTH_FILLERS), size=k)]

    def entity(ty):
        length = 1 if rng.random() < 0.75 else 2
        if spec.mode == "typed":
            base = types.index(ty) * pool
            return [f"w{_alpha(base + int(rng.integers(pool)))}" for _ in range(length)]
        return [f"ent{_alpha(int(rng.integers(40)))}" for _ in range(length)]

    out = []
    for i, c in enumerate(class_ids):
        c = int(c)
        if spec.mode == "typed":
            t1, t2 = pairs[c]
            middle = fillers(1, 4)
        else:
            t1, t2 = types[int(rng.integers(len(types)))], types[int(rng.integers(len(types)))]
            cue = c
            if spec.trigger_noise > 0 and rng.random() < spec.trigger_noise:
                cue = (c + 1 + int(rng.integers(spec.classes - 1))) % spec.classes
            middle = fillers(0, 2) + [f"cue{_alpha(cue)}", f"via{_alpha(cue)}"] + fillers(0, 2)
        pre, post = fillers(0, 3), fillers(0, 3)
        w1, w2 = entity(t1), entity(t2)
        tokens = pre + w1 + middle + w2 + post
        e1 = Span(len(pre), len(pre) + len(w1) - 1)
        s2 = len(pre) + len(w1) + len(middle)
        e2 = Span(s2, s2 + len(w2) - 1)
        out.append(RelationInstance(
            id=f"{prefix}{i}", tokens=tuple(tokens), e1=e1, e2=e2, label=labels[c],
            e1_type=t1, e2_type=t2, source="synth",
        ))
    return out


def synth_corpus(spec: SynthSpec) -> Dataset:
    """Generate a balanced, learnable corpus; identical output for identical specs."""
    rng = np.random.default_rng(spec.seed)
    types = spec.concept_types
    pairs = [(a, b) for a in types for b in types]
    order = rng.permutation(len(pairs))
    pairs = [pairs[j] for j in order]
    test_size = spec.test_size if spec.test_size is not None else max(spec.classes, spec.size // 4)
    train = _synth_split(spec, spec.size, rng, f"synth{spec.seed}-", pairs)
    test = None
    if test_size:
        test = _synth_split(spec, test_size, np.random.default_rng([spec.seed, 1]), f"synth{spec.seed}-t", pairs)
    return Dataset(synth_schema(spec), train, test)
