"""Word vectors, relative-position features and precomputed contextual embeddings."""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .corpus import RelationInstance, Span
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

CONTEXT_MODES = ("none", "tokens", "cls")
OOV_SCALE = 0.25


@dataclass
class WordEmbeddingTable:
    """Lowercased vocabulary plus an embedding matrix.

    Tokens outside the vocabulary get a vector drawn uniformly from
    ``[-oov_scale, oov_scale]`` by a generator seeded with ``(oov_seed, crc32(token))``,
    so the same token always maps to the same vector for a given seed.
    """

    vocab: dict[str, int]
    matrix: np.ndarray
    oov_seed: int = 0
    oov_scale: float = OOV_SCALE

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise DataError(f"embedding matrix shape {self.matrix.shape} does not match vocabulary size {len(self.vocab)}")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("embedding matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def index(self, token: str) -> Optional[int]:
        return self.vocab.get(token.lower())

    def oov_vector(self, token: str) -> np.ndarray:
        key = zlib.crc32(token.lower().encode("utf-8"))
        rng = np.random.default_rng([self.oov_seed, key])
        return rng.uniform(-self.oov_scale, self.oov_scale, self.dim).astype(self.matrix.dtype)

    def lookup(self, token: str) -> np.ndarray:
        i = self.index(token)
        return self.matrix[i] if i is not None else self.oov_vector(token)

    def extend(self, tokens: Iterable[str]) -> "WordEmbeddingTable":
        """Return a copy whose vocabulary also covers ``tokens`` (new rows = OOV vectors)."""
        vocab = dict(self.vocab)
        extra = []
        for tok in tokens:
            key = tok.lower()
            if key not in vocab:
                vocab[key] = len(vocab)
                extra.append(self.oov_vector(key))
        matrix = self.matrix.copy()
        if extra:
            matrix = np.vstack([matrix, np.asarray(extra, dtype=self.matrix.dtype)])
        return WordEmbeddingTable(vocab, matrix, self.oov_seed, self.oov_scale)

    @classmethod
    def empty(cls, dim: int, seed: int = 0, dtype=np.float64) -> "WordEmbeddingTable":
        return cls({}, np.zeros((0, dim), dtype=dtype), seed)


def load_word_vectors(path: str | Path, expected_dim: int, oov_seed: int = 0, dtype=np.float64) -> WordEmbeddingTable:
    """Read ``token v1 ... vd`` lines, with an optional ``|V| d`` header line."""
    vocab: dict[str, int] = {}
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != expected_dim:
                    raise DataError(f"{path}: header declares d={parts[1]}, expected {expected_dim} (line 1)")
                continue
            token, values = parts[0], parts[1:]
            if len(values) != expected_dim:
                raise DataError(f"{path}: expected {expected_dim} values, found {len(values)} (line {line_no})")
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise DataError(f"{path}: non-numeric value (line {line_no})") from None
            key = token.lower()
            if key in vocab:
                logger.warning("%s: duplicate token %r at line %d ignored (first occurrence kept)", path, token, line_no)
                continue
            vocab[key] = len(rows)
            rows.append(vec)
    matrix = np.asarray(rows, dtype=dtype).reshape(len(rows), expected_dim)
    return WordEmbeddingTable(vocab, matrix, oov_seed)


def relative_position(i: int, span: Span, max_dist: int) -> int:
    """Signed distance of token ``i`` to the nearest boundary of ``span``, clipped."""
    if i < span.start:
        d = i - span.start
    elif i > span.end:
        d = i - span.end
    else:
        d = 0
    return max(-max_dist, min(max_dist, d))


def position_ids(n: int, span: Span, max_dist: int) -> np.ndarray:
    """Row indices into a ``(2*max_dist+1)``-row position table for tokens ``0..n-1``."""
    i = np.arange(n)
    d = np.where(i < span.start, i - span.start, np.where(i > span.end, i - span.end, 0))
    return np.clip(d, -max_dist, max_dist) + max_dist


def init_position_table(max_dist: int, dim: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    return rng.uniform(-0.05, 0.05, size=(2 * max_dist + 1, dim)).astype(dtype)


@dataclass
class ContextualFeatures:
    id: str
    token_vectors: np.ndarray
    sentence_vector: Optional[np.ndarray] = None

    def __post_init__(self):
        self.token_vectors = np.asarray(self.token_vectors, dtype=np.float64)
        if self.token_vectors.ndim != 2:
            raise DataError(f"{self.id}: token_vectors must be a matrix")
        if not np.all(np.isfinite(self.token_vectors)):
            raise DataError(f"{self.id}: non-finite token vector")
        if self.sentence_vector is not None:
            self.sentence_vector = np.asarray(self.sentence_vector, dtype=np.float64)
            if self.sentence_vector.ndim != 1 or not np.all(np.isfinite(self.sentence_vector)):
                raise DataError(f"{self.id}: sentence_vector must be a finite vector")


def load_contextual(path: str | Path) -> dict[str, ContextualFeatures]:
    out: dict[str, ContextualFeatures] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                iid = str(rec["id"])
                feat = ContextualFeatures(iid, rec["token_vectors"], rec.get("sentence_vector"))
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"{path}: malformed contextual record at line {line_no}: {e}") from None
            if iid in out:
                raise DataError(f"{path}: duplicate id {iid!r} at line {line_no}")
            out[iid] = feat
    return out


def write_contextual(features: Iterable[ContextualFeatures], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for feat in features:
            rec = {"id": feat.id, "token_vectors": feat.token_vectors.tolist()}
            if feat.sentence_vector is not None:
                rec["sentence_vector"] = feat.sentence_vector.tolist()
            f.write(json.dumps(rec) + "\n")


def toy_contextual(instances: Iterable[RelationInstance], dim: int, seed: int = 0) -> dict[str, ContextualFeatures]:
    """Stand-in producer for contextual vectors: a seeded vector per token type,
    mixed with its neighbours, and a mean-pooled sentence vector."""
    out = {}
    for inst in instances:
        base = np.array([
            np.random.default_rng([seed, zlib.crc32(t.lower().encode("utf-8"))]).standard_normal(dim)
            for t in inst.tokens
        ])
        padded = np.vstack([np.zeros((1, dim)), base, np.zeros((1, dim))])
        mixed = 0.5 * base + 0.25 * (padded[:-2] + padded[2:])
        out[inst.id] = ContextualFeatures(inst.id, np.tanh(mixed), np.tanh(mixed).mean(axis=0))
    return out


def contextual_for(inst: RelationInstance, ctx: Optional[Mapping[str, ContextualFeatures]], mode: str):
    """Return ``(token_vectors, sentence_vector)`` required by ``mode``, validating alignment."""
    if mode not in CONTEXT_MODES:
        raise ConfigError(f"unknown contextual mode {mode!r}; expected one of {CONTEXT_MODES}")
    if mode == "none":
        return None, None
    if ctx is None:
        raise ConfigError(f"contextual mode {mode!r} needs precomputed contextual features")
    feat = ctx.get(inst.id)
    if feat is None:
        raise DataError(f"{inst.id}: no contextual features")
    if mode == "tokens":
        if feat.token_vectors.shape[0] != len(inst.tokens):
            raise DataError(
                f"{inst.id}: {feat.token_vectors.shape[0]} contextual vectors for {len(inst.tokens)} tokens")
        return feat.token_vectors, None
    if feat.sentence_vector is None:
        raise ConfigError(f"{inst.id}: sentence-level (cls) mode requested but record has no sentence_vector")
    return None, feat.sentence_vector


def assemble_input(
    inst: RelationInstance,
    table: WordEmbeddingTable,
    pos1: np.ndarray,
    pos2: np.ndarray,
    max_dist: int,
    ctx: Optional[Mapping[str, ContextualFeatures]] = None,
    mode: str = "none",
) -> np.ndarray:
    """Per-token rows ``word ⊕ pos(e1) ⊕ pos(e2) [⊕ contextual]``.

    ``mode`` is ``"none"`` or ``"tokens"`` (a ``"cls"`` sentence vector enters
    after pooling, not here).
    """
    if not inst.tokens:
        raise DataError(f"{inst.id}: empty token sequence")
    if mode == "cls":
        mode = "none"
    tok_vecs, _ = contextual_for(inst, ctx, mode)
    n = len(inst.tokens)
    words = np.array([table.lookup(t) for t in inst.tokens])
    parts = [words, pos1[position_ids(n, inst.e1, max_dist)], pos2[position_ids(n, inst.e2, max_dist)]]
    if tok_vecs is not None:
        parts.append(tok_vecs)
    return np.hstack(parts)
