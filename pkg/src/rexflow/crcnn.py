"""Convolutional ranking model with position embeddings.

The network is written directly in numpy with hand-derived gradients:

    X (n x D)  --conv per window size h, tanh-->  A_h (n x n_f)
    A_h --max or piecewise max-->  pooled vector r (optionally ⊕ sentence vector)
    scores = W @ r

Convolutions use "same" zero padding, so output position ``j`` is the window
centred on token ``j`` and exists even when ``n < h``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import RelationInstance, RelationSchema, Span
from .errors import ConfigError, DataError, RexflowError
from .features import (
    CONTEXT_MODES,
    ContextualFeatures,
    WordEmbeddingTable,
    contextual_for,
    init_position_table,
    position_ids,
)

POOLINGS = ("max", "piecewise")
ACTIVATIONS = ("tanh", "identity")
CHECKPOINT_MAGIC = b"REXFLOW-CKPT 1\n"


class StaleCacheError(RexflowError):
    """Backward was called with a cache whose parameters have since changed."""


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    m_pos: float = 2.5
    m_neg: float = 0.5
    score_null: bool = True
    null_threshold: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("loss gamma must be positive")
        if not self.m_pos > self.m_neg >= 0:
            raise ConfigError("loss margins must satisfy m_pos > m_neg >= 0")


def ranking_loss(scores: np.ndarray, gold: Optional[int], cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Pairwise ranking loss and its gradient with respect to ``scores``.

    ``gold=None`` marks an example of the unscored null class: only the
    penalty on the highest competing score applies.
    """
    scores = np.asarray(scores, dtype=np.float64)
    grad = np.zeros_like(scores)
    loss = 0.0
    if gold is None:
        worst = int(np.argmax(scores))
    else:
        z = cfg.gamma * (cfg.m_pos - scores[gold])
        loss += float(np.logaddexp(0.0, z))
        grad[gold] = -cfg.gamma * _sigmoid(z)
        if len(scores) == 1:
            return loss, grad
        masked = scores.copy()
        masked[gold] = -np.inf
        worst = int(np.argmax(masked))
    z = cfg.gamma * (cfg.m_neg + scores[worst])
    loss += float(np.logaddexp(0.0, z))
    grad[worst] += cfg.gamma * _sigmoid(z)
    return loss, grad


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def predict(scores: np.ndarray, cfg: LossConfig) -> Optional[int]:
    """Index of the best scored class, or ``None`` for the null label.

    Ties go to the lowest index.  With ``score_null=False`` an example whose
    best score is below ``null_threshold`` is assigned the null label.
    """
    best = int(np.argmax(scores))
    if not cfg.score_null and scores[best] < cfg.null_threshold:
        return None
    return best


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ModelParams:
    word: np.ndarray
    pos1: np.ndarray
    pos2: np.ndarray
    filters: dict[int, np.ndarray]
    biases: dict[int, np.ndarray]
    W: np.ndarray
    version: int = field(default=0, compare=False)

    @property
    def window_sizes(self) -> tuple[int, ...]:
        return tuple(self.filters)

    @property
    def n_filters(self) -> int:
        return next(iter(self.filters.values())).shape[0]

    def named(self) -> list[tuple[str, np.ndarray]]:
        out = [("word", self.word), ("pos1", self.pos1), ("pos2", self.pos2)]
        for h in self.filters:
            out.append((f"filter.{h}", self.filters[h]))
            out.append((f"bias.{h}", self.biases[h]))
        out.append(("W", self.W))
        return out

    def get(self, name: str) -> np.ndarray:
        return dict(self.named())[name]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.word.copy(), self.pos1.copy(), self.pos2.copy(),
            {h: f.copy() for h, f in self.filters.items()},
            {h: b.copy() for h, b in self.biases.items()},
            self.W.copy(), self.version,
        )

    def bump(self) -> None:
        self.version += 1

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.named())


def representation_size(n_filters: int, window_sizes: Sequence[int], pooling: str, sentence_dim: int = 0) -> int:
    segments = 3 if pooling == "piecewise" else 1
    return n_filters * len(window_sizes) * segments + sentence_dim


def init_params(
    rng: np.random.Generator,
    word: np.ndarray,
    input_dim: int,
    pos_dim: int,
    max_dist: int,
    window_sizes: Sequence[int],
    n_filters: int,
    n_scored: int,
    pooling: str,
    sentence_dim: int = 0,
    dtype=np.float64,
) -> ModelParams:
    pos1 = init_position_table(max_dist, pos_dim, rng, dtype)
    pos2 = init_position_table(max_dist, pos_dim, rng, dtype)
    filters, biases = {}, {}
    for h in window_sizes:
        fan = h * input_dim
        bound = np.sqrt(6.0 / (fan + n_filters))
        filters[h] = rng.uniform(-bound, bound, size=(n_filters, fan)).astype(dtype)
        biases[h] = np.zeros(n_filters, dtype=dtype)
    R = representation_size(n_filters, window_sizes, pooling, sentence_dim)
    bound = np.sqrt(6.0 / (R + n_scored))
    W = rng.uniform(-bound, bound, size=(n_scored, R)).astype(dtype)
    return ModelParams(np.asarray(word, dtype=dtype), pos1, pos2, filters, biases, W)


# ---------------------------------------------------------------------------
# forward / backward


def piecewise_segments(n: int, e1: Span, e2: Span) -> list[tuple[int, int]]:
    """Half-open segments ``[0, a]``, ``(a, b]``, ``(b, n)`` where ``a``/``b`` are the
    end tokens of the earlier/later entity."""
    first, second = (e1, e2) if (e1.start, e1.end) <= (e2.start, e2.end) else (e2, e1)
    a = min(first.end, n - 1)
    b = max(a, min(second.end, n - 1))
    return [(0, a + 1), (a + 1, b + 1), (b + 1, n)]


@dataclass
class _ConvCache:
    h: int
    windows: np.ndarray
    A: np.ndarray
    # per instance, per pooling segment: pooled row of each filter in the stacked A, or None if empty
    argmax: list[list[Optional[np.ndarray]]]


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    shapes: list[tuple[int, int]]
    offsets: np.ndarray
    convs: list[_ConvCache]
    R: np.ndarray
    sentence_dim: int
    activation: str


def _windows(X: np.ndarray, h: int) -> np.ndarray:
    n, D = X.shape
    left = (h - 1) // 2
    Xp = np.zeros((n + h - 1, D), dtype=X.dtype)
    Xp[left:left + n] = X
    return sliding_window_view(Xp, (h, D)).reshape(n, h * D)


def forward_batch(
    Xs: Sequence[np.ndarray],
    params: ModelParams,
    pooling: str = "max",
    spans: Optional[Sequence[tuple[Span, Span]]] = None,
    cls_vecs: Optional[Sequence[np.ndarray]] = None,
    activation: str = "tanh",
) -> tuple[np.ndarray, ForwardCache]:
    """Score a batch of input matrices; returns a ``B x C`` score matrix.

    Windows of all instances are stacked so each window size costs a single
    matrix product.
    """
    if pooling not in POOLINGS:
        raise ConfigError(f"unknown pooling {pooling!r}")
    if any(X.shape[0] < 1 for X in Xs):
        raise DataError("forward needs at least one token")
    B = len(Xs)
    lengths = [X.shape[0] for X in Xs]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    if pooling == "piecewise":
        if spans is None:
            raise ConfigError("piecewise pooling needs both entity spans")
        segments = [piecewise_segments(n, e1, e2) for n, (e1, e2) in zip(lengths, spans)]
    else:
        segments = [[(0, n)] for n in lengths]
    nf = params.n_filters
    cols = np.arange(nf)
    convs = []
    blocks = []
    for h in params.filters:
        # the strided views are not BLAS-compatible; concatenation materializes them
        win = np.concatenate([_windows(X, h) for X in Xs])
        Z = win @ params.filters[h].T + params.biases[h]
        A = np.tanh(Z) if activation == "tanh" else Z
        pooled = np.zeros((B, len(segments[0]), nf), dtype=A.dtype)
        argmax = []
        for b in range(B):
            per_seg = []
            base = offsets[b]
            for k, (s, e) in enumerate(segments[b]):
                if e <= s:
                    per_seg.append(None)
                    continue
                idx = A[base + s:base + e].argmax(axis=0) + (base + s)
                per_seg.append(idx)
                pooled[b, k] = A[idx, cols]
            argmax.append(per_seg)
        convs.append(_ConvCache(h, win, A, argmax))
        blocks.append(pooled.reshape(B, -1))
    sentence_dim = 0
    if cls_vecs is not None:
        S = np.asarray(cls_vecs, dtype=blocks[0].dtype).reshape(B, -1)
        blocks.append(S)
        sentence_dim = S.shape[1]
    R = np.hstack(blocks)
    if R.shape[1] != params.W.shape[1]:
        raise ConfigError(f"representation size {R.shape[1]} does not match class matrix {params.W.shape}")
    scores = R @ params.W.T
    cache = ForwardCache(params, params.version, [X.shape for X in Xs], offsets, convs, R, sentence_dim, activation)
    return scores, cache


def forward(
    X: np.ndarray,
    params: ModelParams,
    pooling: str = "max",
    e1: Optional[Span] = None,
    e2: Optional[Span] = None,
    cls_vec: Optional[np.ndarray] = None,
    activation: str = "tanh",
) -> tuple[np.ndarray, ForwardCache]:
    """Scores for one ``n x D`` input matrix."""
    if pooling == "piecewise" and (e1 is None or e2 is None):
        raise ConfigError("piecewise pooling needs both entity spans")
    spans = [(e1, e2)] if e1 is not None and e2 is not None else None
    scores, cache = forward_batch(
        [X], params, pooling, spans, None if cls_vec is None else [cls_vec], activation)
    return scores[0], cache


@dataclass
class Gradients:
    """Gradients summed over a batch; ``X`` holds one input gradient per instance."""

    X: list[np.ndarray]
    filters: dict[int, np.ndarray]
    biases: dict[int, np.ndarray]
    W: np.ndarray
    cls: Optional[np.ndarray] = None


def backward_batch(cache: ForwardCache, dscores: np.ndarray) -> Gradients:
    params = cache.params
    if params.version != cache.version:
        raise StaleCacheError("parameters changed since forward; recompute the forward pass")
    dS = np.asarray(dscores, dtype=params.W.dtype).reshape(len(cache.shapes), -1)
    dW = dS.T @ cache.R
    dR = dS @ params.W
    N = int(cache.offsets[-1])
    D = cache.shapes[0][1]
    nf = params.n_filters
    cols = np.arange(nf)
    dX_all = np.zeros((N, D), dtype=params.W.dtype)
    dF, db = {}, {}
    off = 0
    for conv in cache.convs:
        h = conv.h
        dA = np.zeros_like(conv.A)
        nseg = len(conv.argmax[0])
        for b, per_seg in enumerate(conv.argmax):
            for k, idx in enumerate(per_seg):
                if idx is not None:
                    dA[idx, cols] += dR[b, off + k * nf:off + (k + 1) * nf]
        off += nseg * nf
        dZ = dA * (1.0 - conv.A ** 2) if cache.activation == "tanh" else dA
        dF[h] = dZ.T @ conv.windows
        db[h] = dZ.sum(axis=0)
        dwin = dZ @ params.filters[h]
        left = (h - 1) // 2
        for b in range(len(cache.shapes)):
            s, e = cache.offsets[b], cache.offsets[b + 1]
            n = e - s
            g = dwin[s:e].reshape(n, h, D)
            dXp = np.zeros((n + h - 1, D), dtype=dX_all.dtype)
            for k in range(h):
                dXp[k:k + n] += g[:, k, :]
            dX_all[s:e] += dXp[left:left + n]
    dcls = dR[:, off:].copy() if cache.sentence_dim else None
    dXs = [dX_all[cache.offsets[b]:cache.offsets[b + 1]] for b in range(len(cache.shapes))]
    return Gradients(dXs, dF, db, dW, dcls)


def backward(cache: ForwardCache, dscores: np.ndarray) -> Gradients:
    """Gradients for a single-instance cache; ``X`` is then one ``n x D`` matrix."""
    g = backward_batch(cache, np.asarray(dscores)[None, :])
    return Gradients(g.X[0], g.filters, g.biases, g.W, None if g.cls is None else g.cls[0])

# ---------------------------------------------------------------------------
# model wrapper


@dataclass(frozen=True)
class ModelSpec:
    """Architecture switches that are not tuned as hyperparameters."""

    pooling: str = "max"
    contextual: str = "none"
    activation: str = "tanh"
    word_dim: int = 50
    freeze_words: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}; expected one of {POOLINGS}")
        if self.contextual not in CONTEXT_MODES:
            raise ConfigError(f"unknown contextual mode {self.contextual!r}; expected one of {CONTEXT_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")


@dataclass
class Encoded:
    """An instance turned into index arrays ready for repeated forward passes."""

    id: str
    word_ids: np.ndarray
    oov_rows: Optional[np.ndarray]
    p1: np.ndarray
    p2: np.ndarray
    ctx_tokens: Optional[np.ndarray]
    cls: Optional[np.ndarray]
    e1: Span
    e2: Span
    gold: Optional[int]
    label: str


class CRCNN:
    def __init__(
        self,
        schema: RelationSchema,
        spec: ModelSpec,
        vocab: WordEmbeddingTable,
        params: ModelParams,
        loss: LossConfig,
        max_dist: int,
    ):
        self.schema = schema
        self.spec = spec
        self.vocab = vocab
        self.params = params
        self.loss = loss
        self.max_dist = max_dist
        self.dtype = np.dtype(spec.dtype)
        if not loss.score_null and schema.null_label is not None:
            self.scored = tuple(l for l in schema.labels if l != schema.null_label)
        else:
            self.scored = tuple(schema.labels)
        self._scored_index = {l: i for i, l in enumerate(self.scored)}
        if params.W.shape[0] != len(self.scored):
            raise ConfigError(f"class matrix has {params.W.shape[0]} rows for {len(self.scored)} scored labels")

    @classmethod
    def build(
        cls,
        schema: RelationSchema,
        spec: ModelSpec,
        loss: LossConfig,
        train_tokens: Sequence[str],
        *,
        window_sizes: Sequence[int],
        n_filters: int,
        pos_dim: int,
        max_dist: int,
        seed: int,
        pretrained: Optional[WordEmbeddingTable] = None,
        ctx_dim: int = 0,
        sentence_dim: int = 0,
    ) -> "CRCNN":
        dtype = np.dtype(spec.dtype)
        base = pretrained if pretrained is not None else WordEmbeddingTable.empty(spec.word_dim, seed, dtype)
        base = WordEmbeddingTable(base.vocab, base.matrix.astype(dtype), seed, base.oov_scale)
        vocab = base.extend(train_tokens)
        n_scored = len(schema.labels) - (1 if (not loss.score_null and schema.null_label is not None) else 0)
        input_dim = vocab.dim + 2 * pos_dim + (ctx_dim if spec.contextual == "tokens" else 0)
        rng = np.random.default_rng(seed)
        params = init_params(
            rng, vocab.matrix, input_dim, pos_dim, max_dist, window_sizes, n_filters, n_scored,
            spec.pooling, sentence_dim if spec.contextual == "cls" else 0, dtype,
        )
        return cls(schema, spec, vocab, params, loss, max_dist)

    def encode(self, inst: RelationInstance, ctx: Optional[dict[str, ContextualFeatures]] = None) -> Encoded:
        if not inst.tokens:
            raise DataError(f"{inst.id}: empty token sequence")
        tok_vecs, sent = contextual_for(inst, ctx, self.spec.contextual)
        ids = np.array([self.vocab.vocab.get(t.lower(), -1) for t in inst.tokens], dtype=np.int64)
        oov = None
        if (ids < 0).any():
            oov = np.zeros((len(ids), self.vocab.dim), dtype=self.dtype)
            for i in np.flatnonzero(ids < 0):
                oov[i] = self.vocab.oov_vector(inst.tokens[i])
        n = len(inst.tokens)
        if inst.label == self.schema.null_label and not self.loss.score_null:
            gold = None
        else:
            gold = self._scored_index.get(inst.label)
            if gold is None:
                raise DataError(f"{inst.id}: label {inst.label!r} not in schema")
        return Encoded(
            inst.id, ids, oov,
            position_ids(n, inst.e1, self.max_dist), position_ids(n, inst.e2, self.max_dist),
            None if tok_vecs is None else tok_vecs.astype(self.dtype),
            None if sent is None else sent.astype(self.dtype),
            inst.e1, inst.e2, gold, inst.label,
        )

    def input_matrix(self, enc: Encoded) -> np.ndarray:
        p = self.params
        words = p.word[np.maximum(enc.word_ids, 0)] if len(p.word) else np.zeros((len(enc.word_ids), self.vocab.dim), self.dtype)
        if enc.oov_rows is not None:
            mask = enc.word_ids < 0
            words = words.copy()
            words[mask] = enc.oov_rows[mask]
        parts = [words, p.pos1[enc.p1], p.pos2[enc.p2]]
        if enc.ctx_tokens is not None:
            parts.append(enc.ctx_tokens)
        return np.hstack(parts)

    def scores(self, enc: Encoded) -> tuple[np.ndarray, ForwardCache]:
        X = self.input_matrix(enc)
        return forward(X, self.params, self.spec.pooling, enc.e1, enc.e2, enc.cls, self.spec.activation)

    def scores_batch(self, encoded: Sequence[Encoded]) -> tuple[np.ndarray, ForwardCache]:
        Xs = [self.input_matrix(e) for e in encoded]
        spans = [(e.e1, e.e2) for e in encoded]
        cls_vecs = [e.cls for e in encoded] if self.spec.contextual == "cls" else None
        return forward_batch(Xs, self.params, self.spec.pooling, spans, cls_vecs, self.spec.activation)

    def loss_and_grads(self, batch: Encoded | Sequence[Encoded]) -> tuple[float, dict]:
        """Summed loss over a batch and its gradients keyed by parameter name.

        Embedding gradients are sparse: ``word``/``pos1``/``pos2`` map to
        ``(row_ids, row_grads)`` pairs (row ids may repeat).
        """
        encoded = [batch] if isinstance(batch, Encoded) else list(batch)
        S, cache = self.scores_batch(encoded)
        dS = np.zeros_like(S)
        total = 0.0
        for b, enc in enumerate(encoded):
            loss, ds = ranking_loss(S[b], enc.gold, self.loss)
            total += loss
            dS[b] = ds
        g = backward_batch(cache, dS)
        dw = self.vocab.dim
        dp = self.params.pos1.shape[1]
        out = {"W": g.W}
        for h in g.filters:
            out[f"filter.{h}"] = g.filters[h]
            out[f"bias.{h}"] = g.biases[h]
        dX = np.vstack(g.X)
        ids = np.concatenate([e.word_ids for e in encoded])
        known = ids >= 0
        out["word"] = (ids[known], dX[known, :dw])
        out["pos1"] = (np.concatenate([e.p1 for e in encoded]), dX[:, dw:dw + dp])
        out["pos2"] = (np.concatenate([e.p2 for e in encoded]), dX[:, dw + dp:dw + 2 * dp])
        return total, out

    def predict_label(self, enc: Encoded) -> str:
        return self.predict_all([enc])[0]

    def predict_all(self, encoded: Sequence[Encoded], batch_size: int = 256) -> list[str]:
        out = []
        for i in range(0, len(encoded), batch_size):
            S, _ = self.scores_batch(encoded[i:i + batch_size])
            for s in S:
                k = predict(s, self.loss)
                out.append(self.schema.null_label if k is None else self.scored[k])
        return out


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(params: ModelParams, seed: int, meta: Optional[dict] = None) -> bytes:
    """Serialize all tensors with a JSON header; identical inputs give identical bytes."""
    tensors = []
    blobs = []
    offset = 0
    for name, arr in params.named():
        a = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = a.tobytes()
        tensors.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"seed": seed, "tensors": tensors, "meta": meta or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return CHECKPOINT_MAGIC + head + b"\n" + b"".join(blobs)


def save_checkpoint(params: ModelParams, path: str | Path, seed: int, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, seed, meta))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, int, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a rexflow checkpoint")
    rest = data[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    body = rest[nl + 1:]
    arrays = {}
    for t in header["tensors"]:
        raw = body[t["offset"]:t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(raw, dtype=np.dtype(t["dtype"])).reshape(t["shape"]).copy()
    filters = {int(k.split(".")[1]): v for k, v in arrays.items() if k.startswith("filter.")}
    biases = {int(k.split(".")[1]): v for k, v in arrays.items() if k.startswith("bias.")}
    params = ModelParams(arrays["word"], arrays["pos1"], arrays["pos2"], filters, biases, arrays["W"])
    return params, header["seed"], header["meta"]
