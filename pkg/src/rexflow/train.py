"""Deterministic minibatch SGD for the CRCNN model."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .corpus import RelationInstance, RelationSchema
from .crcnn import CRCNN, LossConfig, ModelParams, ModelSpec, checkpoint_bytes
from .errors import ConfigError, TrainingError
from .features import ContextualFeatures, WordEmbeddingTable
from .metrics import evaluate

DEFAULT_MOMENTUM = 0.9
IMPROVEMENT_EPS = 1e-12
HALFWAY_START_LR = 1e-3


@dataclass(frozen=True)
class Constant:
    lr: float = 1e-3

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")


@dataclass(frozen=True)
class StepSchedule:
    """Piecewise-constant learning rate; ``values[k]`` applies from ``breakpoints[k-1]`` on."""

    values: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    breakpoints: tuple[int, ...] = (60, 120)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "breakpoints", tuple(int(b) for b in self.breakpoints))
        if len(self.values) != len(self.breakpoints) + 1:
            raise ConfigError("step schedule needs one more value than breakpoints")
        if any(v <= 0 for v in self.values) or any(a < b for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("step schedule values must be positive and non-increasing")


@dataclass(frozen=True)
class HalfwayDecay:
    """Linear decay from 1e-3 at epoch 1 down to ``lr_init`` at ``ceil(epochs/2)``, constant after."""

    lr_init: float
    epochs: int

    def __post_init__(self):
        if not 0 < self.lr_init <= HALFWAY_START_LR:
            raise ConfigError("halfway decay needs 0 < lr_init <= 0.001")


Schedule = Union[Constant, StepSchedule, HalfwayDecay]


def schedule_lr(schedule: Schedule, epoch: int) -> float:
    if epoch < 1:
        raise ConfigError("epochs are numbered from 1")
    if isinstance(schedule, Constant):
        return schedule.lr
    if isinstance(schedule, StepSchedule):
        k = sum(1 for b in schedule.breakpoints if epoch >= b)
        return schedule.values[k]
    half = math.ceil(schedule.epochs / 2)
    if epoch >= half or half <= 1:
        return schedule.lr_init
    frac = (epoch - 1) / (half - 1)
    return HALFWAY_START_LR + (schedule.lr_init - HALFWAY_START_LR) * frac


def derive_patience(epochs: int) -> int:
    return epochs // 5


def schedule_to_dict(s: Schedule) -> dict:
    kind = {Constant: "constant", StepSchedule: "step", HalfwayDecay: "halfway"}[type(s)]
    d = dataclasses.asdict(s)
    return {"kind": kind, **{k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}}


def schedule_from_dict(d: dict) -> Schedule:
    d = dict(d)
    kind = d.pop("kind", None)
    cls = {"constant": Constant, "step": StepSchedule, "halfway": HalfwayDecay}.get(kind)
    if cls is None:
        raise ConfigError(f"unknown learning-rate schedule kind {kind!r}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown keys for {kind} schedule: {', '.join(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class HyperParams:
    epochs: int = 100
    batch_size: int = 50
    lr_schedule: Schedule = field(default_factory=StepSchedule)
    momentum: Optional[float] = None
    early_stop: bool = False
    patience: int = 20
    pos_embed_dim: int = 50
    filters_per_size: int = 100
    window_sizes: tuple[int, ...] = (2, 3, 4)
    max_dist: int = 50
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        object.__setattr__(self, "window_sizes", tuple(int(h) for h in self.window_sizes))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.early_stop and self.patience < 1:
            raise ConfigError("patience must be >= 1 when early stopping")
        if not self.window_sizes or any(h < 1 for h in self.window_sizes):
            raise ConfigError("window sizes must be positive")
        if len(set(self.window_sizes)) != len(self.window_sizes):
            raise ConfigError("window sizes must be distinct")
        if self.pos_embed_dim < 1 or self.filters_per_size < 1 or self.max_dist < 1:
            raise ConfigError("pos_embed_dim, filters_per_size and max_dist must be positive")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_schedule": schedule_to_dict(self.lr_schedule),
            "momentum": self.momentum,
            "early_stop": self.early_stop,
            "patience": self.patience,
            "pos_embed_dim": self.pos_embed_dim,
            "filters_per_size": self.filters_per_size,
            "window_sizes": list(self.window_sizes),
            "max_dist": self.max_dist,
            "seed": self.seed,
            "loss": dataclasses.asdict(self.loss),
        }

    @classmethod
    def from_dict(cls, d: dict, base: Optional["HyperParams"] = None) -> "HyperParams":
        base = base or cls()
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown hyperparameter keys: {', '.join(unknown)}")
        changes = dict(d)
        if "lr_schedule" in changes and isinstance(changes["lr_schedule"], dict):
            changes["lr_schedule"] = schedule_from_dict(changes["lr_schedule"])
        if "loss" in changes and isinstance(changes["loss"], dict):
            lnames = {f.name for f in dataclasses.fields(LossConfig)}
            bad = sorted(set(changes["loss"]) - lnames)
            if bad:
                raise ConfigError(f"unknown loss keys: {', '.join(bad)}")
            changes["loss"] = dataclasses.replace(base.loss, **changes["loss"])
        if "window_sizes" in changes:
            changes["window_sizes"] = tuple(changes["window_sizes"])
        return dataclasses.replace(base, **changes)


@dataclass
class FeatureSources:
    """Optional external inputs: pretrained word vectors and contextual features."""

    pretrained: Optional[WordEmbeddingTable] = None
    contextual: Optional[dict[str, ContextualFeatures]] = None


@dataclass
class TraceRow:
    epoch: int
    lr: float
    train_loss: float
    dev_metric: float


@dataclass
class TrainResult:
    model: CRCNN
    params: ModelParams
    best_params: ModelParams
    final_params: ModelParams
    trace: list[TraceRow]
    stopped_epoch: int
    best_epoch: int
    seed: int
    wall_time: float

    def checkpoint(self, which: str = "best") -> bytes:
        p = self.best_params if which == "best" else self.final_params
        meta = {"vocab": list(self.model.vocab.vocab), "scored": list(self.model.scored), "epoch":
                self.best_epoch if which == "best" else self.stopped_epoch}
        return checkpoint_bytes(p, self.seed, meta)


def _context_dims(ctx: Optional[dict[str, ContextualFeatures]]) -> tuple[int, int]:
    if not ctx:
        return 0, 0
    first = next(iter(ctx.values()))
    sdim = 0 if first.sentence_vector is None else len(first.sentence_vector)
    return first.token_vectors.shape[1], sdim


def build_model(train_set: Sequence[RelationInstance], schema: RelationSchema, hp: HyperParams,
                spec: ModelSpec, features: FeatureSources) -> CRCNN:
    tokens = [t for inst in train_set for t in inst.tokens]
    ctx_dim, sent_dim = _context_dims(features.contextual)
    return CRCNN.build(
        schema, spec, hp.loss, tokens,
        window_sizes=hp.window_sizes, n_filters=hp.filters_per_size, pos_dim=hp.pos_embed_dim,
        max_dist=hp.max_dist, seed=hp.seed, pretrained=features.pretrained,
        ctx_dim=ctx_dim, sentence_dim=sent_dim,
    )


class _SGD:
    def __init__(self, params: ModelParams, momentum: Optional[float], freeze_words: bool):
        self.params = params
        self.momentum = momentum
        self.freeze_words = freeze_words
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        p = self.params
        for name, arr in p.named():
            if name == "word" and self.freeze_words:
                continue
            g = grads.get(name)
            if g is None:
                continue
            if self.momentum:
                v = self.velocity.get(name)
                if v is None:
                    v = self.velocity[name] = np.zeros_like(arr)
                v *= self.momentum
                _add_grad(v, g)
                arr -= lr * v
            elif isinstance(g, tuple):
                np.subtract.at(arr, g[0], lr * g[1])
            else:
                arr -= lr * g
        p.bump()


def _add_grad(dense: np.ndarray, g) -> None:
    if isinstance(g, tuple):
        np.add.at(dense, g[0], g[1])
    else:
        dense += g


DevMetric = Callable[[CRCNN, int], float]


def train(
    train_set: Sequence[RelationInstance],
    dev_set: Optional[Sequence[RelationInstance]],
    schema: RelationSchema,
    hp: HyperParams,
    spec: ModelSpec = ModelSpec(),
    features: Optional[FeatureSources] = None,
    dev_metric: Optional[DevMetric] = None,
) -> TrainResult:
    """Train from scratch; identical inputs give identical traces and checkpoints.

    The batch gradient is the sum of per-example gradients.  With
    ``hp.early_stop`` training halts after ``hp.patience`` epochs without a
    strict dev improvement and the best epoch's parameters are returned.
    """
    if not train_set:
        raise TrainingError("training split is empty")
    if hp.early_stop and not dev_set and dev_metric is None:
        raise TrainingError("early stopping needs a dev split")
    features = features or FeatureSources()
    t0 = time.perf_counter()
    model = build_model(train_set, schema, hp, spec, features)
    enc_train = [model.encode(x, features.contextual) for x in train_set]
    enc_dev = [model.encode(x, features.contextual) for x in dev_set] if dev_set else []
    dev_gold = [e.label for e in enc_dev]

    if dev_metric is None and enc_dev:
        def dev_metric(m: CRCNN, epoch: int) -> float:
            return evaluate(dev_gold, m.predict_all(enc_dev), schema).official(schema.averaging)

    opt = _SGD(model.params, hp.momentum, spec.freeze_words)
    rng = np.random.default_rng([hp.seed, 1])
    trace: list[TraceRow] = []
    best = -math.inf
    best_params = model.params.copy()
    best_epoch = 0
    since_best = 0
    n = len(enc_train)
    for epoch in range(1, hp.epochs + 1):
        lr = schedule_lr(hp.lr_schedule, epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, hp.batch_size), start=1):
            batch_loss, g = model.loss_and_grads([enc_train[i] for i in order[start:start + hp.batch_size]])
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step(g, lr)
            if not model.params.all_finite():
                raise TrainingError(f"non-finite parameters at epoch {epoch}, batch {b}")
            epoch_loss += batch_loss
        metric = dev_metric(model, epoch) if dev_metric is not None else float("nan")
        trace.append(TraceRow(epoch, lr, epoch_loss / n, metric))
        if dev_metric is None:
            continue
        if metric > best + IMPROVEMENT_EPS:
            best, best_epoch, since_best = metric, epoch, 0
            best_params = model.params.copy()
        else:
            since_best += 1
            if hp.early_stop and since_best >= hp.patience:
                break

    final_params = model.params.copy()
    if dev_metric is None:
        best_params, best_epoch = final_params, len(trace)
    if hp.early_stop:
        model.params = best_params.copy()
    return TrainResult(
        model=model, params=model.params, best_params=best_params, final_params=final_params,
        trace=trace, stopped_epoch=len(trace), best_epoch=best_epoch, seed=hp.seed,
        wall_time=time.perf_counter() - t0,
    )


def write_trace(trace: Sequence[TraceRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "train_loss", "dev_metric"])
        for row in trace:
            w.writerow([row.epoch, repr(row.lr), repr(row.train_loss), repr(row.dev_metric)])


def write_run(result: TrainResult, run_dir: str | Path) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_trace(result.trace, run_dir / "trace.csv")
    (run_dir / "best.ckpt").write_bytes(result.checkpoint("best"))
    (run_dir / "final.ckpt").write_bytes(result.checkpoint("final"))
