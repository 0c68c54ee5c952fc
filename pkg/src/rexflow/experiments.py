"""Nested cross-validation, hyperparameter sweeps and fold-wise significance tests."""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Dataset, RelationInstance, RelationSchema
from .crcnn import ModelSpec
from .errors import ConfigError, DataError, TrainingError
from .metrics import MetricsReport, detection_from_report, evaluate
from .preprocess import NerAnnotation, PreprocessVariant
from .train import (
    Constant,
    FeatureSources,
    HalfwayDecay,
    HyperParams,
    TraceRow,
    derive_patience,
    train,
)

ALPHA = 0.05
PASS2_CAP = 32
PROVENANCES = ("default", "manual-pass-1", "manual-pass-2", "random")
NOT_SIGNIFICANT_MARK = "•"

# Values explored one at a time by the manual sweep, written as HyperParams.from_dict overrides.
MANUAL_GRID: dict[str, list] = {
    "epochs": [50, 100, 150, 200],
    "lr_schedule": [
        {"kind": "step", "values": [1e-3, 1e-4, 1e-5], "breakpoints": [60, 120]},
        {"kind": "constant", "lr": 1e-3},
    ],
    "momentum": [0.9, None],
    "early_stop": [True, False],
    "pos_embed_dim": [10, 50, 80, 100],
    "filters_per_size": [50, 150],
    "window_sizes": [[2, 3, 4], [3, 4, 5]],
    "batch_size": [70, 30],
}

RANDOM_WINDOW_SIZES = ((2, 3), (2, 3, 4), (2, 3, 4, 5), (3, 4, 5), (3, 4, 5, 6))
RANDOM_EPOCHS = (70, 300)
RANDOM_LR_INIT = (1e-5, 1e-3)
RANDOM_BATCH = (30, 70)


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldPlan:
    """Fold index per instance id; outer fold ``i`` tests on ``i`` and tunes on ``(i+1) mod k``."""

    k: int
    seed: int
    assignments: dict[str, int]

    def roles(self, i: int) -> tuple[int, int, tuple[int, ...]]:
        if not 0 <= i < self.k:
            raise ConfigError(f"outer fold {i} outside 0..{self.k - 1}")
        dev = (i + 1) % self.k
        return i, dev, tuple(f for f in range(self.k) if f not in (i, dev))

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignments.values():
            sizes[f] += 1
        return sizes

    def split(self, instances: Sequence[RelationInstance], i: int):
        """``(train, dev, test)`` instance lists for outer fold ``i``, in corpus order."""
        test, dev, _ = self.roles(i)
        parts: tuple[list, list, list] = ([], [], [])
        for inst in instances:
            f = self.assignments.get(inst.id)
            if f is None:
                raise DataError(f"{inst.id}: instance is not covered by the fold plan")
            parts[2 if f == test else 1 if f == dev else 0].append(inst)
        return parts


def _instances(data: Dataset | Sequence[RelationInstance]) -> list[RelationInstance]:
    return list(data.train) if isinstance(data, Dataset) else list(data)


def _check_unique_ids(instances: Sequence[RelationInstance]) -> None:
    seen = set()
    for inst in instances:
        if inst.id in seen:
            raise DataError(f"duplicate instance id {inst.id!r}")
        seen.add(inst.id)


def make_folds(data: Dataset | Sequence[RelationInstance], k: int, seed: int) -> FoldPlan:
    instances = _instances(data)
    if k < 3:
        raise ConfigError("nested cross-validation needs k >= 3 (train, dev and test roles)")
    if len(instances) < k:
        raise DataError(f"corpus of {len(instances)} instances is too small for {k} folds")
    _check_unique_ids(instances)
    order = np.random.default_rng(seed).permutation(len(instances))
    assignments = {instances[j].id: pos % k for pos, j in enumerate(order)}
    return FoldPlan(k, seed, assignments)


def holdout_split(instances: Sequence[RelationInstance], fraction: float, seed: int):
    """Fixed seeded ``(train, dev)`` split used where no fold structure exists."""
    if not 0 < fraction < 1:
        raise ConfigError("dev fraction must lie in (0, 1)")
    n = len(instances)
    n_dev = max(1, int(round(n * fraction)))
    if n_dev >= n:
        raise DataError(f"corpus of {n} instances is too small for a dev split")
    dev_idx = set(np.random.default_rng([seed, 7]).permutation(n)[:n_dev].tolist())
    train_part = [x for i, x in enumerate(instances) if i not in dev_idx]
    dev_part = [x for i, x in enumerate(instances) if i in dev_idx]
    return train_part, dev_part


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# nested cross-validation


@dataclass
class FoldResult:
    fold: int
    seed: int
    test_report: MetricsReport
    test_score: float
    dev_score: float
    trace: list[TraceRow]
    stopped_epoch: int
    best_epoch: int


@dataclass
class CVResult:
    k: int
    plan_seed: int
    averaging: str
    folds: list[FoldResult]

    @property
    def test_scores(self) -> list[float]:
        return [f.test_score for f in self.folds]

    @property
    def dev_scores(self) -> list[float]:
        return [f.dev_score for f in self.folds]

    def summary(self, which: str = "test") -> tuple[float, float]:
        return mean_std(self.test_scores if which == "test" else self.dev_scores)

    def detection_scores(self, null_label: str) -> list[float]:
        return [detection_from_report(f.test_report, null_label).macro_f1 for f in self.folds]


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 denominator; 0 for a single value)."""
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise DataError("no values to summarize")
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def format_mean_std(mean: float, std: float) -> str:
    return f"{100 * mean:.2f} ({100 * std:.2f})"


@dataclass(frozen=True)
class _FoldJob:
    fold: int
    train_set: list
    dev_set: list
    test_set: list
    schema: RelationSchema
    hp: HyperParams
    spec: ModelSpec
    features: FeatureSources


def _run_fold(job: _FoldJob) -> FoldResult:
    try:
        res = train(job.train_set, job.dev_set, job.schema, job.hp, job.spec, job.features)
    except TrainingError as e:
        raise TrainingError(f"fold {job.fold}: {e}") from e
    model = res.model
    ctx = job.features.contextual
    enc_test = [model.encode(x, ctx) for x in job.test_set]
    enc_dev = [model.encode(x, ctx) for x in job.dev_set]
    report = evaluate([x.label for x in job.test_set], model.predict_all(enc_test), job.schema)
    dev = evaluate([x.label for x in job.dev_set], model.predict_all(enc_dev), job.schema)
    avg = job.schema.averaging
    return FoldResult(job.fold, job.hp.seed, report, report.official(avg), dev.official(avg),
                      res.trace, res.stopped_epoch, res.best_epoch)


def nested_cv(
    data: Dataset | Sequence[RelationInstance],
    schema: RelationSchema,
    hp: HyperParams,
    k: int,
    seed: int,
    spec: ModelSpec = ModelSpec(),
    features: Optional[FeatureSources] = None,
    jobs: int = 1,
    plan: Optional[FoldPlan] = None,
) -> CVResult:
    """One independent training run per outer fold.

    Fold ``i`` trains with seed ``hp.seed + i``; the dev fold drives early
    stopping and is scored for hyperparameter comparisons.
    """
    instances = _instances(data)
    plan = plan or make_folds(instances, k, seed)
    features = features or FeatureSources()
    jobs_list = []
    for i in range(plan.k):
        tr, dv, te = plan.split(instances, i)
        jobs_list.append(_FoldJob(i, tr, dv, te, schema, hp.replace(seed=hp.seed + i), spec, features))
    folds = _parallel_map(_run_fold, jobs_list, jobs)
    return CVResult(plan.k, plan.seed, schema.averaging, folds)


# ---------------------------------------------------------------------------
# paired t-test


def _betacf(a: float, b: float, x: float, eps: float = 1e-15, max_iter: int = 500) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed(t: float, df: int) -> float:
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class SignificanceResult:
    pairs: tuple[tuple[float, float], ...]
    mean_diff: float
    t: float
    df: int
    p: float
    alpha: float
    significant: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "mean_diff": self.mean_diff, "t": self.t,
                "df": self.df, "p": self.p, "alpha": self.alpha, "significant": self.significant,
                "degenerate": self.degenerate}


def paired_ttest(scores_a: Sequence[float], scores_b: Sequence[float], alpha: float = ALPHA) -> SignificanceResult:
    """Two-tailed paired t-test on ``d_i = a_i - b_i``.

    With zero spread in ``d`` the statistic is undefined: identical scores give
    ``p = 1`` and a constant nonzero difference gives ``p = 0``, both flagged
    ``degenerate``.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("paired t-test needs two aligned score vectors")
    n = a.size
    if n < 2:
        raise DataError("paired t-test needs at least 2 pairs")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DataError("paired t-test scores must be finite")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    pairs = tuple((float(x), float(y)) for x, y in zip(a, b))
    if sd == 0.0:
        if mean == 0.0:
            return SignificanceResult(pairs, 0.0, 0.0, df, 1.0, alpha, False, True)
        return SignificanceResult(pairs, mean, math.copysign(math.inf, mean), df, 0.0, alpha, True, True)
    t = mean * math.sqrt(n) / sd
    p = min(1.0, max(0.0, student_t_two_tailed(t, df)))
    return SignificanceResult(pairs, mean, t, df, p, alpha, p < alpha)


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialSpec:
    trial_id: str
    hp: HyperParams
    provenance: str
    changes: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown trial provenance {self.provenance!r}")

    @property
    def fields(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.changes)

    def to_dict(self) -> dict:
        return {"trial_id": self.trial_id, "provenance": self.provenance,
                "changes": {k: v for k, v in self.changes}, "hp": self.hp.to_dict()}


def differing_fields(a: HyperParams, b: HyperParams) -> list[str]:
    da, db = a.to_dict(), b.to_dict()
    return [k for k in da if da[k] != db[k]]


@dataclass
class TrialResult:
    spec: TrialSpec
    dev_scores: list[float]
    test_scores: list[float]
    mean_dev: float
    vs_default: Optional[SignificanceResult] = None

    @property
    def improves(self) -> bool:
        s = self.vs_default
        return s is not None and s.significant and s.mean_diff > 0

    def to_record(self) -> dict:
        rec = self.spec.to_dict()
        rec.update({
            "seed": self.spec.hp.seed,
            "dev_scores": self.dev_scores,
            "test_scores": self.test_scores,
            "mean_dev": self.mean_dev,
            "p_value": None if self.vs_default is None else self.vs_default.p,
            "significant": self.improves,
        })
        return rec


def rank_trials(results: Iterable[TrialResult]) -> list[TrialResult]:
    return sorted(results, key=lambda r: (-r.mean_dev, r.spec.trial_id))


def write_manifest(results: Iterable[TrialResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in sorted(results, key=lambda r: r.spec.trial_id):
            f.write(json.dumps(r.to_record(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


@dataclass
class SearchResult:
    ranked: list[TrialResult]
    winner: TrialResult
    default: Optional[TrialResult] = None

    def by_id(self) -> dict[str, TrialResult]:
        return {r.spec.trial_id: r for r in self.ranked}


# ---------------------------------------------------------------------------
# manual one-at-a-time sweep


def _apply(base: HyperParams, changes: Mapping[str, Any]) -> HyperParams:
    return HyperParams.from_dict(dict(changes), base=base)


def pass1_trials(default_hp: HyperParams, grid: Mapping[str, Sequence]) -> list[TrialSpec]:
    """One trial per grid value that differs from the default, in grid order."""
    if not grid:
        raise ConfigError("manual sweep grid is empty")
    known = set(default_hp.to_dict())
    unknown = sorted(set(grid) - known)
    if unknown:
        raise ConfigError(f"grid fields are not hyperparameters: {', '.join(unknown)}")
    specs = []
    for name, values in grid.items():
        for value in values:
            hp = _apply(default_hp, {name: value})
            if hp == default_hp:
                continue
            specs.append(TrialSpec(f"p1-{len(specs):03d}", hp, "manual-pass-1", ((name, value),)))
    return specs


def pass2_trials(default_hp: HyperParams, winners: Sequence[TrialSpec], already: Iterable[HyperParams],
                 cap: int = PASS2_CAP) -> list[TrialSpec]:
    """Cross-product of the significant pass-1 values, skipping configurations already run."""
    by_field: dict[str, list] = {}
    for spec in winners:
        (name, value), = spec.changes
        by_field.setdefault(name, []).append(value)
    seen = list(already)
    specs = []
    for combo in itertools.product(*by_field.values()):
        if len(specs) >= cap:
            break
        changes = tuple(zip(by_field, combo))
        hp = _apply(default_hp, dict(changes))
        if hp in seen:
            continue
        seen.append(hp)
        specs.append(TrialSpec(f"p2-{len(specs):03d}", hp, "manual-pass-2", changes))
    return specs


@dataclass(frozen=True)
class _TrialJob:
    spec: TrialSpec
    instances: list
    schema: RelationSchema
    plan: FoldPlan
    model_spec: ModelSpec
    features: FeatureSources


def _run_cv_trial(job: _TrialJob) -> tuple[TrialSpec, CVResult]:
    cv = nested_cv(job.instances, job.schema, job.spec.hp, job.plan.k, job.plan.seed,
                   job.model_spec, job.features, plan=job.plan)
    return job.spec, cv


def _cv_results(specs, instances, schema, plan, model_spec, features, jobs):
    work = [_TrialJob(s, instances, schema, plan, model_spec, features) for s in specs]
    out = _parallel_map(_run_cv_trial, work, jobs)
    return [TrialResult(s, cv.dev_scores, cv.test_scores, float(np.mean(cv.dev_scores))) for s, cv in out]


def manual_sweep(
    default_hp: HyperParams,
    grid: Mapping[str, Sequence],
    data: Dataset | Sequence[RelationInstance],
    schema: RelationSchema,
    k: int,
    seed: int,
    spec: ModelSpec = ModelSpec(),
    features: Optional[FeatureSources] = None,
    alpha: float = ALPHA,
    cap: int = PASS2_CAP,
    jobs: int = 1,
) -> SearchResult:
    """Two-pass manual search compared against the default on dev-fold scores.

    A trial counts as significant when the paired t-test rejects at ``alpha``
    and its mean dev score is higher than the default's.
    """
    instances = _instances(data)
    plan = make_folds(instances, k, seed)
    features = features or FeatureSources()
    p1 = pass1_trials(default_hp, grid)
    default_spec = TrialSpec("default", default_hp, "default")
    results = _cv_results([default_spec] + p1, instances, schema, plan, spec, features, jobs)
    base = results[0]
    for r in results[1:]:
        r.vs_default = paired_ttest(r.dev_scores, base.dev_scores, alpha)
    winners = [r.spec for r in results[1:] if r.improves]
    p2 = pass2_trials(default_hp, winners, [r.spec.hp for r in results], cap)
    if p2:
        extra = _cv_results(p2, instances, schema, plan, spec, features, jobs)
        for r in extra:
            r.vs_default = paired_ttest(r.dev_scores, base.dev_scores, alpha)
        results += extra
    ranked = rank_trials(results)
    significant = [r for r in ranked if r.improves]
    return SearchResult(ranked, significant[0] if significant else base, base)


# ---------------------------------------------------------------------------
# random search


def sample_trial(rng: np.random.Generator, base: HyperParams) -> HyperParams:
    """Draw one configuration from the random-search distributions."""
    epochs = int(rng.integers(RANDOM_EPOCHS[0], RANDOM_EPOCHS[1] + 1))
    decay = bool(rng.integers(2))
    lr_init = float(rng.uniform(*RANDOM_LR_INIT))
    windows = RANDOM_WINDOW_SIZES[int(rng.integers(len(RANDOM_WINDOW_SIZES)))]
    early_stop = bool(rng.integers(2))
    batch = int(rng.integers(RANDOM_BATCH[0], RANDOM_BATCH[1] + 1))
    schedule = HalfwayDecay(lr_init, epochs) if decay else Constant(lr_init)
    return base.replace(epochs=epochs, lr_schedule=schedule, window_sizes=windows,
                        early_stop=early_stop, patience=derive_patience(epochs), batch_size=batch)


@dataclass(frozen=True)
class _HoldoutJob:
    spec: TrialSpec
    train_set: list
    dev_set: list
    schema: RelationSchema
    model_spec: ModelSpec
    features: FeatureSources


def _run_holdout(job: _HoldoutJob) -> TrialResult:
    try:
        res = train(job.train_set, job.dev_set, job.schema, job.spec.hp, job.model_spec, job.features)
    except TrainingError as e:
        raise TrainingError(f"trial {job.spec.trial_id}: {e}") from e
    model = res.model
    enc = [model.encode(x, job.features.contextual) for x in job.dev_set]
    score = evaluate([x.label for x in job.dev_set], model.predict_all(enc), job.schema).official(job.schema.averaging)
    return TrialResult(job.spec, [score], [], score)


def random_search(
    data: Dataset | Sequence[RelationInstance],
    schema: RelationSchema,
    trials: int,
    seed: int,
    base: HyperParams = HyperParams(),
    spec: ModelSpec = ModelSpec(),
    features: Optional[FeatureSources] = None,
    dev_fraction: float = 0.1,
    jobs: int = 1,
) -> SearchResult:
    """Sample ``trials`` configurations and score each on one fixed seeded dev split."""
    if trials < 1:
        raise ConfigError("random search needs at least one trial")
    instances = _instances(data)
    train_part, dev_part = holdout_split(instances, dev_fraction, seed)
    features = features or FeatureSources()
    rng = np.random.default_rng(seed)
    specs = [TrialSpec(f"r-{i:03d}", sample_trial(rng, base), "random") for i in range(trials)]
    work = [_HoldoutJob(s, train_part, dev_part, schema, spec, features) for s in specs]
    ranked = rank_trials(_parallel_map(_run_holdout, work, jobs))
    return SearchResult(ranked, ranked[0])


# ---------------------------------------------------------------------------
# variant comparisons and report rendering


@dataclass(frozen=True)
class Variant:
    name: str
    preprocess: PreprocessVariant = field(default_factory=PreprocessVariant)
    spec: ModelSpec = field(default_factory=ModelSpec)


@dataclass
class VariantResult:
    variant: Variant
    cv: CVResult
    test_score: Optional[float] = None
    vs_baseline: Optional[SignificanceResult] = None

    @property
    def marked(self) -> bool:
        """True when the difference from the baseline is not significant."""
        return self.vs_baseline is not None and not self.vs_baseline.significant


def fit_and_test(
    dataset: Dataset,
    hp: HyperParams,
    spec: ModelSpec = ModelSpec(),
    features: Optional[FeatureSources] = None,
    dev_fraction: float = 0.1,
) -> MetricsReport:
    """Train on the full training split and score the official test split.

    A fixed dev split is carved out only when early stopping needs one.
    """
    features = features or FeatureSources()
    train_part, dev_part = list(dataset.train), None
    if hp.early_stop:
        train_part, dev_part = holdout_split(train_part, dev_fraction, hp.seed)
    res = train(train_part, dev_part, dataset.schema, hp, spec, features)
    enc = [res.model.encode(x, features.contextual) for x in dataset.test]
    return evaluate([x.label for x in dataset.test], res.model.predict_all(enc), dataset.schema)


def compare_variants(
    dataset: Dataset,
    variants: Sequence[Variant],
    hp: HyperParams,
    k: int,
    seed: int,
    features: Optional[FeatureSources] = None,
    ner: Optional[Mapping[str, NerAnnotation]] = None,
    alpha: float = ALPHA,
    with_test: bool = True,
    jobs: int = 1,
) -> list[VariantResult]:
    """Nested CV for every variant on one shared fold plan.

    The first variant is the baseline; the others are paired against it on
    held-out fold scores.
    """
    if not variants:
        raise ConfigError("no variants to compare")
    features = features or FeatureSources()
    plan = make_folds(dataset.train, k, seed)
    out = []
    for v in variants:
        train_v = v.preprocess.apply_all(dataset.train, ner)
        test_v = v.preprocess.apply_all(dataset.test, ner) if dataset.test else None
        cv = nested_cv(train_v, dataset.schema, hp, k, seed, v.spec, features, jobs, plan)
        test = None
        if with_test and test_v:
            report = fit_and_test(Dataset(dataset.schema, train_v, test_v), hp, v.spec, features)
            test = report.official(dataset.schema.averaging)
        out.append(VariantResult(v, cv, test))
    base = out[0]
    for r in out[1:]:
        r.vs_baseline = paired_ttest(r.cv.test_scores, base.cv.test_scores, alpha)
    return out


def render_rows(rows: Sequence[tuple[str, Optional[float], float, float, bool]], title: str = "") -> str:
    """Test score on the first line of each row, ``mean (sd)`` of the folds below it.

    Rows are ``(name, test, mean, sd, marked)``; ``marked`` appends the
    not-significant marker.
    """
    width = max([len(r[0]) for r in rows] + [8])
    lines = [title] if title else []
    lines.append(f"{'':<{width}}  score")
    for name, test, mean, sd, marked in rows:
        lines.append(f"{name:<{width}}  {'' if test is None else f'{100 * test:.2f}'}")
        lines.append(f"{'':<{width}}  {format_mean_std(mean, sd)}{NOT_SIGNIFICANT_MARK if marked else ''}")
    return "\n".join(lines)


def render_variants(results: Sequence[VariantResult], title: str = "") -> str:
    rows = []
    for r in results:
        mean, sd = r.cv.summary("test")
        rows.append((r.variant.name, r.test_score, mean, sd, r.marked))
    return render_rows(rows, title)


def render_search(result: SearchResult, title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'trial':<10}{'provenance':<16}{'dev':>8}{'p':>10}  changes")
    for r in result.ranked:
        p = "" if r.vs_default is None else f"{r.vs_default.p:.4f}"
        mark = "" if r.improves or r.vs_default is None else NOT_SIGNIFICANT_MARK
        changes = ", ".join(f"{k}={v}" for k, v in r.spec.changes)
        lines.append(f"{r.spec.trial_id:<10}{r.spec.provenance:<16}{100 * r.mean_dev:8.2f}{p:>10}{mark:1}  {changes}")
    lines.append(f"winner: {result.winner.spec.trial_id}")
    return "\n".join(lines)
