"""Command-line entry point: ``rexflow <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .corpus import (
    Dataset,
    RelationSchema,
    SynthSpec,
    adapt_semeval,
    dumps_common_csv,
    load_schema,
    read_common_csv,
    save_schema,
    synth_corpus,
    write_common_csv,
)
from .crcnn import CRCNN, LossConfig, ModelSpec, load_checkpoint
from .errors import ConfigError, DataError, RexflowError
from .experiments import (
    MANUAL_GRID,
    CVResult,
    SearchResult,
    Variant,
    compare_variants,
    holdout_split,
    manual_sweep,
    mean_std,
    nested_cv,
    paired_ttest,
    random_search,
    render_rows,
    render_search,
    write_manifest,
)
from .features import WordEmbeddingTable, load_contextual, load_word_vectors, toy_contextual
from .metrics import detection_from_report, evaluate, read_predictions, write_predictions, write_report_json
from .preprocess import (
    VARIANTS,
    NerAnnotation,
    PreprocessVariant,
    load_ner_sidecar,
    load_stop_list,
    toy_ner,
)
from .train import FeatureSources, HyperParams, train, write_run, write_trace

logger = logging.getLogger("rexflow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

_HP_DEFAULTS = {k: v for k, v in HyperParams().to_dict().items() if k != "loss"}

DEFAULTS: dict[str, dict[str, Any]] = {
    "data": {"schema": None, "train": None, "test": None, "synth": None},
    "preprocess": {"variant": "original", "stop_list": None, "ner_sidecar": None, "ner_toy": False,
                   "ner_typed": True, "digit_symbol": "#"},
    "features": {"word_vectors": None, "word_dim": 50, "contextual": "none", "contextual_path": None,
                 "contextual_toy_dim": None},
    "model": {"pooling": "max", "activation": "tanh", "score_null": None, "gamma": 2.0, "m_pos": 2.5,
              "m_neg": 0.5, "null_threshold": 0.0, "freeze_words": False, "dtype": "float64"},
    "train": _HP_DEFAULTS,
    "experiment": {"k": 5, "seed": 0, "alpha": 0.05, "trials": 20, "dev_fraction": 0.1, "pass2_cap": 32,
                   "grid": None, "variants": None, "with_test": True},
}
SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthSpec)}
VARIANT_KEYS = {"name", "preprocess", "model"}
PATH_KEYS = {("data", "train"), ("data", "test"), ("preprocess", "stop_list"), ("preprocess", "ner_sidecar"),
             ("features", "word_vectors"), ("features", "contextual_path")}


# ---------------------------------------------------------------------------
# configuration


def _unknown_keys(doc: dict) -> list[str]:
    bad = []
    for section, body in doc.items():
        if section not in DEFAULTS:
            bad.append(section)
            continue
        if body is None:
            continue
        if not isinstance(body, dict):
            bad.append(f"{section} (must be a mapping)")
            continue
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                bad.append(f"{section}.{key}")
        synth = body.get("synth") if section == "data" else None
        if isinstance(synth, dict):
            bad += [f"data.synth.{k}" for k in synth if k not in SYNTH_KEYS]
        variants = body.get("variants") if section == "experiment" else None
        for i, v in enumerate(variants or []):
            if not isinstance(v, dict):
                bad.append(f"experiment.variants[{i}] (must be a mapping)")
                continue
            bad += [f"experiment.variants[{i}].{k}" for k in v if k not in VARIANT_KEYS]
            for sub in ("preprocess", "model"):
                allowed = set(DEFAULTS[sub]) | ({"contextual"} if sub == "model" else set())
                bad += [f"experiment.variants[{i}].{sub}.{k}" for k in (v.get(sub) or {}) if k not in allowed]
    return bad


def _set_dotted(doc: dict, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    if len(keys) < 2:
        raise ConfigError(f"override {dotted!r} must look like section.key=value")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends into a non-mapping")
    node[keys[-1]] = yaml.safe_load(raw)


@dataclass
class RunConfig:
    """Fully resolved configuration; ``doc`` is the canonical snapshot."""

    doc: dict

    def section(self, name: str) -> dict:
        return self.doc[name]

    def snapshot(self) -> str:
        return yaml.safe_dump(self.doc, sort_keys=True, default_flow_style=False)

    def digest(self) -> str:
        canon = json.dumps(self.doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.doc["train"]["seed"])

    def run_dir(self, root: str | Path, command: str) -> Path:
        """Content-addressed run directory: same config and seed, same place."""
        return Path(root) / f"{command}-{self.digest()[:12]}-s{self.seed}"


def load_config(path: Optional[str | Path], overrides: Sequence[str] = ()) -> RunConfig:
    """Read YAML, apply ``section.key=value`` overrides, reject unknown keys, fill defaults.

    Relative file paths are resolved against the config file's directory so a
    snapshot can be re-run from anywhere.
    """
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{p}: not valid YAML: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: config must be a mapping of sections")
        base = p.resolve().parent
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        _set_dotted(raw, key.strip(), value)
    bad = _unknown_keys(raw)
    if bad:
        raise ConfigError("unknown config keys: " + ", ".join(bad))
    doc = copy.deepcopy(DEFAULTS)
    for section, body in raw.items():
        doc[section].update(body or {})
    missing = []
    for section, key in sorted(PATH_KEYS):
        value = doc[section].get(key)
        if value is None:
            continue
        resolved = (base / str(value)).resolve()
        if not resolved.exists():
            missing.append(f"{section}.{key}={value}")
        doc[section][key] = str(resolved)
    schema = doc["data"]["schema"]
    if isinstance(schema, str) and (schema.endswith(".yaml") or schema.endswith(".yml")):
        resolved = (base / schema).resolve()
        if not resolved.exists():
            missing.append(f"data.schema={schema}")
        doc["data"]["schema"] = str(resolved)
    if missing:
        raise ConfigError("referenced files do not exist: " + ", ".join(missing))
    return RunConfig(doc)


# ---------------------------------------------------------------------------
# building objects from a config


@dataclass
class Built:
    dataset: Dataset
    preprocess: PreprocessVariant
    ner: Optional[dict[str, NerAnnotation]]
    spec: ModelSpec
    hp: HyperParams
    features: FeatureSources
    variants: list[Variant]


def default_score_null(schema: RelationSchema) -> bool:
    """Score the null class only where its detection is part of evaluation."""
    return schema.null_label is None or schema.detection_enabled


def _dataset(data: dict) -> Dataset:
    if data["synth"] is not None:
        if data["train"] is not None:
            raise ConfigError("data.synth and data.train are mutually exclusive")
        if not isinstance(data["synth"], dict):
            raise ConfigError("data.synth must be a mapping")
        synth = dict(data["synth"])
        if "concept_types" in synth:
            synth["concept_types"] = tuple(synth["concept_types"])
        try:
            return synth_corpus(SynthSpec(**synth))
        except TypeError as e:
            raise ConfigError(f"data.synth: {e}") from None
    if data["train"] is None or data["schema"] is None:
        raise ConfigError("data needs either synth settings or both schema and train")
    schema = load_schema(data["schema"])
    train_set = read_common_csv(data["train"], schema)
    test_set = read_common_csv(data["test"], schema) if data["test"] else None
    return Dataset(schema, train_set, test_set)


def _preprocess(pre: dict) -> PreprocessVariant:
    stops = load_stop_list(pre["stop_list"]) if pre.get("stop_list") else frozenset()
    return PreprocessVariant(pre.get("variant", "original"), stops, bool(pre.get("ner_typed", True)),
                             pre.get("digit_symbol", "#"))


def _model_spec(model: dict, features: dict) -> ModelSpec:
    return ModelSpec(pooling=model["pooling"], contextual=features["contextual"], activation=model["activation"],
                     word_dim=int(features["word_dim"]), freeze_words=bool(model["freeze_words"]),
                     dtype=model["dtype"])


def _loss(model: dict, schema: RelationSchema) -> LossConfig:
    score_null = model["score_null"]
    if score_null is None:
        score_null = default_score_null(schema)
    return LossConfig(gamma=float(model["gamma"]), m_pos=float(model["m_pos"]), m_neg=float(model["m_neg"]),
                      score_null=bool(score_null), null_threshold=float(model["null_threshold"]))


def build(cfg: RunConfig) -> Built:
    """Construct every runtime object, collecting all section errors before raising."""
    errors: list[str] = []
    data_errors: list[str] = []
    d = cfg.doc

    def attempt(label, fn):
        try:
            return fn()
        except DataError as e:
            data_errors.append(f"{label}: {e}")
        except (ConfigError, TypeError, ValueError) as e:
            errors.append(f"{label}: {e}")
        return None

    dataset = attempt("data", lambda: _dataset(d["data"]))
    preprocess = attempt("preprocess", lambda: _preprocess(d["preprocess"]))
    spec = attempt("model", lambda: _model_spec({**DEFAULTS["model"], **d["model"]}, d["features"]))
    loss = attempt("model", lambda: _loss(d["model"], dataset.schema)) if dataset else None
    hp = attempt("train", lambda: HyperParams.from_dict({**d["train"], "loss": dataclasses.asdict(loss)})) \
        if loss else None
    exp = d["experiment"]
    if not isinstance(exp["k"], int) or exp["k"] < 3:
        errors.append("experiment.k: must be an integer >= 3")
    if not 0 < float(exp["alpha"]) < 1:
        errors.append("experiment.alpha: must lie in (0, 1)")
    if exp["grid"] is not None:
        bad = [k for k in exp["grid"] if k not in _HP_DEFAULTS]
        if bad:
            errors.append("experiment.grid: unknown hyperparameters " + ", ".join(bad))
    variants = []
    for i, v in enumerate(exp["variants"] or []):
        pre = {**d["preprocess"], **(v.get("preprocess") or {})}
        model = {**d["model"], **(v.get("model") or {})}
        feats = dict(d["features"])
        if "contextual" in (v.get("model") or {}):
            feats["contextual"] = model.pop("contextual")
        built = attempt(f"experiment.variants[{i}]", lambda: Variant(
            str(v.get("name", f"variant{i}")), _preprocess(pre), _model_spec(model, feats)))
        if built:
            variants.append(built)
    ner = features = None
    if not errors and not data_errors:
        ner = attempt("preprocess", lambda: _ner(d["preprocess"], dataset))
        features = attempt("features", lambda: _features(d["features"], dataset, hp))
    if features is not None and features.contextual is None:
        errors += [f"experiment.variants: {v.name} uses contextual mode {v.spec.contextual!r} without contextual features"
                   for v in variants if v.spec.contextual != "none"]
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors + data_errors))
    if data_errors:
        raise DataError("\n  ".join(data_errors))
    return Built(dataset, preprocess, ner, spec, hp, features, variants)


def _ner(pre: dict, dataset: Dataset) -> Optional[dict[str, NerAnnotation]]:
    if pre.get("ner_sidecar"):
        return load_ner_sidecar(pre["ner_sidecar"])
    if pre.get("ner_toy"):
        insts = list(dataset.train) + list(dataset.test or ())
        return {x.id: NerAnnotation(x.id, tuple(toy_ner(x.tokens))) for x in insts}
    return None


def _features(feat: dict, dataset: Dataset, hp: HyperParams) -> FeatureSources:
    pretrained = None
    if feat.get("word_vectors"):
        pretrained = load_word_vectors(feat["word_vectors"], int(feat["word_dim"]), oov_seed=hp.seed)
    ctx = None
    if feat.get("contextual_path"):
        ctx = load_contextual(feat["contextual_path"])
    elif feat.get("contextual_toy_dim"):
        ctx = toy_contextual(list(dataset.train) + list(dataset.test or ()), int(feat["contextual_toy_dim"]), hp.seed)
    if feat["contextual"] != "none" and ctx is None:
        raise ConfigError(f"contextual mode {feat['contextual']!r} needs contextual_path or contextual_toy_dim")
    return FeatureSources(pretrained, ctx)


def _prepared(b: Built) -> Dataset:
    train_set = b.preprocess.apply_all(b.dataset.train, b.ner)
    test_set = b.preprocess.apply_all(b.dataset.test, b.ner) if b.dataset.test else None
    return Dataset(b.dataset.schema, train_set, test_set)


def _start_run(cfg: RunConfig, root: str, command: str) -> Path:
    out = cfg.run_dir(root, command)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(cfg.snapshot(), encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_format(args) -> int:
    if args.adapter == "synth":
        ds = synth_corpus(SynthSpec(args.size, args.classes, args.seed, args.test_size, args.mode))
    else:
        if not args.inp:
            raise ConfigError("--in is required for the semeval adapter")
        ds = adapt_semeval(args.inp, args.test_in)
    if args.out in (None, "-"):
        sys.stdout.write(dumps_common_csv(ds.train))
    else:
        write_common_csv(ds.train, args.out)
    if args.test_out and ds.test is not None:
        write_common_csv(ds.test, args.test_out)
    if args.schema_out:
        save_schema(ds.schema, args.schema_out)
    logger.info("formatted %d training instances", len(ds.train))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    schema = load_schema(args.schema)
    instances = read_common_csv(args.inp, schema)
    stops = load_stop_list(args.stop_list) if args.stop_list else frozenset()
    variant = PreprocessVariant(args.variant, stops, not args.ner_untyped)
    ner = None
    if args.ner_sidecar:
        ner = load_ner_sidecar(args.ner_sidecar)
    elif args.ner_toy:
        ner = {x.id: NerAnnotation(x.id, tuple(toy_ner(x.tokens))) for x in instances}
    write_common_csv(variant.apply_all(instances, ner), args.out)
    return EXIT_OK


def _eval_outputs(out: Path, schema: RelationSchema, ids, gold, pred, stem: str = "test") -> dict:
    write_predictions(out / f"{stem}.predictions.csv", ids, gold, pred)
    report = evaluate(gold, pred, schema)
    write_report_json(report, out / f"{stem}.metrics.json")
    scores = {"classification": report.official(schema.averaging)}
    if schema.detection_enabled:
        det = detection_from_report(report, schema.null_label)
        write_report_json(det, out / f"{stem}.detection.json")
        scores["detection"] = det.macro_f1
    return scores


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    b = build(cfg)
    ds = _prepared(b)
    out = _start_run(cfg, args.out_root, "train")
    train_set, dev_set = list(ds.train), None
    if b.hp.early_stop:
        train_set, dev_set = holdout_split(train_set, float(cfg.doc["experiment"]["dev_fraction"]), b.hp.seed)
    res = train(train_set, dev_set, ds.schema, b.hp, b.spec, b.features)
    write_run(res, out)
    if ds.test:
        enc = [res.model.encode(x, b.features.contextual) for x in ds.test]
        pred = res.model.predict_all(enc)
        scores = _eval_outputs(out, ds.schema, [x.id for x in ds.test], [x.label for x in ds.test], pred)
        print(" ".join(f"{k}={100 * v:.2f}" for k, v in scores.items()))
    print(out)
    return EXIT_OK


def _model_from_run(cfg: RunConfig, b: Built, run_dir: Path, which: str) -> CRCNN:
    params, seed, meta = load_checkpoint(run_dir / f"{which}.ckpt")
    vocab = {w: i for i, w in enumerate(meta["vocab"])}
    table = WordEmbeddingTable(vocab, params.word, seed)
    model = CRCNN(b.dataset.schema, b.spec, table, params, b.hp.loss, b.hp.max_dist)
    if list(model.scored) != meta["scored"]:
        raise DataError(f"{run_dir}: checkpoint labels do not match the configured schema")
    return model


def cmd_eval(args) -> int:
    if args.predictions:
        if not args.schema:
            raise ConfigError("--schema is required with --predictions")
        schema = load_schema(args.schema)
        if args.task == "detection" and not schema.detection_enabled:
            raise ConfigError(f"detection is not evaluated for schema {schema.name!r}")
        _, gold, pred = read_predictions(args.predictions)
        report = evaluate(gold, pred, schema, args.task)
    else:
        if not args.run_dir:
            raise ConfigError("eval needs --predictions or --run-dir")
        run_dir = Path(args.run_dir)
        cfg = load_config(run_dir / "config.snapshot")
        b = build(cfg)
        schema = b.dataset.schema
        if args.task == "detection" and not schema.detection_enabled:
            raise ConfigError(f"detection is not evaluated for schema {schema.name!r}")
        ds = _prepared(b)
        if not ds.test:
            raise DataError("the configured dataset has no test split")
        model = _model_from_run(cfg, b, run_dir, args.which)
        pred = model.predict_all([model.encode(x, b.features.contextual) for x in ds.test])
        report = evaluate([x.label for x in ds.test], pred, schema, args.task)
    if args.json:
        write_report_json(report, args.json)
    print(report.format_table())
    return EXIT_OK


def _write_cv(out: Path, cv: CVResult, name: str = "cv") -> None:
    folds = []
    for f in cv.folds:
        write_trace(f.trace, out / f"{name}.fold{f.fold}.trace.csv")
        folds.append({"fold": f.fold, "seed": f.seed, "test_score": f.test_score, "dev_score": f.dev_score,
                      "stopped_epoch": f.stopped_epoch, "best_epoch": f.best_epoch,
                      "report": f.test_report.to_dict()})
    mean, sd = cv.summary("test")
    doc = {"k": cv.k, "plan_seed": cv.plan_seed, "averaging": cv.averaging, "folds": folds,
           "mean": mean, "std": sd}
    (out / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_cv(args) -> int:
    overrides = list(args.set)
    if args.folds is not None:
        overrides.append(f"experiment.k={args.folds}")
    cfg = load_config(args.config, overrides)
    b = build(cfg)
    exp = cfg.doc["experiment"]
    out = _start_run(cfg, args.out_root, "cv")
    if b.variants:
        results = compare_variants(b.dataset, b.variants, b.hp, exp["k"], exp["seed"], b.features, b.ner,
                                   float(exp["alpha"]), bool(exp["with_test"]) and bool(b.dataset.test), args.jobs)
        rows = []
        for r in results:
            _write_cv(out, r.cv, f"cv.{r.variant.name}")
            mean, sd = r.cv.summary("test")
            rows.append((r.variant.name, r.test_score, mean, sd, r.marked))
        table = render_rows(rows, f"{b.dataset.schema.name}: {b.dataset.schema.averaging}-F1, {exp['k']}-fold")
    else:
        ds = _prepared(b)
        cv = nested_cv(ds.train, ds.schema, b.hp, exp["k"], exp["seed"], b.spec, b.features, args.jobs)
        _write_cv(out, cv)
        mean, sd = cv.summary("test")
        table = render_rows([(b.preprocess.kind, None, mean, sd, False)],
                            f"{ds.schema.name}: {ds.schema.averaging}-F1, {exp['k']}-fold")
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(out)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = load_config(args.config, args.set)
    b = build(cfg)
    exp = cfg.doc["experiment"]
    ds = _prepared(b)
    out = _start_run(cfg, args.out_root, f"search-{args.method}")
    if args.method == "manual":
        grid = exp["grid"] or MANUAL_GRID
        result: SearchResult = manual_sweep(b.hp, grid, ds.train, ds.schema, exp["k"], exp["seed"], b.spec,
                                            b.features, float(exp["alpha"]), int(exp["pass2_cap"]), args.jobs)
    else:
        trials = args.trials if args.trials is not None else int(exp["trials"])
        result = random_search(ds.train, ds.schema, trials, exp["seed"], b.hp, b.spec, b.features,
                               float(exp["dev_fraction"]), args.jobs)
    write_manifest(result.ranked, out / "manifest.jsonl")
    (out / "winner.yaml").write_text(
        yaml.safe_dump({k: v for k, v in result.winner.spec.hp.to_dict().items() if k != "loss"}, sort_keys=True),
        encoding="utf-8")
    table = render_search(result, f"{args.method} search on {ds.schema.name}")
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(out)
    return EXIT_OK


def _load_cv_scores(path: Path) -> tuple[str, list[float]]:
    doc = json.loads(path.read_text(encoding="utf-8"))
    return path.stem, [f["test_score"] for f in doc["folds"]]


def cmd_report(args) -> int:
    """Table of cross-validated runs; the first is the baseline the others are tested against."""
    entries = []
    for item in args.runs:
        p = Path(item)
        files = sorted(p.glob("cv*.json")) if p.is_dir() else [p]
        if not files:
            raise DataError(f"{p}: no cross-validation results found")
        for f in files:
            name, scores = _load_cv_scores(f)
            label = name if len(files) > 1 else (p.name if p.is_dir() else name)
            entries.append((label, scores))
    base = entries[0][1]
    rows = []
    for i, (name, scores) in enumerate(entries):
        mean, sd = mean_std(scores)
        marked = False
        if i > 0:
            if len(scores) != len(base):
                raise DataError(f"{name}: fold count differs from the baseline")
            marked = not paired_ttest(scores, base, args.alpha).significant
        rows.append((name, None, mean, sd, marked))
    print(render_rows(rows, args.title or ""))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rexflow", description="Relation extraction experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("format", help="convert a raw corpus (or generate a synthetic one) to common CSV")
    f.add_argument("--adapter", required=True, choices=("semeval", "synth"))
    f.add_argument("--in", dest="inp")
    f.add_argument("--test-in")
    f.add_argument("--out", default="-", help="training CSV path; '-' writes to stdout")
    f.add_argument("--test-out")
    f.add_argument("--schema-out")
    f.add_argument("--size", type=int, default=200)
    f.add_argument("--classes", type=int, default=4)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--test-size", type=int)
    f.add_argument("--mode", choices=("trigger", "typed"), default="trigger")
    f.set_defaults(func=cmd_format)

    p = sub.add_parser("preprocess", help="apply one pre-processing variant to a common CSV file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--stop-list")
    p.add_argument("--ner-sidecar")
    p.add_argument("--ner-toy", action="store_true", help="tag entities with the built-in toy gazetteer")
    p.add_argument("--ner-untyped", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    def with_config(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        sp.add_argument("--out-root", default="runs")
        sp.add_argument("--jobs", type=int, default=1)

    t = sub.add_parser("train", help="train one model and score the test split")
    with_config(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a predictions file or a trained run")
    e.add_argument("--predictions")
    e.add_argument("--schema")
    e.add_argument("--run-dir")
    e.add_argument("--which", choices=("best", "final"), default="best")
    e.add_argument("--task", choices=("classification", "detection"), default="classification")
    e.add_argument("--json")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cv", help="nested cross-validation, optionally comparing variants")
    with_config(c)
    c.add_argument("--folds", type=int)
    c.set_defaults(func=cmd_cv)

    s = sub.add_parser("search", help="manual or random hyperparameter search")
    s.add_argument("method", choices=("manual", "random"))
    with_config(s)
    s.add_argument("--trials", type=int)
    s.set_defaults(func=cmd_search)

    r = sub.add_parser("report", help="compare cross-validated runs with significance markers")
    r.add_argument("runs", nargs="+", help="run directories or cv JSON files; the first is the baseline")
    r.add_argument("--alpha", type=float, default=0.05)
    r.add_argument("--title")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (RexflowError, ArithmeticError, MemoryError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
