"""End-to-end acceptance checks; each prints one PASS/FAIL line in the terminal summary."""

import time

import numpy as np
import pytest
from scipy import stats

import sampler_check
from conftest import ASSET_DIR
from gradcheck import COMBOS, check_case, sample_case
from metric_oracle import brute_force, max_difference, random_case
from rexflow.corpus import SynthSpec, adapt_semeval, synth_corpus
from rexflow.crcnn import ModelSpec
from rexflow.experiments import NOT_SIGNIFICANT_MARK, Variant, compare_variants, paired_ttest, render_variants
from rexflow.features import load_word_vectors, toy_contextual
from rexflow.metrics import NEGATIVE, POSITIVE, detection_collapse, evaluate
from rexflow.preprocess import VARIANTS, NerAnnotation, PreprocessVariant, toy_ner
from rexflow.train import FeatureSources, HyperParams, train


def test_gradient_suite(record):
    rng = np.random.default_rng(2024)
    start = time.process_time()
    worst, n = 0.0, 120
    for i in range(n):
        pooling, contextual = COMBOS[i % len(COMBOS)]
        worst = max(worst, max(check_case(sample_case(rng, pooling, contextual)).values()))
    cpu = time.process_time() - start
    ok = worst < 1e-5 and cpu < 60
    record(1, ok, f"{n} configurations, worst relative error {worst:.2e}, {cpu:.1f}s CPU")
    assert worst < 1e-5
    assert cpu < 60


def test_metric_oracle(record):
    rng = np.random.default_rng(7)
    worst = 0.0
    seen = set()
    for _ in range(1000):
        schema, gold, pred, policy = random_case(rng)
        seen.add(policy)
        if policy == "detection":
            report = evaluate(gold, pred, schema, task="detection")
            expected = brute_force(detection_collapse(gold, schema.null_label),
                                   detection_collapse(pred, schema.null_label), (POSITIVE, NEGATIVE))
        else:
            report = evaluate(gold, pred, schema)
            expected = brute_force(gold, pred, schema.metric_included)
        worst = max(worst, max_difference(report, expected))
    ok = worst <= 1e-12 and seen == {"excluded", "included", "detection"}
    record(2, ok, f"1000 cases over {sorted(seen)}, max deviation {worst:.1e}")
    assert ok


def test_overfit_check(record):
    data = synth_corpus(SynthSpec(size=200, classes=4, seed=1))
    hp = HyperParams(epochs=150)
    start = time.process_time()
    first = train(data.train, None, data.schema, hp)
    cpu = time.process_time() - start
    second = train(data.train, None, data.schema, hp)
    model = first.model
    train_f1 = evaluate([x.label for x in data.train], model.predict_all([model.encode(x) for x in data.train]),
                        data.schema).macro_f1
    held_f1 = evaluate([x.label for x in data.test], model.predict_all([model.encode(x) for x in data.test]),
                       data.schema).macro_f1
    same = first.checkpoint("final") == second.checkpoint("final")
    ok = train_f1 == 1.0 and held_f1 >= 0.95 and same and cpu < 120
    record(3, ok, f"train macro-F1 {train_f1:.4f}, held-out {held_f1:.4f}, identical checkpoints {same}, "
                  f"{cpu:.1f}s CPU per run")
    assert train_f1 == 1.0
    assert held_f1 >= 0.95
    assert same
    assert cpu < 120


def test_statistics(record):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 11))
        a = rng.uniform(0.5, 0.9, size=n)
        b = a + rng.normal(0.01, 0.02, size=n)
        worst = max(worst, abs(paired_ttest(a, b).p - stats.ttest_rel(a, b).pvalue))
    p = paired_ttest([1, 2, 3, 4, 5], [0, 0, 0, 0, 0]).p
    ok = worst < 1e-6 and abs(p - 0.0132) <= 1e-4
    record(4, ok, f"max |dp| vs reference {worst:.1e}; d=[1..5] gives p={p:.5f}")
    assert ok


def test_sampler_fidelity(record):
    checks = sampler_check.check(sampler_check.draw(10_000, seed=123))
    failed = [name for name, good in checks.items() if not good]
    record(5, not failed, f"{len(checks)} checks over 10000 draws" + (f"; failed: {failed}" if failed else ""))
    assert not failed


def test_pipeline_ablation(record):
    data = synth_corpus(SynthSpec(size=150, classes=4, seed=3, mode="typed"))
    hp = HyperParams(epochs=15, filters_per_size=30, pos_embed_dim=10)
    insts = list(data.train) + list(data.test)
    ner = {x.id: NerAnnotation(x.id, tuple(toy_ner(x.tokens))) for x in insts}
    features = FeatureSources(contextual=toy_contextual(insts, dim=8, seed=0))
    pre_variants = [Variant(kind, PreprocessVariant(kind)) for kind in VARIANTS]
    model_variants = [
        Variant("max", spec=ModelSpec(pooling="max")),
        Variant("piecewise", spec=ModelSpec(pooling="piecewise")),
        Variant("tokens", spec=ModelSpec(contextual="tokens")),
        Variant("cls", spec=ModelSpec(contextual="cls")),
    ]
    pre = compare_variants(data, pre_variants, hp, k=5, seed=0, features=features, ner=ner)
    mod = compare_variants(data, model_variants, hp, k=5, seed=0, features=features)
    table = render_variants(pre, "pre-processing") + "\n\n" + render_variants(mod, "model")
    print(table)
    complete = all(len(r.cv.folds) == 5 for r in pre + mod)
    rendered = all(r.variant.name in table for r in pre + mod) and all(
        r.vs_baseline is not None for r in pre[1:] + mod[1:])
    marks_consistent = sum(line.endswith(NOT_SIGNIFICANT_MARK) for line in table.splitlines()) == sum(
        r.marked for r in pre + mod)
    blind = next(r for r in pre if r.variant.name == "entity_blind")
    orig_mean, blind_mean = pre[0].cv.summary()[0], blind.cv.summary()[0]
    sig = paired_ttest(blind.cv.test_scores, pre[0].cv.test_scores)
    ok = complete and rendered and marks_consistent and blind_mean > orig_mean and sig.p < 0.05
    record(6, ok, f"9 variants x 5 folds; entity_blind {100 * blind_mean:.2f} vs original "
                  f"{100 * orig_mean:.2f}, p={sig.p:.4f}")
    assert complete and rendered and marks_consistent
    assert blind_mean > orig_mean
    assert sig.p < 0.05


SEMEVAL_DIR = ASSET_DIR / "semeval"
SENNA = ASSET_DIR / "vectors" / "senna.txt"


def test_semeval_baseline_with_assets(record):
    needed = [SEMEVAL_DIR / "TRAIN_FILE.TXT", SEMEVAL_DIR / "TEST_FILE_FULL.TXT", SENNA]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        record(7, "SKIP", "assets absent: " + ", ".join(missing))
        pytest.skip("optional corpus and vectors are not available")
    ds = adapt_semeval(needed[0], needed[1])
    vectors = load_word_vectors(SENNA, 50)
    res = train(ds.train, None, ds.schema, HyperParams(), ModelSpec(), FeatureSources(pretrained=vectors))
    pred = res.model.predict_all([res.model.encode(x) for x in ds.test])
    f1 = evaluate([x.label for x in ds.test], pred, ds.schema).macro_f1
    ok = abs(100 * f1 - 81.55) <= 2.0
    record(7, ok, f"semeval original test macro-F1 {100 * f1:.2f} (target 81.55 +/- 2.0)")
    assert ok
