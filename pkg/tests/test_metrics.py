import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metric_oracle import brute_force, max_difference, random_case
from rexflow.corpus import DDI_SCHEMA, I2B2_SCHEMA, SEMEVAL_SCHEMA, RelationSchema
from rexflow.errors import DataError
from rexflow.metrics import (
    NEGATIVE,
    POSITIVE,
    MetricsReport,
    compare_reports,
    detection_collapse,
    detection_from_report,
    evaluate,
    read_predictions,
    write_predictions,
    write_report_json,
)

ABC = RelationSchema("abc", ("A", "B", "C"), None, ("A", "B", "C"))
A_ONLY = RelationSchema("a", ("A", "None"), "None", ("A",), "micro", True)
labels_of = st.sampled_from(DDI_SCHEMA.labels)


def test_perfect_prediction():
    gold = list(DDI_SCHEMA.labels) * 3
    r = evaluate(gold, gold, DDI_SCHEMA)
    assert r.accuracy == 1.0 and r.macro_f1 == 1.0 and r.micro_f1 == 1.0
    assert all(c.precision == c.recall == c.f1 == 1.0 for c in r.per_class.values())


def test_hand_counted_macro_and_micro():
    r = evaluate(["A", "A", "B", "C"], ["A", "B", "B", "B"], ABC)
    assert r.macro_f1 == pytest.approx((2 / 3 + 1 / 2 + 0) / 3, abs=1e-12)
    assert r.macro_f1 == pytest.approx(0.38889, abs=1e-5)
    assert r.micro_f1 == pytest.approx(0.5, abs=1e-12)


def test_null_excluded_from_micro():
    r = evaluate(["A", "None", "None"], ["A", "None", "A"], A_ONLY)
    assert (r.micro_p, r.micro_r) == (0.5, 1.0)
    assert r.micro_f1 == pytest.approx(2 / 3)
    assert r.accuracy == pytest.approx(2 / 3)


def test_detection_collapse():
    assert detection_collapse(["advise", "None", "effect"], "None") == [POSITIVE, NEGATIVE, POSITIVE]
    assert detection_collapse(["None"] * 4, "None") == [NEGATIVE] * 4


def test_detection_ignores_type_confusions():
    gold, pred = ["advise", "effect", "None"], ["effect", "effect", "None"]
    det = evaluate(gold, pred, DDI_SCHEMA, task="detection")
    assert det.per_class[POSITIVE].f1 == 1.0
    schema = RelationSchema("two", DDI_SCHEMA.labels, "None", ("advise", "effect"))
    assert evaluate(gold, pred, schema).micro_f1 < 1.0


def test_detection_refused_where_disabled():
    with pytest.raises(DataError, match="detection"):
        evaluate(["Other"], ["Other"], SEMEVAL_SCHEMA, task="detection")


def test_input_errors():
    with pytest.raises(DataError, match="gold has 2"):
        evaluate(["A", "B"], ["A"], ABC)
    with pytest.raises(DataError, match="outside the schema"):
        evaluate(["A"], ["Z"], ABC)
    with pytest.raises(DataError):
        evaluate(["A"], ["A"], ABC, task="ranking")


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        schema, gold, pred, policy = random_case(rng)
        if policy == "detection":
            r = evaluate(gold, pred, schema, task="detection")
            g, p = detection_collapse(gold, "NULL"), detection_collapse(pred, "NULL")
            expected = brute_force(g, p, (POSITIVE, NEGATIVE))
        else:
            r = evaluate(gold, pred, schema)
            expected = brute_force(gold, pred, schema.metric_included)
        assert max_difference(r, expected) <= 1e-12


@given(st.lists(st.tuples(labels_of, labels_of), min_size=1, max_size=60))
def test_micro_scores_coincide_when_everything_is_included(pairs):
    gold, pred = zip(*pairs)
    r = evaluate(gold, pred, DDI_SCHEMA)
    assert r.micro_p == pytest.approx(r.micro_r) == pytest.approx(r.micro_f1)


@given(st.lists(st.tuples(labels_of, labels_of), min_size=1, max_size=60), st.permutations(range(5)), st.randoms())
def test_permutation_invariances(pairs, perm, rnd):
    gold, pred = zip(*pairs)
    base = evaluate(gold, pred, DDI_SCHEMA)
    rename = dict(zip(DDI_SCHEMA.labels, [DDI_SCHEMA.labels[i] for i in perm]))
    renamed = evaluate([rename[g] for g in gold], [rename[p] for p in pred], DDI_SCHEMA)
    assert renamed.macro_f1 == pytest.approx(base.macro_f1, abs=1e-12)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    g2, p2 = zip(*shuffled)
    assert evaluate(g2, p2, DDI_SCHEMA).micro_f1 == pytest.approx(base.micro_f1, abs=1e-12)


@given(st.lists(st.tuples(st.sampled_from(I2B2_SCHEMA.labels), st.sampled_from(I2B2_SCHEMA.labels)),
                min_size=1, max_size=80))
def test_detection_derives_from_the_confusion_matrix(pairs):
    gold, pred = zip(*pairs)
    direct = evaluate(gold, pred, I2B2_SCHEMA, task="detection")
    derived = detection_from_report(evaluate(gold, pred, I2B2_SCHEMA), "None")
    assert np.array_equal(direct.confusion, derived.confusion)
    assert direct.aggregates() == derived.aggregates()


def _report_with_micro(micro_f1):
    r = evaluate(["A"], ["A"], ABC)
    r.micro_f1 = micro_f1
    return r


def test_compare_reports():
    a = _report_with_micro(0.5975)
    b = _report_with_micro(0.6876)
    assert 100 * compare_reports(a, b)["micro_f1"] == pytest.approx(9.01, abs=1e-9)
    assert all(v == 0 for v in compare_reports(a, a).values())


@settings(max_examples=50)
@given(st.lists(st.tuples(labels_of, labels_of, labels_of), min_size=1, max_size=40))
def test_compare_reports_is_antisymmetric(triples):
    gold, p1, p2 = zip(*triples)
    a, b = evaluate(gold, p1, DDI_SCHEMA), evaluate(gold, p2, DDI_SCHEMA)
    ab, ba = compare_reports(a, b), compare_reports(b, a)
    assert all(ab[k] == -ba[k] for k in ab)


def test_compare_reports_rejects_mismatched_reports():
    a = evaluate(["A"], ["A"], ABC)
    b = evaluate(["A"], ["A"], A_ONLY)
    with pytest.raises(DataError):
        compare_reports(a, b)


def test_prediction_and_report_files(tmp_path):
    path = tmp_path / "p.csv"
    write_predictions(path, ["x1", "x2"], ["A", "B"], ["A", "C"])
    assert read_predictions(path) == (["x1", "x2"], ["A", "B"], ["A", "C"])
    bad = tmp_path / "bad.csv"
    bad.write_text("id,label\nx,A\n")
    with pytest.raises(DataError, match="header"):
        read_predictions(bad)
    r = evaluate(["A", "B"], ["A", "C"], ABC)
    write_report_json(r, tmp_path / "r.json")
    back = MetricsReport.from_dict(json.loads((tmp_path / "r.json").read_text()))
    assert back.aggregates() == r.aggregates()
    assert np.array_equal(back.confusion, r.confusion)
    assert "macro" in r.format_table()
