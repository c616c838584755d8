import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mets.encoder import EncoderConfig, build_encoder
from mets.errors import CatalogMismatchError, DegenerateEmbeddingError
from mets.synthetic import make_class_samples
from mets.text_embed import EmbeddingProvider
from mets.zeroshot import ClassCatalog, build_class_embeddings, classify, evaluate, report_from_confusion


def test_confusion_fixture_hand_derived():
    r = report_from_confusion([[2, 1], [0, 3]], ["a", "b"])
    assert r.accuracy == pytest.approx(5 / 6, abs=1e-12)
    assert [c["precision"] for c in r.per_class] == pytest.approx([1.0, 0.75])
    assert [c["recall"] for c in r.per_class] == pytest.approx([2 / 3, 1.0])
    assert r.macro_f1 == pytest.approx((0.8 + 6 / 7) / 2, abs=1e-12)
    assert abs(r.macro_f1 - 0.828571) < 1e-6


def test_perfect_and_single_class():
    r = report_from_confusion(np.diag([3, 4, 5]))
    assert (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1) == (1.0, 1.0, 1.0, 1.0)
    one = report_from_confusion([[4, 0], [0, 0]])
    assert one.accuracy == 1.0 and one.macro_recall == 1.0 and one.macro_f1 == 1.0


def test_never_predicted_class_has_zero_precision():
    r = report_from_confusion([[0, 2], [0, 2]])
    assert r.per_class[0]["precision"] == 0.0 and r.per_class[0]["f1"] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_in_unit_interval(seed):
    c = np.random.default_rng(seed).integers(0, 6, (4, 4))
    r = report_from_confusion(c)
    assert r.n == c.sum()
    for v in (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1):
        assert 0.0 <= v <= 1.0


def test_classify_examples():
    cls = np.eye(3)
    p, k = classify(cls[2] * 5, cls, 0.07)
    assert k == 2 and abs(p.sum() - 1) < 1e-6
    p, k = classify(np.array([1.0, 2.0]), np.ones((4, 2)), 0.07)
    np.testing.assert_allclose(p, 0.25)
    assert k == 0
    with pytest.raises(DegenerateEmbeddingError):
        classify(np.zeros(3), cls, 0.07)


@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_classify_scale_invariant_and_positive(alpha, seed):
    r = np.random.default_rng(seed)
    cls, e = r.standard_normal((5, 8)), r.standard_normal(8)
    p1, k1 = classify(e, cls, 0.1)
    p2, k2 = classify(alpha * e, cls, 0.1)
    assert k1 == k2
    np.testing.assert_allclose(p1, p2, atol=1e-7)
    assert np.all(p1 > 0) and abs(p1.sum() - 1) < 1e-6


def test_catalog_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        ClassCatalog("diagnostic", ("a", "a"))
    with pytest.raises(ValueError):
        ClassCatalog("mood", ("a",))
    cat = ClassCatalog("external", ("N", "V"))
    assert cat.prompts()[0].rendered == "The ECG of N, a type of diagnostic."
    cat.save(tmp_path / "c.json")
    assert ClassCatalog.load(tmp_path / "c.json") == cat


def test_class_embeddings_permute_with_labels():
    prov = EmbeddingProvider.stub(32)
    a = build_class_embeddings(ClassCatalog("form", ("x", "y", "z")), prov)
    b = build_class_embeddings(ClassCatalog("form", ("z", "x", "y")), prov)
    np.testing.assert_array_equal(a[[2, 0, 1]], b)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)
    assert build_class_embeddings(ClassCatalog("form", ("only",)), prov).shape == (1, 32)


def test_evaluate_rejects_unknown_labels():
    samples = make_class_samples(1, n_samples=200)
    cat = ClassCatalog("diagnostic", ("Normal ECG", "Hypertrophy"))
    with pytest.raises(CatalogMismatchError, match="Myocardial Infarction"):
        evaluate(samples, build_encoder(EncoderConfig.micro()), cat, EmbeddingProvider.stub())


def test_evaluate_is_order_independent():
    samples = make_class_samples(3, n_samples=200, split="test_x")
    cat = ClassCatalog("diagnostic", tuple(dict.fromkeys(s.labels[0] for s in samples)))
    model, prov = build_encoder(EncoderConfig.micro(), seed=2), EmbeddingProvider.stub()
    a = evaluate(samples, model, cat, prov)
    b = evaluate(samples[::-1], model, cat, prov)
    np.testing.assert_array_equal(a.confusion, b.confusion)
    assert a.n == len(samples)


def test_report_serialisation():
    r = report_from_confusion([[2, 1], [0, 3]], ["a", "b"], "diagnostic")
    d = r.to_dict()
    assert d["confusion"] == [[2, 1], [0, 3]] and d["macro"]["f1"] == r.macro_f1
    assert r.summary().splitlines()[0].split() == ["Accuracy", "Precision", "Recall", "F1"]
