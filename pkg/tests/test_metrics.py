import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taeclsa.clsa import ClsaConfig, param_layout
from taeclsa.errors import DataError
from taeclsa.metrics import compute_metrics, confusion, param_report


def test_perfect_predictions_diagonal():
    y = [0, 1, 2, 3, 4, 4]
    cm = confusion(y, y)
    assert (cm.counts == np.diag(np.diag(cm.counts))).all()
    assert compute_metrics(cm).accuracy == 1.0


def test_all_class_zero_single_column():
    cm = confusion([0] * 6, [0, 1, 2, 3, 4, 1])
    assert (cm.counts[:, 1:] == 0).all() and cm.total == 6


def test_length_mismatch_and_range():
    with pytest.raises(DataError):
        confusion([0, 1], [0])
    with pytest.raises(DataError):
        confusion([5], [0])


def test_empty_matrix():
    with pytest.raises(DataError):
        compute_metrics(confusion([], []))


def test_hand_example_two_thirds():
    # class 0: TP=2, FP=1, FN=1
    cm = confusion([0, 0, 0, 1, 2], [0, 0, 1, 0, 2])
    m = compute_metrics(cm).per_class["NORM"]
    assert m.precision == m.sensitivity == m.f1 == pytest.approx(2 / 3)


def test_degenerate_class_flagged():
    r = compute_metrics(confusion([0, 0], [0, 0]))
    assert r.per_class["MI"].precision == 0.0 and "precision" in r.per_class["MI"].degenerate
    assert not r.per_class["NORM"].degenerate


def test_json_schema_and_table():
    r = compute_metrics(confusion([0, 1, 2, 3, 4], [0, 1, 2, 3, 3]), params={"total": 10})
    d = json.loads(r.to_json())
    assert sorted(d) == ["accuracy", "macro_f1", "params", "per_class"]
    assert sorted(d["per_class"]) == ["CD", "HYP", "MI", "NORM", "STTC"]
    head = r.table().splitlines()[0]
    assert head.index("Sensitivity") < head.index("Precision") < head.index("F1")


def _brute(pred, true, k=5):
    out = {}
    for c in range(k):
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        out[c] = (tp, fp, fn)
    return out, sum(p == t for p, t in zip(pred, true)) / len(pred)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=200))
def test_metric_properties(pairs):
    pred, true = zip(*pairs)
    cm = confusion(pred, true)
    r = compute_metrics(cm)
    assert cm.tp.sum() == np.trace(cm.counts)
    assert r.accuracy == np.trace(cm.counts) / cm.total
    for m in r.per_class.values():
        for v in (m.sensitivity, m.precision, m.f1, m.accuracy):
            assert 0.0 <= v <= 1.0
        if not m.degenerate:
            assert min(m.precision, m.sensitivity) - 1e-12 <= m.f1 <= max(m.precision, m.sensitivity) + 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    pred, true = rng.integers(0, 5, 300), rng.integers(0, 5, 300)
    perm = rng.permutation(5)
    a, b = compute_metrics(confusion(pred, true)), compute_metrics(confusion(perm[pred], perm[true]))
    names = list(a.per_class)
    assert a.accuracy == b.accuracy
    for c in range(5):
        assert a.per_class[names[c]].f1 == b.per_class[names[perm[c]]].f1


def test_conv_only_reduction():
    rep = param_report({"conv": 512 * 3 * 6 + 512}, {"conv": 512 * 3 * 12 + 512})
    assert (rep.total_a, rep.total_b) == (9728, 18944)
    assert rep.reduction_pct == pytest.approx(48.65, abs=0.005)


def test_identical_models_zero_reduction():
    layout = param_layout(ClsaConfig(), 50)
    assert param_report(layout, layout).reduction_pct == 0.0


def test_full_model_reduction_bounds():
    a = param_layout(ClsaConfig(embed_dim=6), 1000)
    b = param_layout(ClsaConfig(embed_dim=12), 1000)
    r = param_report(a, b)
    assert 0.0 < r.reduction_pct < 100.0
    assert "total" in r.table()
