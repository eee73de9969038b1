import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taeclsa.dataset import (
    ClassLabel,
    Dataset,
    EcgRecord,
    generate_synthetic,
    load_dataset,
    read_ecg,
    save_dataset,
    smote_balance,
    smote_plan,
    split_80_10_10,
    split_counts,
    write_ecg,
)
from taeclsa.errors import DataError, DegenerateClassError, IngestionError, TooFewRecordsError


def _imbalanced(counts, T=32, seed=0):
    rng = np.random.default_rng(seed)
    recs = []
    for cls, n in zip(ClassLabel, counts):
        for i in range(n):
            recs.append(EcgRecord(f"r{cls.name}{i}", rng.normal(size=(T, 12)) + int(cls), cls))
    return Dataset(recs)


def test_record_signal_is_read_only():
    rec = EcgRecord("a", np.zeros((20, 12)), ClassLabel.MI)
    with pytest.raises(ValueError):
        rec.signal[0, 0] = 1.0


def test_record_rejects_wrong_channel_count():
    with pytest.raises(DataError):
        EcgRecord("a", np.zeros((20, 11)), ClassLabel.MI)


def test_duplicate_ids_rejected():
    r = EcgRecord("a", np.zeros((20, 12)), ClassLabel.MI)
    with pytest.raises(DataError):
        Dataset([r, EcgRecord("a", np.ones((20, 12)), ClassLabel.CD)])


def test_label_parse():
    assert ClassLabel.parse(" sttc ") is ClassLabel.STTC
    assert ClassLabel.parse("") is None
    assert ClassLabel.parse("AFIB") is None


def test_ecg_file_round_trip(tmp_path):
    sig = np.random.default_rng(0).normal(size=(37, 12))
    write_ecg(tmp_path / "x.ecg", sig)
    back = read_ecg(tmp_path / "x.ecg")
    assert back.tobytes() == sig.tobytes()


def test_ecg_file_truncated(tmp_path):
    write_ecg(tmp_path / "x.ecg", np.zeros((10, 12)))
    raw = (tmp_path / "x.ecg").read_bytes()
    (tmp_path / "x.ecg").write_bytes(raw[:-3])
    with pytest.raises(IngestionError):
        read_ecg(tmp_path / "x.ecg")


def test_dataset_round_trip_and_skips(tmp_path):
    ds = split_80_10_10(generate_synthetic(4, 32, seed=1), seed=0)
    save_dataset(ds, tmp_path)
    with open(tmp_path / "records.csv", "a") as fh:
        fh.write("ghost,NORM,32\nnolabel,,32\n")
    back = load_dataset(tmp_path)
    assert [r.record_id for r in back.records] == [r.record_id for r in ds.records]
    assert all(a.signal.tobytes() == b.signal.tobytes() for a, b in zip(ds.records, back.records))
    assert back.split == ds.split
    assert back.skipped["rejected"] == ["ghost"]
    assert back.skipped["unlabeled"] == ["nolabel"]


def test_load_missing_index(tmp_path):
    with pytest.raises(IngestionError):
        load_dataset(tmp_path / "nothing")


def test_generate_synthetic_deterministic():
    a = generate_synthetic(3, 64, seed=5)
    b = generate_synthetic(3, 64, seed=5)
    assert a.n == 15
    assert all(x.signal.tobytes() == y.signal.tobytes() for x, y in zip(a.records, b.records))
    assert a.class_counts() == {c: 3 for c in ClassLabel}


def test_smote_plan_counts():
    assert smote_plan({0: 9083, 1: 5000, 2: 1}) == {0: 0, 1: 4083, 2: 9082}
    assert smote_plan({}) == {}


def test_smote_balances_exactly_and_convexly():
    ds = _imbalanced([12, 5, 3, 8, 2])
    out = smote_balance(ds, k=5, seed=0)
    assert set(out.class_counts().values()) == {12}
    by_id = {r.record_id: r for r in out.records}
    for r in out.records:
        if not r.synthetic:
            continue
        a, b, u = r.origin
        assert 0.0 <= u <= 1.0
        assert by_id[a].label == by_id[b].label == r.label
        resid = r.signal - (by_id[a].signal + u * (by_id[b].signal - by_id[a].signal))
        assert np.max(np.abs(resid)) < 1e-9


def test_smote_neighbours_within_k():
    # the chosen partner must be among the k nearest same-class records
    ds = _imbalanced([10, 6, 10, 10, 10], seed=3)
    out = smote_balance(ds, k=2, seed=1)
    mi = [r for r in ds.records if r.label == ClassLabel.MI]
    X = np.stack([r.signal.ravel() for r in mi])
    for r in out.records:
        if r.synthetic:
            a, b, _ = r.origin
            ia = [m.record_id for m in mi].index(a)
            d = np.linalg.norm(X - X[ia], axis=1)
            d[ia] = np.inf
            nearest = {mi[j].record_id for j in np.argsort(d, kind="stable")[:2]}
            assert b in nearest


def test_smote_single_member_class_raises():
    with pytest.raises(DegenerateClassError):
        smote_balance(_imbalanced([5, 1, 5, 5, 5]))


def test_smote_balanced_input_unchanged():
    ds = _imbalanced([4, 4, 4, 4, 4])
    assert smote_balance(ds).n == ds.n


def test_smote_paper_scale_counting():
    # majority of 9083 and five classes give 45,415 after balancing
    counts = {ClassLabel.NORM: 9083, ClassLabel.MI: 4000, ClassLabel.STTC: 5000, ClassLabel.CD: 4500, ClassLabel.HYP: 2500}
    plan = smote_plan(counts)
    assert sum(counts.values()) + sum(plan.values()) == 5 * 9083 == 45415


def test_split_is_stratified_and_deterministic():
    ds = generate_synthetic(20, 32, seed=0)
    a, b = split_80_10_10(ds, seed=3), split_80_10_10(ds, seed=3)
    assert a.split == b.split
    assert split_counts(a) == {"train": 80, "val": 10, "test": 10}
    for s in ("val", "test"):
        assert set(a.class_counts(a.subset(s)).values()) == {2}


def test_split_sends_synthetic_to_train():
    ds = smote_balance(_imbalanced([20, 10, 20, 20, 20]), seed=0)
    sp = split_80_10_10(ds, seed=0)
    assert all(sp.split[r.record_id] == "train" for r in ds.records if r.synthetic)


def test_split_too_few():
    with pytest.raises(TooFewRecordsError):
        split_80_10_10(_imbalanced([2, 2, 2, 1, 1]))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(2, 9), min_size=5, max_size=5), st.integers(0, 1000))
def test_smote_equalises_any_counts(counts, seed):
    out = smote_balance(_imbalanced(counts, T=8, seed=seed), seed=seed)
    assert set(out.class_counts().values()) == {max(counts)}
