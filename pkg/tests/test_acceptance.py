"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The lines are collected in ``RESULTS`` and repeated in the terminal
summary by ``conftest.py``.
"""

import math
import time

import numpy as np
import pytest

from taeclsa import model_store
from taeclsa.cli import main
from taeclsa.clsa import ClsaConfig, ClsaTrainState, clsa_init, clsa_train, param_layout
from taeclsa.dataset import ClassLabel, Dataset, EcgRecord, generate_synthetic, smote_balance, smote_plan
from taeclsa.errors import ChecksumError
from taeclsa.gradsuite import CASES, run_suite
from taeclsa.metrics import compute_metrics, confusion, param_report
from taeclsa.pipeline import PipelineConfig, labelled, prepare_splits, run_pipeline
from taeclsa.preprocess import build_vocabulary, make_pairs, make_pairs_corpus
from taeclsa.tae import TaeTrainState, build_embedding_matrix, fit_tae, tae_init, tae_train_two_batch
from taeclsa.tensor_engine import AdamState, Tensor, self_attention

RESULTS: dict = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# 1 ------------------------------------------------------------------------

def test_01_gradient_fidelity():
    t0 = time.perf_counter()
    results = run_suite(tol=1e-4, seed=0, points=10)
    elapsed = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = (all(r.passed for r in results) and elapsed < 60.0
          and {r.op for r in results} == set(CASES) and all(r.n_points >= 10 for r in results))
    record(1, ok, f"{len(results)} ops x 10 points, worst {worst.op} {worst.max_rel_error:.2e} < 1e-4, {elapsed:.1f}s < 60s")


# 2 ------------------------------------------------------------------------

def test_02_attention_invariants():
    rng = np.random.default_rng(0)
    worst_row = 0.0
    for _ in range(1000):
        T, d = rng.integers(1, 20), rng.integers(1, 10)
        _, A = self_attention(Tensor(rng.normal(scale=rng.uniform(0.1, 5), size=(T, d))))
        worst_row = max(worst_row, np.max(np.abs(A.sum(axis=1) - 1.0)))
        assert (A >= 0).all()
    row = rng.normal(size=7)
    _, A = self_attention(Tensor(np.tile(row, (6, 1))))
    uniform_err = np.max(np.abs(A - 1 / 6))
    # X = I2: scores are I / sqrt(2), so each row is softmax([1/sqrt2, 0]) up to order
    _, A = self_attention(Tensor(np.eye(2)))
    a = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1)
    hand_err = np.max(np.abs(A - np.array([[a, 1 - a], [1 - a, a]])))
    ok = worst_row <= 1e-9 and uniform_err <= 1e-12 and hand_err <= 1e-4
    record(2, ok, f"row-sum err {worst_row:.1e}, uniform err {uniform_err:.1e}, 2x2 err {hand_err:.1e} (A11={a:.4f})")


# 3 ------------------------------------------------------------------------

def test_03_windowing_oracle():
    rng = np.random.default_rng(1)
    failures = 0
    for i in range(100):
        T = int(rng.integers(1, 300))
        rec = EcgRecord(f"w{i}", rng.normal(size=(T, 12)), ClassLabel.NORM)
        p = make_pairs(rec, 9)
        good = (len(p) == T and np.array_equal(p.target[0], rec.signal[0])
                and p.target.tobytes() == rec.signal.tobytes())
        failures += not good
    record(3, failures == 0, f"100 random records, {failures} failures (count, first target, bitwise reassembly)")


# 4 ------------------------------------------------------------------------

def test_04_smote():
    rng = np.random.default_rng(2)
    counts = [23, 9, 14, 4, 17]
    recs = [EcgRecord(f"{c.name}{i}", rng.normal(size=(40, 12)) + int(c), c)
            for c, n in zip(ClassLabel, counts) for i in range(n)]
    out = smote_balance(Dataset(recs), k=5, seed=0)
    equal = set(out.class_counts().values()) == {max(counts)}
    by_id = {r.record_id: r for r in out.records}
    worst, u_ok = 0.0, True
    for r in out.records:
        if r.synthetic:
            a, b, u = r.origin
            u_ok &= 0.0 <= u <= 1.0
            base, nb = by_id[a].signal, by_id[b].signal
            worst = max(worst, np.max(np.abs(r.signal - (base + u * (nb - base)))))
    # scaled instance: majority 91 stands in for 9083
    scaled = {c: n for c, n in zip(ClassLabel, (91, 40, 50, 45, 25))}
    plan_scaled = smote_plan(scaled)
    paper = {c: n for c, n in zip(ClassLabel, (9083, 4000, 5000, 4500, 2500))}
    plan_paper = smote_plan(paper)
    totals = (sum(scaled.values()) + sum(plan_scaled.values()), sum(paper.values()) + sum(plan_paper.values()))
    ok = equal and u_ok and worst < 1e-9 and totals == (5 * 91, 45415)
    record(4, ok, f"counts {sorted(set(out.class_counts().values()))}, convex residual {worst:.1e}, "
                  f"totals {totals[0]}=5x91 and {totals[1]}=5x9083")


# 5 ------------------------------------------------------------------------

def test_05_tae_desk_scale(tmp_path):
    ds = generate_synthetic(10, 128, seed=0)
    assert ds.n == 50
    pairs = make_pairs_corpus(ds.records)
    model, (r1, r2) = tae_train_two_batch(pairs, tae_init(seed=0), epochs=50, seed=0, checkpoint_dir=tmp_path)
    final, epoch0 = min(r2.val_mse), r1.val_mse[0]
    ratio = final / epoch0

    # resume equivalence, parameter-bitwise, on the same corpus
    m = tae_init(seed=1)
    m.fit_scaling(pairs.context_12, pairs.target)
    x, y = m.scale_in(pairs.context_12), m.scale_out(pairs.target)
    tr, va = (x[:4000], y[:4000]), (x[4000:5000], y[4000:5000])
    straight = m.copy()
    fit_tae(straight, tr, va, epochs=6, seed=3, patience=None)
    paused = m.copy()
    st = fit_tae(paused, tr, va, epochs=6, seed=3, patience=None, stop_at=3)
    model_store.save(st.to_checkpoint(paused), tmp_path / "resume.taec")
    ck = model_store.load(tmp_path / "resume.taec")
    fit_tae(ck.model, tr, va, epochs=6, seed=3, patience=None, state=TaeTrainState.from_checkpoint(ck))
    bitwise = all(a.tobytes() == ck.model.params[n].data.tobytes() for n, a in straight.params.arrays().items())

    ok = ratio <= 0.2 and bitwise and (tmp_path / "tae_batch1.taec").exists()
    record(5, ok, f"final val MSE {final:.5f} / epoch-0 {epoch0:.5f} = {ratio:.3f} <= 0.2, "
                  f"resume bitwise {bitwise} (reference only: 0.023 / 0.0124)")


# 6 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_run():
    t0 = time.perf_counter()
    cfg = PipelineConfig(seed=0, clsa_epochs=30, clsa_lr=0.001, clsa={"conv_filters": 64, "lstm_units": 32})
    res = run_pipeline(generate_synthetic(50, 128, seed=0), cfg)
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_06_clsa_desk_scale(desk_run):
    res, elapsed = desk_run
    acc = res.report.accuracy
    n_test = sum(m.support for m in res.report.per_class.values())
    ok = acc >= 0.85 and elapsed < 600 and len(res.curves) == 30
    record(6, ok, f"test accuracy {acc:.3f} >= 0.85 on {n_test} records, 30 epochs, {elapsed:.0f}s < 600s")


# 7 ------------------------------------------------------------------------

def test_07_model_size(desk_run):
    res, _ = desk_run
    desk = res.size_report()
    vocab = res.model.embedding.shape[0]
    full_a = param_layout(ClsaConfig(embed_dim=6), vocab)
    full_b = param_layout(ClsaConfig(embed_dim=12), vocab)
    full = param_report(full_a, full_b)
    no_emb = param_report({k: v for k, v in full_a.items() if k != "embedding"},
                          {k: v for k, v in full_b.items() if k != "embedding"})
    ok = desk.total_a < desk.total_b and full.total_a < full.total_b and no_emb.total_a < no_emb.total_b
    record(7, ok, f"reduction: desk {desk.reduction_pct:.2f}%, full-width {full.reduction_pct:.2f}% "
                  f"({no_emb.reduction_pct:.2f}% without embedding table); reference claims 34% / 31%")


# 8 ------------------------------------------------------------------------

def test_08_metrics_oracle():
    rng = np.random.default_rng(3)
    true = rng.integers(0, 5, 10_000).tolist()
    pred = rng.integers(0, 5, 10_000).tolist()
    rep = compute_metrics(confusion(pred, true))
    mismatches = 0
    for c, name in enumerate(["NORM", "MI", "STTC", "CD", "HYP"]):
        tp = fp = fn = 0
        for p, t in zip(pred, true):
            tp += p == c and t == c
            fp += p == c and t != c
            fn += p != c and t == c
        m = rep.per_class[name]
        mismatches += m.sensitivity != tp / (tp + fn)
        mismatches += m.precision != tp / (tp + fp)
        mismatches += m.f1 != 2 * tp / (2 * tp + fp + fn)
    acc = sum(p == t for p, t in zip(pred, true)) / len(true)
    mismatches += rep.accuracy != acc
    record(8, mismatches == 0, f"10,000 pairs, {mismatches} mismatches against brute-force recount (exact)")


# 9 ------------------------------------------------------------------------

def test_09_serialization(tmp_path):
    ds = generate_synthetic(10, 32, seed=4)
    tae = tae_init(seed=2)
    tae.fit_scaling(ds.records[0].signal, ds.records[1].signal)
    vocab = build_vocabulary(ds)
    cfg = ClsaConfig(conv_filters=8, lstm_units=6, dense_units=(8, 4))
    clsa = clsa_init(build_embedding_matrix(vocab, tae), cfg, seed=3, vocab=vocab, encoder=tae)
    checks = {}
    for name, obj in (("tae", tae), ("clsa", clsa), ("vocab", vocab)):
        p = tmp_path / f"{name}.taec"
        model_store.save(obj, p)
        back = model_store.load(p)
        a, b = model_store.to_container(obj), model_store.to_container(back)
        checks[name] = a.arrays.keys() == b.arrays.keys() and all(
            a.arrays[k].tobytes() == b.arrays[k].tobytes() for k in a.arrays)

    raw = bytearray((tmp_path / "clsa.taec").read_bytes())
    raw[len(raw) // 2] ^= 0x10
    (tmp_path / "bad.taec").write_bytes(bytes(raw))
    try:
        model_store.load(tmp_path / "bad.taec")
        corrupt = False
    except ChecksumError:
        corrupt = True

    # classifier save-at-k / resume-to-n
    data = prepare_splits(ds, PipelineConfig(seed=0))
    seqs, labels = labelled(clsa, data.subset("train"))
    val = labelled(clsa, data.subset("val"))
    straight = model_store.load(tmp_path / "clsa.taec")
    straight.sync_embedding()
    clsa_train((seqs, labels), val, straight, epochs=4, seed=5)
    paused = model_store.load(tmp_path / "clsa.taec")
    paused.sync_embedding()
    st = ClsaTrainState(AdamState(lr=0.001))
    clsa_train((seqs, labels), val, paused, epochs=4, seed=5, state=st, stop_at=2)
    model_store.save(st.to_checkpoint(paused), tmp_path / "k.taec")
    ck = model_store.load(tmp_path / "k.taec")
    clsa_train((seqs, labels), val, ck.model, epochs=4, seed=5, state=ClsaTrainState.from_checkpoint(ck))
    resumed = all(a.tobytes() == ck.model.state_arrays()[n].tobytes() for n, a in straight.state_arrays().items())

    ok = all(checks.values()) and corrupt and resumed
    record(9, ok, f"round trip {checks}, corruption detected {corrupt}, clsa resume k=2 -> n=4 bitwise {resumed}")


# 10 -----------------------------------------------------------------------

def _run_cli(root):
    data, tae, clsa = root / "data", root / "tae", root / "clsa"
    steps = [
        ["synth", "--per-class", "8", "--samples", "64", "--seed", "11", "--out", str(data)],
        ["train-tae", "--data", str(data), "--epochs", "5", "--seed", "11", "--out", str(tae)],
        ["train-clsa", "--data", str(data), "--tae", str(tae / "tae.taec"), "--epochs", "3", "--seed", "11",
         "--conv-filters", "8", "--lstm-units", "6", "--out", str(clsa)],
        ["evaluate", "--model", str(clsa / "clsa.taec"), "--data", str(data), "--json", str(root / "report.json")],
    ]
    return [main(s) for s in steps]


def test_10_determinism(tmp_path):
    rcs = [_run_cli(tmp_path / "a"), _run_cli(tmp_path / "b")]
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    kinds = {f.suffix for f in files}
    ok = rcs == [[0] * 4] * 2 and not differ and {".taec", ".csv", ".json"} <= kinds
    record(10, ok, f"{len(files)} files byte-identical across reruns (checkpoints, CSVs, JSON); differing: {differ or 'none'}")
