import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taeclsa.dataset import ClassLabel, EcgRecord, generate_synthetic
from taeclsa.errors import DataError, InvalidWindowError, VocabularyError
from taeclsa.preprocess import (
    Pairs,
    Vocabulary,
    build_vocabulary,
    frames,
    make_pairs,
    make_pairs_corpus,
    pad_record,
    tokenize,
)


def _rec(T=20, seed=0, rid="r"):
    return EcgRecord(rid, np.random.default_rng(seed).normal(size=(T, 12)), ClassLabel.NORM)


def _naive_pairs(sig, window):
    # independent loop oracle
    pad = (window - 1) // 2
    T = len(sig)
    padded = np.zeros((T + 2 * pad, 12))
    padded[pad: pad + T] = sig
    ctx, tgt = [], []
    for t in range(T):
        w = padded[t: t + window]
        ctx.append(np.vstack([w[:pad], w[pad + 1:]]))
        tgt.append(w[pad])
    return np.array(ctx), np.array(tgt)


def test_pad_record_shape():
    p = pad_record(_rec(10), 4)
    assert p.shape == (18, 12)
    assert not p[:4].any() and not p[-4:].any()


@pytest.mark.parametrize("window", [3, 5, 9, 11])
def test_make_pairs_matches_loop(window):
    rec = _rec(17, seed=window)
    pairs = make_pairs(rec, window)
    ctx, tgt = _naive_pairs(rec.signal, window)
    assert len(pairs) == 17
    assert pairs.context_raw.shape == (17, window - 1, 12)
    npt.assert_array_equal(pairs.context_raw, ctx)
    npt.assert_array_equal(pairs.target, tgt)
    npt.assert_allclose(pairs.context_12, ctx.mean(axis=1), rtol=0, atol=1e-15)


def test_first_pair_context_is_half_padding():
    pairs = make_pairs(_rec(12), 9)
    assert not pairs.context_raw[0, :4].any()
    npt.assert_array_equal(pairs.target[0], _rec(12).signal[0])


@pytest.mark.parametrize("window", [0, 1, 2, 8, -3])
def test_bad_window(window):
    with pytest.raises(InvalidWindowError):
        make_pairs(_rec(), window)


def test_frames_centers():
    fr = frames(_rec(6), 5)
    assert [f.center_index for f in fr] == list(range(6))
    assert fr[0].window.shape == (5, 12)


def test_pairs_concat_and_iter():
    p = make_pairs_corpus([_rec(5, 0, "a"), _rec(7, 1, "b")], 3)
    assert len(p) == 12
    assert len(list(p)) == 12
    with pytest.raises(DataError):
        Pairs.concat([])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.sampled_from([3, 5, 7, 9, 11]), st.integers(0, 10_000))
def test_target_reassembly_is_bit_exact(T, window, seed):
    rec = _rec(T, seed)
    assert make_pairs(rec, window).target.tobytes() == rec.signal.tobytes()


def test_vocabulary_first_occurrence_ids():
    v = Vocabulary(q=0.5)
    x = np.array([[1.0] * 12, [2.0] * 12, [1.1] * 12, [3.0] * 12])
    npt.assert_array_equal(v.ids_for(x), [0, 1, 0, 2])
    assert len(v) == 3
    npt.assert_array_equal(v.lookup(1), [2.0] * 12)


def test_vocabulary_lookup_equals_quantised_instant():
    v = Vocabulary()
    x = np.random.default_rng(0).normal(size=(50, 12))
    ids = v.ids_for(x)
    npt.assert_array_equal(v.lookup(ids), v.quantize(x))


def test_vocabulary_closed_mode():
    v = Vocabulary()
    v.ids_for(np.zeros((1, 12)))
    with pytest.raises(VocabularyError):
        v.ids_for(np.ones((1, 12)), grow=False)
    assert len(v) == 1


def test_vocabulary_bad_lookup_and_q():
    v = Vocabulary()
    with pytest.raises(VocabularyError):
        v.lookup(0)
    with pytest.raises(ValueError):
        Vocabulary(q=0)


def test_vocabulary_copy_preserves_order():
    v = build_vocabulary(generate_synthetic(1, 16, seed=0))
    c = v.copy()
    npt.assert_array_equal(c.key_matrix(), v.key_matrix())
    rec = generate_synthetic(1, 16, seed=0).records[2]
    npt.assert_array_equal(tokenize(rec, c).ids, tokenize(rec, v).ids)


def test_tokenize_open_vs_closed():
    ds = generate_synthetic(1, 16, seed=0)
    v = build_vocabulary(ds.records[:2])
    n = len(v)
    with pytest.raises(VocabularyError, match=ds.records[3].record_id):
        tokenize(ds.records[3], v, open_vocab=False)
    seq = tokenize(ds.records[3], v, open_vocab=True)
    assert len(seq) == 16 and len(v) > n
    assert seq.ids.max() < len(v)


def test_build_vocabulary_empty():
    with pytest.raises(DataError):
        build_vocabulary([])
