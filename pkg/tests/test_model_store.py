import os
import struct

import numpy as np
import pytest

from taeclsa import model_store
from taeclsa.dataset import generate_synthetic
from taeclsa.errors import BadMagicError, ChecksumError, StoreError, TruncatedError, VersionError
from taeclsa.model_store import Checkpoint, Container, container_bytes, parse_container
from taeclsa.preprocess import build_vocabulary, make_pairs_corpus, tokenize
from taeclsa.tae import tae_init
from taeclsa.tensor_engine import AdamState


def _container():
    return Container("tae", {"a": 1}, {"w": np.arange(6.0).reshape(2, 3), "ids": np.arange(4)})


def test_round_trip_bytes():
    raw = container_bytes(_container())
    c = parse_container(raw)
    assert c.kind == "tae" and c.config == {"a": 1}
    assert c.arrays["w"].tobytes() == np.arange(6.0).reshape(2, 3).tobytes()
    assert c.arrays["ids"].dtype == np.int64
    assert raw[:4] == b"TAEC" and struct.unpack_from("<H", raw, 4)[0] == 1


def test_save_twice_identical_bytes(tmp_path):
    m = tae_init(seed=3)
    c1 = model_store.save(m, tmp_path / "a.taec")
    c2 = model_store.save(m, tmp_path / "b.taec")
    assert c1 == c2
    assert (tmp_path / "a.taec").read_bytes() == (tmp_path / "b.taec").read_bytes()


def test_corrupt_payload_names_entry(tmp_path):
    p = tmp_path / "m.taec"
    model_store.save(tae_init(seed=0), p)
    raw = bytearray(p.read_bytes())
    raw[-3] ^= 0xFF  # last entry in sorted order
    p.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError, match="scale.out_span"):
        model_store.load(p)


def test_corrupt_manifest(tmp_path):
    raw = bytearray(container_bytes(_container()))
    raw[20] ^= 0x01
    with pytest.raises(ChecksumError):
        parse_container(bytes(raw))


def test_bad_magic_and_version():
    raw = container_bytes(_container())
    with pytest.raises(BadMagicError):
        parse_container(b"XXXX" + raw[4:])
    with pytest.raises(VersionError):
        parse_container(raw[:4] + struct.pack("<H", 9) + raw[6:])


@pytest.mark.parametrize("cut", [3, 20, -1])
def test_truncated(cut):
    raw = container_bytes(_container())
    with pytest.raises(TruncatedError):
        parse_container(raw[:cut])


def test_unknown_kind_and_type(tmp_path):
    with pytest.raises(StoreError):
        model_store.from_container(Container("nope", {}, {}))
    with pytest.raises(StoreError):
        model_store.save(object(), tmp_path / "x")


def test_io_error_has_path(tmp_path):
    with pytest.raises(StoreError, match="missing.taec"):
        model_store.load(tmp_path / "missing.taec")


def test_failed_write_leaves_no_file(tmp_path, monkeypatch):
    target = tmp_path / "m.taec"

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "fsync", boom)
    with pytest.raises(StoreError):
        model_store.save(tae_init(), target)
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []


def test_vocab_pairs_tokens_round_trip(tmp_path):
    ds = generate_synthetic(1, 16, seed=0)
    vocab = build_vocabulary(ds)
    model_store.save(vocab, tmp_path / "v")
    back = model_store.load(tmp_path / "v")
    assert back.key_matrix().tobytes() == vocab.key_matrix().tobytes() and back.q == vocab.q

    pairs = make_pairs_corpus(ds.records)
    model_store.save(pairs, tmp_path / "p")
    pb = model_store.load(tmp_path / "p")
    assert pb.context_raw.tobytes() == pairs.context_raw.tobytes()

    seqs = [tokenize(r, vocab) for r in ds.records]
    model_store.save(seqs, tmp_path / "t")
    sb = model_store.load(tmp_path / "t")
    assert [s.record_id for s in sb] == [s.record_id for s in seqs]
    assert all(a.ids.tobytes() == b.ids.tobytes() for a, b in zip(seqs, sb))


def test_checkpoint_with_optimizer(tmp_path):
    st = AdamState(lr=0.01, t=7, m={"x": np.ones(3)}, v={"x": np.full(3, 2.0)})
    model_store.save(Checkpoint(tae_init(), st, 4, {"note": "k"}, {"best": np.zeros(2)}), tmp_path / "c")
    ck = model_store.load(tmp_path / "c")
    assert ck.epoch == 4 and ck.extra == {"note": "k"}
    assert ck.optimizer.t == 7 and ck.optimizer.lr == 0.01
    assert ck.optimizer.v["x"].tobytes() == st.v["x"].tobytes()
    assert ck.extra_arrays["best"].shape == (2,)


def test_meta_stored(tmp_path):
    model_store.save(tae_init(), tmp_path / "m", meta={"effective_config": {"seed": 4}})
    assert model_store.read_container(tmp_path / "m").meta["effective_config"] == {"seed": 4}
