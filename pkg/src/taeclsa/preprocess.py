"""Windowing into context/target pairs, vocabulary building and tokenisation.

A record of ``T`` timesteps is zero-padded by ``(window - 1) // 2`` on
both ends and cut into one window per timestep. The middle column of a
window is the target; the remaining columns (left half then right half)
form the context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import N_CHANNELS, Dataset, EcgRecord
from .errors import DataError, InvalidWindowError, VocabularyError

DEFAULT_WINDOW = 9
DEFAULT_Q = 1e-6


def _check_window(window: int) -> int:
    if window < 3 or window % 2 == 0:
        raise InvalidWindowError(f"window must be odd and >= 3, got {window}")
    return (window - 1) // 2


def pad_record(rec: EcgRecord, pad: int = 4) -> np.ndarray:
    """``(T + 2*pad, 12)`` copy of the signal with zero rows on both ends."""
    return np.pad(rec.signal, ((pad, pad), (0, 0)))


@dataclass(frozen=True)
class Frame:
    window: np.ndarray
    center_index: int


@dataclass(frozen=True)
class ContextTargetPair:
    context_raw: np.ndarray  # (window - 1, 12)
    context_12: np.ndarray   # (12,)
    target: np.ndarray       # (12,)


@dataclass(frozen=True)
class Pairs:
    """All context/target pairs of one or more records, stored as arrays.

    ``context_raw`` is ``(N, window - 1, 12)``; ``context_12`` and
    ``target`` are ``(N, 12)``.
    """

    context_raw: np.ndarray
    context_12: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return self.target.shape[0]

    def __getitem__(self, i: int) -> ContextTargetPair:
        return ContextTargetPair(self.context_raw[i], self.context_12[i], self.target[i])

    def __iter__(self) -> Iterator[ContextTargetPair]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def concat(cls, parts: Sequence["Pairs"]) -> "Pairs":
        if not parts:
            raise DataError("no pairs to concatenate")
        return cls(
            np.concatenate([p.context_raw for p in parts]),
            np.concatenate([p.context_12 for p in parts]),
            np.concatenate([p.target for p in parts]),
        )


def frames(rec: EcgRecord, window: int = DEFAULT_WINDOW) -> list[Frame]:
    pad = _check_window(window)
    padded = pad_record(rec, pad)
    return [Frame(padded[t: t + window], t) for t in range(rec.n_samples)]


def make_pairs(rec: EcgRecord, window: int = DEFAULT_WINDOW) -> Pairs:
    """One pair per timestep; pair ``t`` targets sample ``t``."""
    pad = _check_window(window)
    padded = pad_record(rec, pad)
    # (T, 12, window) -> (T, window, 12)
    win = sliding_window_view(padded, window, axis=0)[: rec.n_samples].transpose(0, 2, 1)
    context = np.concatenate([win[:, :pad], win[:, pad + 1:]], axis=1)
    return Pairs(context.copy(), context.mean(axis=1), win[:, pad].copy())


def make_pairs_corpus(records: Iterable[EcgRecord], window: int = DEFAULT_WINDOW) -> Pairs:
    return Pairs.concat([make_pairs(r, window) for r in records])


# ---------------------------------------------------------------- vocabulary

class Vocabulary:
    """Unique quantised 12-channel instants mapped to dense ids.

    Ids follow first-occurrence order. A stored entry is the integer
    grid point times ``q``, so ``lookup`` returns exactly what
    quantising the original instant produces.
    """

    def __init__(self, q: float = DEFAULT_Q, channels: int = N_CHANNELS):
        if q <= 0:
            raise ValueError(f"quantisation step must be positive, got {q}")
        self.q = float(q)
        self.channels = channels
        self._index: dict[bytes, int] = {}
        self._keys: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._keys)

    def quantize_keys(self, vectors: np.ndarray) -> np.ndarray:
        v = np.asarray(vectors, dtype=np.float64)
        if v.shape[-1] != self.channels:
            raise DataError(f"expected {self.channels}-channel instants, got shape {v.shape}")
        return np.round(v / self.q).astype(np.int64)

    def quantize(self, vectors: np.ndarray) -> np.ndarray:
        return self.quantize_keys(vectors) * self.q

    def ids_for(self, vectors: np.ndarray, grow: bool = True) -> np.ndarray:
        keys = self.quantize_keys(vectors)
        ids = np.empty(len(keys), dtype=np.int64)
        for t, key in enumerate(keys):
            k = key.tobytes()
            idx = self._index.get(k)
            if idx is None:
                if not grow:
                    raise VocabularyError(f"instant {t} is not in the vocabulary (closed mode)")
                idx = len(self._keys)
                self._index[k] = idx
                self._keys.append(key)
                self._matrix = None
            ids[t] = idx
        return ids

    def lookup(self, idx) -> np.ndarray:
        """Stored vector(s) for one id or an array of ids."""
        ids = np.asarray(idx)
        if np.any(ids < 0) or np.any(ids >= len(self)):
            raise VocabularyError(f"token id out of range for vocabulary of size {len(self)}")
        return self.key_matrix()[ids] * self.q

    def key_matrix(self) -> np.ndarray:
        if self._matrix is None:
            if not self._keys:
                return np.zeros((0, self.channels), dtype=np.int64)
            self._matrix = np.stack(self._keys)
        return self._matrix

    def vectors(self) -> np.ndarray:
        return self.key_matrix() * self.q

    def copy(self) -> "Vocabulary":
        return Vocabulary.from_keys(self.key_matrix(), self.q)

    @classmethod
    def from_keys(cls, keys: np.ndarray, q: float) -> "Vocabulary":
        keys = np.asarray(keys, dtype=np.int64)
        vocab = cls(q, keys.shape[1] if keys.ndim == 2 else N_CHANNELS)
        for key in keys:
            vocab._index[key.tobytes()] = len(vocab._keys)
            vocab._keys.append(key.copy())
        if len(vocab._index) != len(vocab._keys):
            raise DataError("duplicate vocabulary entries")
        return vocab

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)}, q={self.q})"


@dataclass(frozen=True)
class TokenSequence:
    record_id: str
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _records(source) -> Iterator[EcgRecord]:
    if isinstance(source, EcgRecord):
        yield source
    elif isinstance(source, Dataset):
        yield from source.records
    else:
        for item in source:
            yield from _records(item)


def build_vocabulary(datasets, q: float = DEFAULT_Q) -> Vocabulary:
    """Vocabulary over every instant of the given records or datasets."""
    vocab = Vocabulary(q)
    n = 0
    for rec in _records(datasets):
        vocab.ids_for(rec.signal, grow=True)
        n += 1
    if n == 0:
        raise DataError("build_vocabulary needs at least one record")
    return vocab


def tokenize(rec: EcgRecord, vocab: Vocabulary, open_vocab: bool = True) -> TokenSequence:
    """Token ids for every instant; unseen instants extend ``vocab`` in open mode."""
    try:
        ids = vocab.ids_for(rec.signal, grow=open_vocab)
    except VocabularyError as exc:
        raise VocabularyError(f"record {rec.record_id}: {exc}") from None
    return TokenSequence(rec.record_id, ids)
