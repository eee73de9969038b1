"""ECG records, on-disk format, synthetic data, SMOTE balancing and splitting.

On disk a dataset is a directory holding ``records.csv``
(``record_id,label,n_samples``), one ``<record_id>.ecg`` file per record
and, optionally, ``split.csv`` (``record_id,split``).

An ``.ecg`` file is the 4 magic bytes ``ECG1``, then u32 LE channel count,
u32 LE sample count, then channels x samples float64 LE values stored
channel-major.
"""

from __future__ import annotations

import csv
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DataError,
    DegenerateClassError,
    IngestionError,
    TooFewRecordsError,
)

log = logging.getLogger(__name__)

N_CHANNELS = 12
LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
SPLITS = ("train", "val", "test")
ECG_MAGIC = b"ECG1"
_HEADER = struct.Struct("<4sII")


class ClassLabel(IntEnum):
    NORM = 0
    MI = 1
    STTC = 2
    CD = 3
    HYP = 4

    @classmethod
    def parse(cls, text: str) -> Optional["ClassLabel"]:
        text = (text or "").strip().upper()
        return cls[text] if text in cls.__members__ else None


N_CLASSES = len(ClassLabel)


@dataclass(frozen=True, eq=False)
class EcgRecord:
    """One patient's recording; ``signal`` is ``(T, 12)`` in millivolts."""

    record_id: str
    signal: np.ndarray
    label: ClassLabel
    synthetic: bool = False
    # (base_id, neighbour_id, u) for SMOTE records
    origin: Optional[tuple] = None

    def __post_init__(self):
        sig = np.asarray(self.signal, dtype=np.float64)
        if sig.ndim != 2 or sig.shape[1] != N_CHANNELS or sig.shape[0] == 0:
            raise DataError(f"record {self.record_id}: signal must be (T>0, {N_CHANNELS}), got {sig.shape}")
        if not np.all(np.isfinite(sig)):
            raise DataError(f"record {self.record_id}: non-finite samples")
        sig.flags.writeable = False
        object.__setattr__(self, "signal", sig)
        object.__setattr__(self, "label", ClassLabel(self.label))

    @property
    def n_samples(self) -> int:
        return self.signal.shape[0]


@dataclass(frozen=True)
class Dataset:
    records: tuple
    split: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise DataError(f"duplicate record id {dup!r}")
        if self.split and set(self.split) != set(ids):
            raise DataError("split assignment must cover every record exactly once")

    @property
    def n(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, name: str) -> list[EcgRecord]:
        if not self.split:
            raise DataError("dataset has no split; call split_80_10_10 first")
        return [r for r in self.records if self.split[r.record_id] == name]

    def labels(self) -> np.ndarray:
        return np.array([int(r.label) for r in self.records], dtype=np.int64)

    def class_counts(self, records: Optional[Iterable[EcgRecord]] = None) -> dict:
        recs = self.records if records is None else records
        counts = Counter(r.label for r in recs)
        return {c: counts.get(c, 0) for c in ClassLabel}


# ---------------------------------------------------------------- file format

def write_ecg(path, signal: np.ndarray) -> None:
    sig = np.asarray(signal, dtype="<f8")
    T, C = sig.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ECG_MAGIC, C, T))
        fh.write(np.ascontiguousarray(sig.T).tobytes())


def read_ecg(path) -> np.ndarray:
    """Return the ``(T, C)`` signal stored in an ``.ecg`` file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IngestionError(f"{path}: file too short for header")
    magic, C, T = _HEADER.unpack_from(raw)
    if magic != ECG_MAGIC:
        raise IngestionError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * C * T
    if len(raw) != expected:
        raise IngestionError(f"{path}: expected {expected} bytes for {C}x{T}, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(C, T)
    return values.T.astype(np.float64)


def save_dataset(ds: Dataset, dir_path) -> None:
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "label", "n_samples"])
        for r in ds.records:
            w.writerow([r.record_id, r.label.name, r.n_samples])
    for r in ds.records:
        write_ecg(out / f"{r.record_id}.ecg", r.signal)
    if ds.split:
        with open(out / "split.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record_id", "split"])
            for r in ds.records:
                w.writerow([r.record_id, ds.split[r.record_id]])


def load_dataset(dir_path) -> Dataset:
    """Read a dataset directory.

    Rows without a valid class label are skipped, as are records whose
    signal file is missing, malformed, not 12-channel or disagrees with
    ``n_samples``. ``Dataset.skipped`` maps each reason to record ids.
    """
    root = Path(dir_path)
    index = root / "records.csv"
    if not index.is_file():
        raise IngestionError(f"{root}: no records.csv index")
    skipped: dict[str, list] = {"unlabeled": [], "rejected": []}
    records = []
    with open(index, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"record_id", "label", "n_samples"} <= set(reader.fieldnames):
            raise IngestionError(f"{index}: header must be record_id,label,n_samples")
        for row in reader:
            rid = row["record_id"].strip()
            label = ClassLabel.parse(row["label"])
            if label is None:
                skipped["unlabeled"].append(rid)
                continue
            try:
                sig = read_ecg(root / f"{rid}.ecg")
                if sig.shape[1] != N_CHANNELS or sig.shape[0] != int(row["n_samples"]):
                    raise IngestionError(
                        f"{rid}: shape {sig.shape} disagrees with n_samples={row['n_samples']} x {N_CHANNELS}"
                    )
                records.append(EcgRecord(rid, sig, label))
            except (OSError, ValueError, DataError) as exc:
                log.warning("rejecting record %s: %s", rid, exc)
                skipped["rejected"].append(rid)
    if skipped["unlabeled"] or skipped["rejected"]:
        log.info("skipped %d unlabeled and %d rejected records", len(skipped["unlabeled"]), len(skipped["rejected"]))

    split = {}
    split_file = root / "split.csv"
    if split_file.is_file():
        kept = {r.record_id for r in records}
        with open(split_file, newline="") as fh:
            split = {row["record_id"]: row["split"] for row in csv.DictReader(fh) if row["record_id"] in kept}
        if set(split) != kept:
            log.warning("split.csv does not cover every record; ignoring it")
            split = {}
    return Dataset(tuple(records), split, {k: v for k, v in skipped.items() if v})


# ---------------------------------------------------------------- synthetic data

# cycles per sample and spike spacing (samples), one entry per class
SYNTH_FREQS = (0.02, 0.035, 0.05, 0.065, 0.08)
SYNTH_SPIKE_INTERVALS = (40, 31, 24, 18, 13)
SYNTH_NOISE = 0.05


def synthetic_signal(label: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """Sinusoid plus periodic spikes; the 12 leads are phase-shifted copies."""
    t = np.arange(T)
    freq = SYNTH_FREQS[label]
    interval = SYNTH_SPIKE_INTERVALS[label]
    amp = rng.uniform(0.8, 1.2)
    phase = rng.uniform(0, 2 * np.pi)
    lead_shift = 2 * np.pi * np.arange(N_CHANNELS) / N_CHANNELS
    sig = amp * np.sin(2 * np.pi * freq * t[:, None] + phase + lead_shift[None, :])
    spikes = np.zeros(T)
    spikes[rng.integers(interval)::interval] = 1.0
    sig = sig + spikes[:, None]
    return sig + rng.normal(0.0, SYNTH_NOISE, size=sig.shape)


def generate_synthetic(n_per_class: int, T: int, seed: int) -> Dataset:
    if n_per_class < 1:
        raise DataError(f"n_per_class must be >= 1, got {n_per_class}")
    if T < 16:
        raise DataError(f"T must be >= 16, got {T}")
    rng = np.random.default_rng(seed)
    records = []
    for label in ClassLabel:
        for i in range(n_per_class):
            sig = synthetic_signal(int(label), T, rng)
            records.append(EcgRecord(f"syn{label.name}{i:05d}", sig, label))
    return Dataset(tuple(records))


# ---------------------------------------------------------------- SMOTE

def smote_plan(counts: dict) -> dict:
    """Synthetic records needed per class to reach the majority count."""
    present = {c: n for c, n in counts.items() if n > 0}
    if not present:
        return {}
    target = max(present.values())
    return {c: target - n for c, n in present.items()}


def _neighbours(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other rows of X (Euclidean), ties by index."""
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_balance(ds: Dataset, k: int = 5, seed: int = 0) -> Dataset:
    """Oversample every minority class up to the majority count.

    Only the train split is used when the dataset has one; otherwise all
    records. New records are ``x + u * (nn - x)`` for a random base ``x``,
    one of its ``k`` nearest same-class neighbours ``nn`` on the flattened
    signal and ``u ~ U[0, 1]``. Classes absent from the pool are left out.
    """
    pool = ds.subset("train") if ds.split else list(ds.records)
    by_class: dict = {c: [r for r in pool if r.label == c] for c in ClassLabel}
    plan = smote_plan({c: len(v) for c, v in by_class.items()})
    lengths = {r.n_samples for r in pool}
    if any(plan.values()) and len(lengths) > 1:
        raise DataError(f"smote_balance needs equal-length records, found lengths {sorted(lengths)}")

    rng = np.random.default_rng(seed)
    new = []
    for cls in ClassLabel:
        need = plan.get(cls, 0)
        if need == 0:
            continue
        members = by_class[cls]
        if len(members) < 2:
            raise DegenerateClassError(f"class {cls.name} has {len(members)} member(s); SMOTE needs at least 2")
        X = np.stack([r.signal.reshape(-1) for r in members])
        nn = _neighbours(X, min(k, len(members) - 1))
        for j in range(need):
            base = int(rng.integers(len(members)))
            other = int(nn[base, rng.integers(nn.shape[1])])
            u = float(rng.random())
            a, b = members[base], members[other]
            sig = a.signal + u * (b.signal - a.signal)
            new.append(EcgRecord(f"smote{cls.name}{j:06d}", sig, cls, True, (a.record_id, b.record_id, u)))

    split = dict(ds.split)
    if split:
        split.update({r.record_id: "train" for r in new})
    return Dataset(ds.records + tuple(new), split, ds.skipped)


# ---------------------------------------------------------------- splitting

def split_80_10_10(ds: Dataset, seed: int = 0, synthetic_to_train: bool = True) -> Dataset:
    """Stratified 80/10/10 assignment, deterministic per seed.

    Synthetic records always land in train unless ``synthetic_to_train``
    is False, which mimics balancing before splitting.
    """
    if ds.n < 10:
        raise TooFewRecordsError(f"need at least 10 records to split, got {ds.n}")
    rng = np.random.default_rng(seed)
    split = {}
    for cls in ClassLabel:
        members = [r.record_id for r in ds.records if r.label == cls and (not r.synthetic or not synthetic_to_train)]
        order = rng.permutation(len(members))
        n = len(members)
        n_val = int(round(0.1 * n))
        n_test = int(round(0.1 * n))
        for pos, idx in enumerate(order):
            rid = members[idx]
            split[rid] = "val" if pos < n_val else "test" if pos < n_val + n_test else "train"
    for r in ds.records:
        split.setdefault(r.record_id, "train")
    return Dataset(ds.records, split, ds.skipped)


def split_counts(ds: Dataset) -> dict:
    return {s: sum(1 for v in ds.split.values() if v == s) for s in SPLITS}
