"""Bit-exact binary container for models, vocabularies and cached arrays.

Layout (all integers little-endian)::

    b"TAEC"            magic
    u16                format version (1)
    u32                manifest length in bytes
    u32                CRC32 of the manifest
    manifest           UTF-8 JSON, sorted keys
    payload            entry payloads back to back

The manifest holds ``kind``, ``config``, ``meta`` and an ``entries`` list
of ``{name, shape, dtype, offset, nbytes, crc32}``; ``dtype`` is ``"<f8"``
or ``"<i8"``. Offsets are relative to the start of the payload.
"""

from __future__ import annotations

import importlib
import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import BadMagicError, ChecksumError, StoreError, TruncatedError, VersionError
from .tensor_engine import AdamState

MAGIC = b"TAEC"
VERSION = 1
_HEAD = struct.Struct("<4sHII")
_DTYPES = {"<f8": np.float64, "<i8": np.int64}


@dataclass
class Container:
    kind: str
    config: dict
    arrays: dict
    meta: dict = field(default_factory=dict)
    version: int = VERSION


def _encode_array(a: np.ndarray) -> tuple[str, bytes]:
    a = np.asarray(a)
    if np.issubdtype(a.dtype, np.integer) or a.dtype == bool:
        dtype = "<i8"
    elif np.issubdtype(a.dtype, np.floating):
        dtype = "<f8"
    else:
        raise StoreError(f"cannot store arrays of dtype {a.dtype}")
    return dtype, np.ascontiguousarray(a, dtype=dtype).tobytes()


def container_bytes(c: Container) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(c.arrays):
        arr = np.asarray(c.arrays[name])
        dtype, payload = _encode_array(arr)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype,
            "offset": offset,
            "nbytes": len(payload),
            "crc32": zlib.crc32(payload),
        })
        chunks.append(payload)
        offset += len(payload)
    manifest = {
        "kind": c.kind,
        "config": c.config,
        "meta": c.meta,
        "entries": entries,
        "payload_bytes": offset,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=True).encode()
    return _HEAD.pack(MAGIC, VERSION, len(mbytes), zlib.crc32(mbytes)) + mbytes + b"".join(chunks)


def parse_container(raw: bytes, source: str = "<bytes>") -> Container:
    if len(raw) < _HEAD.size:
        raise TruncatedError(f"{source}: {len(raw)} bytes is too short for a container header")
    magic, version, mlen, mcrc = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"{source}: unsupported container version {version}")
    start = _HEAD.size + mlen
    if len(raw) < start:
        raise TruncatedError(f"{source}: truncated manifest")
    mbytes = raw[_HEAD.size:start]
    if zlib.crc32(mbytes) != mcrc:
        raise ChecksumError(f"{source}: manifest CRC mismatch")
    manifest = json.loads(mbytes)
    if len(raw) != start + manifest["payload_bytes"]:
        raise TruncatedError(
            f"{source}: expected {start + manifest['payload_bytes']} bytes, found {len(raw)}"
        )
    arrays = {}
    for e in manifest["entries"]:
        lo = start + e["offset"]
        payload = raw[lo: lo + e["nbytes"]]
        if zlib.crc32(payload) != e["crc32"]:
            raise ChecksumError(f"{source}: CRC mismatch in entry {e['name']!r}")
        dtype = np.dtype(e["dtype"])
        if e["nbytes"] != dtype.itemsize * int(np.prod(e["shape"], dtype=np.int64)):
            raise StoreError(f"{source}: entry {e['name']!r} size does not match shape {e['shape']}")
        arrays[e["name"]] = np.frombuffer(payload, dtype=dtype).reshape(e["shape"]).astype(_DTYPES[e["dtype"]])
    return Container(manifest["kind"], manifest["config"], arrays, manifest.get("meta", {}), version)


def write_container(path, c: Container) -> int:
    """Atomically write ``c`` to ``path``; returns the CRC32 of the file."""
    data = container_bytes(c)
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise StoreError(f"cannot write {target}: {exc}") from exc
    return zlib.crc32(data)


def read_container(path) -> Container:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StoreError(f"cannot read {path}: {exc}") from exc
    return parse_container(raw, str(path))


# ---------------------------------------------------------------- object codecs

def prefixed(arrays: dict, prefix: str) -> dict:
    return {f"{prefix}{k}": v for k, v in arrays.items()}


def unprefixed(arrays: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in arrays.items() if k.startswith(prefix)}


def encode_adam(state: AdamState) -> tuple[dict, dict]:
    config = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps, "t": state.t}
    arrays = {**prefixed(state.m, "m."), **prefixed(state.v, "v.")}
    return config, arrays


def decode_adam(config: dict, arrays: dict) -> AdamState:
    return AdamState(
        config["lr"], config["beta1"], config["beta2"], config["eps"], config["t"],
        unprefixed(arrays, "m."), unprefixed(arrays, "v."),
    )


# kind -> "module:Class"; classes implement to_container() / from_container()
_CLASSES = {
    "tae": "taeclsa.tae:TaeModel",
    "clsa": "taeclsa.clsa:ClsaModel",
    "vocabulary": "taeclsa.model_store:_VocabCodec",
    "pairs": "taeclsa.model_store:_PairsCodec",
    "tokens": "taeclsa.model_store:_TokensCodec",
    "checkpoint": "taeclsa.model_store:Checkpoint",
}


def _resolve(kind: str):
    try:
        module, name = _CLASSES[kind].split(":")
    except KeyError:
        raise StoreError(f"unknown container kind {kind!r}") from None
    return getattr(importlib.import_module(module), name)


def to_container(obj) -> Container:
    from .preprocess import Pairs, TokenSequence, Vocabulary

    if isinstance(obj, Vocabulary):
        return _VocabCodec.encode(obj)
    if isinstance(obj, Pairs):
        return _PairsCodec.encode(obj)
    if isinstance(obj, (list, tuple)) and obj and all(isinstance(s, TokenSequence) for s in obj):
        return _TokensCodec.encode(list(obj))
    if hasattr(obj, "to_container"):
        return obj.to_container()
    raise StoreError(f"don't know how to store {type(obj).__name__}")


def from_container(c: Container) -> Any:
    cls = _resolve(c.kind)
    return cls.from_container(c)


def save(obj, path, meta: Optional[dict] = None) -> int:
    """Serialise a model or artifact; returns the container checksum."""
    c = to_container(obj)
    if meta:
        c.meta = {**c.meta, **meta}
    return write_container(path, c)


def load(path) -> Any:
    return from_container(read_container(path))


class _VocabCodec:
    @staticmethod
    def encode(vocab) -> Container:
        return Container("vocabulary", {"q": vocab.q, "channels": vocab.channels}, {"keys": vocab.key_matrix()})

    @staticmethod
    def from_container(c: Container):
        from .preprocess import Vocabulary

        keys = c.arrays["keys"]
        if keys.size == 0:
            return Vocabulary(c.config["q"], c.config["channels"])
        return Vocabulary.from_keys(keys, c.config["q"])


class _PairsCodec:
    @staticmethod
    def encode(pairs) -> Container:
        return Container("pairs", {}, {
            "context_raw": pairs.context_raw, "context_12": pairs.context_12, "target": pairs.target,
        })

    @staticmethod
    def from_container(c: Container):
        from .preprocess import Pairs

        a = c.arrays
        return Pairs(a["context_raw"], a["context_12"], a["target"])


class _TokensCodec:
    @staticmethod
    def encode(seqs) -> Container:
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        ids = np.concatenate([s.ids for s in seqs]).astype(np.int64)
        return Container("tokens", {"record_ids": [s.record_id for s in seqs]}, {"lengths": lengths, "ids": ids})

    @staticmethod
    def from_container(c: Container):
        from .preprocess import TokenSequence

        bounds = np.concatenate([[0], np.cumsum(c.arrays["lengths"])])
        return [
            TokenSequence(rid, c.arrays["ids"][bounds[i]: bounds[i + 1]].copy())
            for i, rid in enumerate(c.config["record_ids"])
        ]


@dataclass
class Checkpoint:
    """A model together with optimizer state and training progress."""

    model: Any
    optimizer: Optional[AdamState] = None
    epoch: int = 0
    extra: dict = field(default_factory=dict)
    extra_arrays: dict = field(default_factory=dict)

    def to_container(self) -> Container:
        inner = to_container(self.model)
        config = {
            "model_kind": inner.kind,
            "model_config": inner.config,
            "model_meta": inner.meta,
            "epoch": self.epoch,
            "extra": self.extra,
        }
        arrays = {**prefixed(inner.arrays, "model."), **prefixed(self.extra_arrays, "extra.")}
        if self.optimizer is not None:
            aconf, aarr = encode_adam(self.optimizer)
            config["adam"] = aconf
            arrays.update(prefixed(aarr, "adam."))
        return Container("checkpoint", config, arrays)

    @classmethod
    def from_container(cls, c: Container) -> "Checkpoint":
        cfg = c.config
        inner = Container(cfg["model_kind"], cfg["model_config"], unprefixed(c.arrays, "model."), cfg["model_meta"])
        opt = decode_adam(cfg["adam"], unprefixed(c.arrays, "adam.")) if "adam" in cfg else None
        return cls(from_container(inner), opt, cfg["epoch"], cfg["extra"], unprefixed(c.arrays, "extra."))
