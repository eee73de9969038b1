"""CNN-LSTM-self-attention classifier over embedded token sequences.

Forward pipeline::

    embedding -> conv1d(k=3) + ReLU -> batchnorm -> maxpool(2) -> dropout
    -> LSTM -> self-attention -> temporal pooling -> dense(64, ReLU)
    -> dense(32, ReLU) -> dense(5) -> softmax

The embedding rows are latent codes of vocabulary entries produced by a
trained temporal autoencoder, frozen unless fine-tuning is requested.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import model_store
from .errors import ConfigError, DataError, DimensionError, SequenceTooShortError, VocabularyError
from .preprocess import TokenSequence, Vocabulary, tokenize
from .tae import TaeModel, glorot_uniform, tae_encode
from .tensor_engine import (
    AdamState,
    BatchNormStats,
    ParamSet,
    Tape,
    Tensor,
    activation,
    adam_step,
    add,
    backward,
    batchnorm1d,
    binary_cross_entropy,
    conv1d,
    cross_entropy,
    dense,
    dropout,
    embedding_lookup,
    last_time,
    lstm_forward,
    max_time,
    maxpool1d,
    mean_time,
    scale,
    self_attention,
    sigmoid,
    sum_squares,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClsaConfig:
    embed_dim: int = 6
    conv_filters: int = 512
    kernel_size: int = 3
    pool: int = 2
    dropout: float = 0.2
    lstm_units: int = 256
    # coefficient on the squared L2 norm of the LSTM input kernel
    l2: float = 0.2
    dense_units: tuple = (64, 32)
    n_classes: int = 5
    attention: str = "raw"       # "raw" or "projected"
    pooling: str = "mean"        # "mean", "last" or "max"
    output: str = "softmax"      # "softmax" or "sigmoid"
    finetune_embedding: bool = False
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "dense_units", tuple(self.dense_units))
        checks = [
            (self.attention in ("raw", "projected"), f"attention must be raw|projected, got {self.attention!r}"),
            (self.pooling in ("mean", "last", "max"), f"pooling must be mean|last|max, got {self.pooling!r}"),
            (self.output in ("softmax", "sigmoid"), f"output must be softmax|sigmoid, got {self.output!r}"),
            (min(self.embed_dim, self.conv_filters, self.kernel_size, self.pool, self.lstm_units) >= 1,
             "layer widths must be positive"),
            (self.n_classes >= 2, "need at least 2 classes"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def min_length(self) -> int:
        return max(8, self.kernel_size + self.pool - 1)


def param_layout(config: ClsaConfig, vocab_size: int) -> dict:
    """Parameter count per layer, computed from the configuration alone.

    ``batchnorm_stats`` are the non-trainable running mean and variance.
    """
    C, K, F, H = config.embed_dim, config.kernel_size, config.conv_filters, config.lstm_units
    layout = {
        "embedding": vocab_size * C,
        "conv": K * C * F + F,
        "batchnorm": 2 * F,
        "batchnorm_stats": 2 * F,
        "lstm": 4 * (H * (F + H) + H),
    }
    if config.attention == "projected":
        layout["attention"] = 3 * H * H
    width = H
    for i, u in enumerate(config.dense_units, 1):
        layout[f"dense{i}"] = width * u + u
        width = u
    layout["output"] = width * config.n_classes + config.n_classes
    return layout


@dataclass
class Prediction:
    probabilities: np.ndarray
    label: int
    attention: Optional[np.ndarray] = None


class ClsaModel:
    def __init__(self, config: ClsaConfig, params: ParamSet, bn: BatchNormStats,
                 vocab: Optional[Vocabulary] = None, encoder: Optional[TaeModel] = None, seed=None):
        self.config = config
        self.params = params
        self.bn = bn
        self.vocab = vocab
        self.encoder = encoder
        self.seed = seed

    @property
    def embedding(self) -> np.ndarray:
        return self.params["embedding"].data

    def param_counts(self) -> dict:
        counts: dict = {}
        for name, p in self.params.items():
            layer = {"conv": "conv", "bn": "batchnorm", "lstm": "lstm", "attn": "attention"}.get(
                name.split(".")[0], name.split(".")[0])
            counts[layer] = counts.get(layer, 0) + p.size
        counts["batchnorm_stats"] = self.bn.mean.size + self.bn.var.size
        return counts

    def param_count(self) -> int:
        return sum(self.param_counts().values())

    # open vocabulary -------------------------------------------------------
    def embed_vectors(self, vectors: np.ndarray) -> np.ndarray:
        """Embedding rows for raw 12-channel instants."""
        if self.encoder is not None:
            return tae_encode(self.encoder, vectors)
        if vectors.shape[1] != self.config.embed_dim:
            raise DimensionError(f"no encoder and instants are {vectors.shape[1]}-wide, embedding is {self.config.embed_dim}")
        return vectors

    def sync_embedding(self) -> int:
        """Append rows for vocabulary entries added since the last sync."""
        if self.vocab is None:
            return 0
        E = self.params["embedding"]
        have = E.shape[0]
        if len(self.vocab) <= have:
            return 0
        new = self.embed_vectors(self.vocab.lookup(np.arange(have, len(self.vocab))))
        E.data = np.vstack([E.data, new])
        return len(new)

    def tokenize(self, rec, open_vocab: bool = True) -> TokenSequence:
        if self.vocab is None:
            raise VocabularyError("model carries no vocabulary")
        seq = tokenize(rec, self.vocab, open_vocab)
        self.sync_embedding()
        return seq

    # storage -----------------------------------------------------------------
    def state_arrays(self) -> dict:
        return {**{k: a.copy() for k, a in self.params.arrays().items()},
                "bn.running_mean": self.bn.mean.copy(), "bn.running_var": self.bn.var.copy()}

    def load_state(self, arrays: dict) -> None:
        self.params.load_arrays(arrays)
        self.bn.mean = arrays["bn.running_mean"].copy()
        self.bn.var = arrays["bn.running_var"].copy()

    def to_container(self) -> model_store.Container:
        cfg = asdict(self.config)
        cfg["dense_units"] = list(cfg["dense_units"])
        config = {"clsa": cfg, "seed": self.seed, "vocab_q": None, "encoder": None}
        arrays = model_store.prefixed(self.state_arrays(), "state.")
        if self.vocab is not None:
            config["vocab_q"] = self.vocab.q
            arrays["vocab.keys"] = self.vocab.key_matrix()
        if self.encoder is not None:
            enc = self.encoder.to_container()
            config["encoder"] = enc.config
            arrays.update(model_store.prefixed(enc.arrays, "encoder."))
        return model_store.Container("clsa", config, arrays)

    @classmethod
    def from_container(cls, c: model_store.Container) -> "ClsaModel":
        cfg = c.config
        config = ClsaConfig(**cfg["clsa"])
        state = model_store.unprefixed(c.arrays, "state.")
        encoder = None
        if cfg["encoder"] is not None:
            encoder = TaeModel.from_container(
                model_store.Container("tae", cfg["encoder"], model_store.unprefixed(c.arrays, "encoder.")))
        vocab = None
        if cfg["vocab_q"] is not None:
            vocab = Vocabulary.from_keys(c.arrays["vocab.keys"], cfg["vocab_q"])
        model = clsa_init(state["embedding"], config, seed=0, vocab=vocab, encoder=encoder)
        model.load_state(state)
        model.seed = cfg["seed"]
        return model


def clsa_init(embedding, config: Optional[ClsaConfig] = None, seed: int = 0,
              vocab: Optional[Vocabulary] = None, encoder: Optional[TaeModel] = None) -> ClsaModel:
    """Install ``embedding`` as the lookup table and initialise every other layer."""
    config = config or ClsaConfig()
    E = np.asarray(embedding, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] == 0:
        raise DataError(f"embedding must be a non-empty (V, D) matrix, got shape {E.shape}")
    if E.shape[1] != config.embed_dim:
        raise DimensionError(f"embedding width {E.shape[1]} != configured embed_dim {config.embed_dim}")
    rng = np.random.default_rng(seed)
    C, K, F, H = config.embed_dim, config.kernel_size, config.conv_filters, config.lstm_units
    p = ParamSet()
    p.add("embedding", E.copy(), trainable=config.finetune_embedding)
    p.add("conv.W", glorot_uniform(rng, K * C, K * F, shape=(K, C, F)))
    p.add("conv.b", np.zeros(F))
    p.add("bn.gamma", np.ones(F))
    p.add("bn.beta", np.zeros(F))
    p.add("lstm.kernel", glorot_uniform(rng, F, 4 * H))
    p.add("lstm.recurrent", glorot_uniform(rng, H, 4 * H))
    p.add("lstm.bias", np.zeros(4 * H))
    if config.attention == "projected":
        for name in ("Wq", "Wk", "Wv"):
            p.add(f"attn.{name}", glorot_uniform(rng, H, H))
    width = H
    for i, u in enumerate(config.dense_units, 1):
        p.add(f"dense{i}.W", glorot_uniform(rng, width, u))
        p.add(f"dense{i}.b", np.zeros(u))
        width = u
    p.add("output.W", glorot_uniform(rng, width, config.n_classes))
    p.add("output.b", np.zeros(config.n_classes))
    bn = BatchNormStats.fresh(F, config.bn_momentum, config.bn_eps)
    return ClsaModel(config, p, bn, vocab, encoder, seed)


# ---------------------------------------------------------------- forward

def _check_ids(model: ClsaModel, ids: np.ndarray) -> None:
    T = ids.shape[-1]
    if T < model.config.min_length:
        raise SequenceTooShortError(f"sequence length {T} < minimum {model.config.min_length}")


def forward_logits(model: ClsaModel, ids, mode: str = "infer", rng=None) -> tuple[Tensor, np.ndarray]:
    """Logits and attention maps for ``(T,)`` or ``(B, T)`` token ids."""
    ids = np.asarray(ids)
    _check_ids(model, ids)
    p, c = model.params, model.config
    x = embedding_lookup(ids, p["embedding"])
    x = activation(conv1d(x, p["conv.W"], p["conv.b"]), "relu")
    x = batchnorm1d(x, p["bn.gamma"], p["bn.beta"], model.bn, mode)
    x = maxpool1d(x, c.pool)
    x = dropout(x, c.dropout, mode, rng)
    h = lstm_forward(x, p["lstm.kernel"], p["lstm.recurrent"], p["lstm.bias"])
    if c.attention == "projected":
        z, A = self_attention(h, p["attn.Wq"], p["attn.Wk"], p["attn.Wv"])
    else:
        z, A = self_attention(h)
    ctx = {"mean": mean_time, "last": last_time, "max": max_time}[c.pooling](z)
    for i in range(1, len(c.dense_units) + 1):
        ctx = dense(ctx, p[f"dense{i}.W"], p[f"dense{i}.b"], "relu")
    return dense(ctx, p["output.W"], p["output.b"]), A


def probabilities(model: ClsaModel, logits: np.ndarray) -> np.ndarray:
    if model.config.output == "sigmoid":
        return sigmoid(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def clsa_forward(seq, model: ClsaModel, mode: str = "infer", seed=None) -> Prediction:
    ids = seq.ids if isinstance(seq, TokenSequence) else np.asarray(seq)
    logits, A = forward_logits(model, ids, mode, seed)
    probs = probabilities(model, logits.data)
    return Prediction(probs, int(np.argmax(probs)), A)


def clsa_loss(model: ClsaModel, ids, labels, mode: str = "train", rng=None) -> tuple[Tensor, Tensor, np.ndarray]:
    """``(total, data_term, logits)``; total adds ``l2 * ||lstm kernel||^2``."""
    logits, _ = forward_logits(model, ids, mode, rng)
    labels = np.asarray(labels)
    if model.config.output == "sigmoid":
        data = binary_cross_entropy(logits, np.eye(model.config.n_classes)[labels])
    else:
        data = cross_entropy(logits, labels)
    total = data
    if model.config.l2:
        total = add(data, scale(sum_squares(model.params["lstm.kernel"]), model.config.l2))
    return total, data, logits.data


def l2_term(model: ClsaModel) -> float:
    k = model.params["lstm.kernel"].data
    return float(model.config.l2 * np.sum(k * k))


# ---------------------------------------------------------------- batching

def _length_batches(lengths: Sequence[int], batch_size: int, rng: Optional[np.random.Generator] = None) -> list:
    order = np.arange(len(lengths)) if rng is None else rng.permutation(len(lengths))
    buckets: dict = {}
    for i in order:
        buckets.setdefault(lengths[i], []).append(int(i))
    batches = [np.array(b[lo: lo + batch_size]) for _, b in sorted(buckets.items()) for lo in range(0, len(b), batch_size)]
    if rng is not None and len(batches) > 1:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _stack(seqs: Sequence[TokenSequence], idx: np.ndarray) -> np.ndarray:
    return np.stack([seqs[i].ids for i in idx])


def _validate(model: ClsaModel, seqs: Sequence[TokenSequence]) -> None:
    model.sync_embedding()
    V = model.params["embedding"].shape[0]
    for s in seqs:
        ids = np.asarray(s.ids)
        if ids.size and (ids.min() < 0 or ids.max() >= V):
            raise VocabularyError(f"sequence {s.record_id}: token id {int(ids.max())} outside embedding of {V} rows")


def clsa_predict_batch(seqs: Sequence[TokenSequence], model: ClsaModel, batch_size: int = 64) -> list[Prediction]:
    """Infer-mode predictions in input order."""
    seqs = list(seqs)
    _validate(model, seqs)
    out: list = [None] * len(seqs)
    for idx in _length_batches([len(s) for s in seqs], batch_size):
        logits, A = forward_logits(model, _stack(seqs, idx), "infer")
        probs = probabilities(model, logits.data)
        for j, i in enumerate(idx):
            out[i] = Prediction(probs[j], int(np.argmax(probs[j])), A[j])
    return out


def predict_records(records, model: ClsaModel, open_vocab: bool = True, batch_size: int = 64) -> list[Prediction]:
    """Tokenise raw records against the model's vocabulary, then predict."""
    seqs = [model.tokenize(r, open_vocab) for r in records]
    return clsa_predict_batch(seqs, model, batch_size)


# ---------------------------------------------------------------- training

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


CURVE_FIELDS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")


def write_curves_csv(curves: Sequence[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for e in curves:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.train_acc), repr(e.val_acc)])


def evaluate(model: ClsaModel, data: tuple, batch_size: int = 64) -> tuple[float, float]:
    """Infer-mode ``(loss, accuracy)``; loss includes the L2 term."""
    seqs, labels = data
    labels = np.asarray(labels)
    _validate(model, seqs)
    total, correct = 0.0, 0
    for idx in _length_batches([len(s) for s in seqs], batch_size):
        _, d, logits = clsa_loss(model, _stack(seqs, idx), labels[idx], "infer")
        total += float(d.data) * len(idx)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[idx]))
    n = len(seqs)
    return total / n + l2_term(model), correct / n


@dataclass
class ClsaTrainState:
    """Optimizer, curves and best-so-far weights; enough to resume exactly."""

    optimizer: AdamState
    epoch: int = 0
    curves: list = field(default_factory=list)
    best_acc: float = -1.0
    best_loss: float = float("inf")
    best_state: Optional[dict] = None

    def to_checkpoint(self, model: ClsaModel) -> model_store.Checkpoint:
        extra = {"curves": [asdict(e) for e in self.curves], "best_acc": self.best_acc, "best_loss": self.best_loss}
        return model_store.Checkpoint(model, self.optimizer, self.epoch, extra, dict(self.best_state or {}))

    @classmethod
    def from_checkpoint(cls, ck: model_store.Checkpoint) -> "ClsaTrainState":
        return cls(ck.optimizer, ck.epoch, [EpochStats(**e) for e in ck.extra["curves"]],
                   ck.extra["best_acc"], ck.extra["best_loss"], ck.extra_arrays or None)


def clsa_train(
    train: tuple,
    val: tuple,
    model: ClsaModel,
    epochs: int = 30,
    lr: float = 0.001,
    batch_size: int = 32,
    seed: int = 0,
    on_epoch: Optional[Callable[[EpochStats], None]] = None,
    state: Optional[ClsaTrainState] = None,
    stop_at: Optional[int] = None,
) -> tuple[ClsaModel, list[EpochStats]]:
    """Adam training on ``(sequences, labels)``; keeps the best-validation weights.

    The best epoch is the one with highest validation accuracy, ties broken
    by lower validation loss. Shuffling and dropout masks are seeded per
    epoch, so a run paused with ``stop_at`` and resumed from ``state``
    matches an uninterrupted run bit for bit. A paused run returns without
    restoring the best weights; pass a fresh ``ClsaTrainState`` to keep a
    handle on it.
    """
    seqs, labels = train
    labels = np.asarray(labels, dtype=np.int64)
    if len(seqs) == 0 or len(val[0]) == 0:
        raise DataError("clsa_train needs non-empty train and validation splits")
    _validate(model, list(seqs) + list(val[0]))
    if state is None:
        state = ClsaTrainState(AdamState(lr=lr))
    params = model.params
    while state.epoch < epochs:
        if stop_at is not None and state.epoch >= stop_at:
            return model, state.curves
        epoch = state.epoch
        rng = np.random.default_rng([seed, epoch])
        loss_sum, correct = 0.0, 0
        for b, idx in enumerate(_length_batches([len(s) for s in seqs], batch_size, rng)):
            params.zero_grad()
            with Tape() as tape:
                total, _, logits = clsa_loss(model, _stack(seqs, idx), labels[idx], "train",
                                             np.random.default_rng([seed, epoch, b, 1]))
            backward(tape, total, params)
            adam_step(params, state.optimizer)
            loss_sum += float(total.data) * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == labels[idx]))
        val_loss, val_acc = evaluate(model, val)
        stats = EpochStats(epoch + 1, loss_sum / len(seqs), val_loss, correct / len(seqs), val_acc)
        state.curves.append(stats)
        state.epoch += 1
        log.info("epoch %d: loss %.4f acc %.3f | val loss %.4f acc %.3f", stats.epoch, stats.train_loss,
                 stats.train_acc, val_loss, val_acc)
        if on_epoch is not None:
            on_epoch(stats)
        if (val_acc, -val_loss) > (state.best_acc, -state.best_loss):
            state.best_acc, state.best_loss = val_acc, val_loss
            state.best_state = model.state_arrays()
    if state.best_state is not None:
        model.load_state(state.best_state)
    return model, state.curves
