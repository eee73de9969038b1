"""Temporal autoencoder: 12 -> 12 -> 8 -> latent -> 8 -> 12 dense network.

The encoder half compresses one 12-channel instant to ``latent_dim``
values; those codes later become the classifier's embedding matrix.
Training follows a two-half protocol: fit on the first half of the
pairs, checkpoint, reload and continue on the second half.
"""

from __future__ import annotations

import logging
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import model_store
from .errors import ConfigError, DataError, DimensionError
from .preprocess import Pairs, Vocabulary
from .tensor_engine import AdamState, ParamSet, Tape, Tensor, adam_step, backward, dense, mse_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaeConfig:
    input_dim: int = 12
    encoder_units: tuple = (12, 8)
    latent_dim: int = 6
    decoder_units: tuple = (8, 12)
    # add a separate 12 -> 12 output layer after the second decoder layer
    extra_output_layer: bool = False
    # "fit": standardise inputs, map targets to [0, 1] so the ReLU output can reach them
    scaling: str = "fit"
    identity_ae: bool = False

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.decoder_units[-1] != self.input_dim:
            raise ConfigError("last decoder layer must reproduce the input width")
        if self.scaling not in ("fit", "none"):
            raise ConfigError(f"unknown scaling {self.scaling!r}")
        object.__setattr__(self, "encoder_units", tuple(self.encoder_units))
        object.__setattr__(self, "decoder_units", tuple(self.decoder_units))

    def layers(self) -> list[tuple[str, int, int, str]]:
        """``(name, fan_in, fan_out, activation)`` in forward order."""
        out = []
        width = self.input_dim
        for i, u in enumerate(self.encoder_units, 1):
            out.append((f"enc{i}", width, u, "relu"))
            width = u
        out.append(("latent", width, self.latent_dim, "linear"))
        width = self.latent_dim
        for i, u in enumerate(self.decoder_units, 1):
            out.append((f"dec{i}", width, u, "relu"))
            width = u
        if self.extra_output_layer:
            out.append(("output", width, self.input_dim, "relu"))
        return out

    @property
    def n_encoder_layers(self) -> int:
        return len(self.encoder_units) + 1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class TaeModel:
    def __init__(self, config: TaeConfig, params: ParamSet, scaling: Optional[dict] = None, seed=None):
        self.config = config
        self.params = params
        d = config.input_dim
        self.scaling = scaling or {
            "in_mean": np.zeros(d), "in_std": np.ones(d), "out_min": np.zeros(d), "out_span": np.ones(d),
        }
        self.seed = seed

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def param_count(self) -> int:
        return self.params.count()

    # scaling -------------------------------------------------------------
    def fit_scaling(self, inputs: np.ndarray, targets: np.ndarray) -> None:
        """Fit input standardisation and target min-max scaling.

        The output-layer bias is then set to the mean scaled target: with
        zero bias, output ReLUs regularly die early and pin whole channels
        at zero.
        """
        if self.config.scaling == "none":
            return
        std = inputs.std(axis=0)
        lo = targets.min(axis=0)
        span = targets.max(axis=0) - lo
        self.scaling = {
            "in_mean": inputs.mean(axis=0),
            "in_std": np.where(std > 0, std, 1.0),
            "out_min": lo,
            "out_span": np.where(span > 0, span, 1.0),
        }
        last = self.config.layers()[-1][0]
        self.params[f"{last}.b"].data = self.scale_out(targets).mean(axis=0)

    def scale_in(self, x: np.ndarray) -> np.ndarray:
        return (x - self.scaling["in_mean"]) / self.scaling["in_std"]

    def scale_out(self, y: np.ndarray) -> np.ndarray:
        return (y - self.scaling["out_min"]) / self.scaling["out_span"]

    def unscale_out(self, y: np.ndarray) -> np.ndarray:
        return y * self.scaling["out_span"] + self.scaling["out_min"]

    # forward ---------------------------------------------------------------
    def _run(self, x: Tensor, layers) -> Tensor:
        for name, _, _, act in layers:
            x = dense(x, self.params[f"{name}.W"], self.params[f"{name}.b"], act)
        return x

    def forward(self, x: Tensor) -> Tensor:
        """Scaled input -> scaled reconstruction."""
        return self._run(x, self.config.layers())

    def encode_tensor(self, x: Tensor) -> Tensor:
        return self._run(x, self.config.layers()[: self.config.n_encoder_layers])

    def copy(self) -> "TaeModel":
        return TaeModel(self.config, self.params.copy(), {k: v.copy() for k, v in self.scaling.items()}, self.seed)

    # storage ---------------------------------------------------------------
    def to_container(self) -> model_store.Container:
        cfg = asdict(self.config)
        cfg["encoder_units"] = list(cfg["encoder_units"])
        cfg["decoder_units"] = list(cfg["decoder_units"])
        arrays = {**model_store.prefixed(self.params.arrays(), "param."),
                  **model_store.prefixed(self.scaling, "scale.")}
        return model_store.Container("tae", {"tae": cfg, "seed": self.seed}, arrays)

    @classmethod
    def from_container(cls, c: model_store.Container) -> "TaeModel":
        config = TaeConfig(**c.config["tae"])
        model = tae_init(config=config, seed=0)
        model.params.load_arrays(model_store.unprefixed(c.arrays, "param."))
        model.scaling = {k: v.copy() for k, v in model_store.unprefixed(c.arrays, "scale.").items()}
        model.seed = c.config["seed"]
        return model


def tae_init(latent_dim: int = 6, seed: int = 0, config: Optional[TaeConfig] = None) -> TaeModel:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if config is None:
        if latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")
        config = TaeConfig(latent_dim=latent_dim)
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for name, fan_in, fan_out, _ in config.layers():
        params.add(f"{name}.W", glorot_uniform(rng, fan_in, fan_out))
        params.add(f"{name}.b", np.zeros(fan_out))
    return TaeModel(config, params, seed=seed)


def _as_batch(model: TaeModel, x) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    a = a[None] if single else a
    if a.ndim != 2 or a.shape[1] != model.config.input_dim:
        raise DimensionError(f"expected input width {model.config.input_dim}, got shape {np.shape(x)}")
    return a, single


def _rowwise_dense(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # each output row depends on its input row only, with the same summation
    # order whatever the batch size; BLAS matmul gives no such guarantee
    return np.add.reduce(x[:, :, None] * W[None], axis=1) + b


def tae_encode(model: TaeModel, x) -> np.ndarray:
    """Latent code(s) for one 12-vector or a batch of them (raw units).

    Row ``i`` of a batch encoding is bit-identical to encoding row ``i`` alone.
    """
    a, single = _as_batch(model, x)
    z = model.scale_in(a)
    for name, _, _, act in model.config.layers()[: model.config.n_encoder_layers]:
        z = _rowwise_dense(z, model.params[f"{name}.W"].data, model.params[f"{name}.b"].data)
        if act == "relu":
            z = np.maximum(z, 0.0)
    return z[0] if single else z


def tae_reconstruct(model: TaeModel, x) -> np.ndarray:
    """Full encode/decode pass, returned in raw units."""
    a, single = _as_batch(model, x)
    y = model.unscale_out(model.forward(Tensor(model.scale_in(a))).data)
    return y[0] if single else y


def build_embedding_matrix(vocab: Vocabulary, model: TaeModel) -> np.ndarray:
    """Row ``j`` is the latent code of vocabulary entry ``j``."""
    if len(vocab) == 0:
        raise DataError("cannot build an embedding matrix from an empty vocabulary")
    return tae_encode(model, vocab.vectors())


# ---------------------------------------------------------------- training

@dataclass
class TrainReport:
    batch: int
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    initial_val_mse: float = float("nan")
    test_mse: float = float("nan")
    stopped_early: bool = False
    best_epoch: int = 0
    flags: list = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.train_mse)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TaeTrainState:
    """Everything needed to resume a fit exactly where it stopped."""

    optimizer: AdamState
    epoch: int = 0
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    initial_val_mse: float = float("nan")
    best_val: float = float("inf")
    best_epoch: int = 0
    best_arrays: Optional[dict] = None
    wait: int = 0
    done: bool = False
    stopped_early: bool = False

    def to_checkpoint(self, model: TaeModel) -> model_store.Checkpoint:
        extra = {k: getattr(self, k) for k in
                 ("train_mse", "val_mse", "initial_val_mse", "best_val", "best_epoch", "wait", "done", "stopped_early")}
        arrays = {} if self.best_arrays is None else dict(self.best_arrays)
        return model_store.Checkpoint(model, self.optimizer, self.epoch, extra, arrays)

    @classmethod
    def from_checkpoint(cls, ck: model_store.Checkpoint) -> "TaeTrainState":
        return cls(optimizer=ck.optimizer, epoch=ck.epoch, best_arrays=ck.extra_arrays or None, **ck.extra)


def _mse(model: TaeModel, x: np.ndarray, y: np.ndarray) -> float:
    pred = model.forward(Tensor(x)).data
    return float(np.mean((pred - y) ** 2))


def fit_tae(
    model: TaeModel,
    train: tuple,
    val: tuple,
    epochs: int = 50,
    lr: float = 0.001,
    seed: int = 0,
    batch_size: int = 256,
    patience: Optional[int] = 5,
    state: Optional[TaeTrainState] = None,
    stop_at: Optional[int] = None,
    stream: int = 0,
) -> TaeTrainState:
    """Mini-batch Adam on MSE over already-scaled ``(inputs, targets)``.

    Shuffling uses a generator seeded by ``(seed, stream, epoch)``, so a
    run resumed from ``state`` reproduces an uninterrupted run bit for bit.
    With ``stop_at`` the fit pauses after that epoch; best weights are
    restored only when the fit finishes.
    """
    xtr, ytr = train
    xva, yva = val
    if state is None:
        state = TaeTrainState(AdamState(lr=lr))
        state.initial_val_mse = _mse(model, xva, yva)
    n = len(xtr)
    params = model.params
    while not state.done and state.epoch < epochs:
        if stop_at is not None and state.epoch >= stop_at:
            return state
        order = np.random.default_rng([seed, stream, state.epoch]).permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo: lo + batch_size]
            params.zero_grad()
            with Tape() as tape:
                loss = mse_loss(model.forward(Tensor(xtr[idx])), ytr[idx])
            backward(tape, loss, params)
            adam_step(params, state.optimizer)
        state.epoch += 1
        state.train_mse.append(_mse(model, xtr, ytr))
        v = _mse(model, xva, yva)
        state.val_mse.append(v)
        if v < state.best_val:
            state.best_val, state.best_epoch, state.wait = v, state.epoch, 0
            state.best_arrays = {k: a.copy() for k, a in params.arrays().items()}
        else:
            state.wait += 1
            if patience is not None and state.wait >= patience:
                state.stopped_early = True
                state.done = True
    state.done = True
    if state.best_arrays is not None:
        params.load_arrays(state.best_arrays)
    return state


def _report(batch: int, state: TaeTrainState, test_mse: float) -> TrainReport:
    rep = TrainReport(batch, list(state.train_mse), list(state.val_mse), state.initial_val_mse,
                      test_mse, state.stopped_early, state.best_epoch)
    head = rep.train_mse[:5]
    if any(b >= a for a, b in zip(head, head[1:])):
        rep.flags.append("non_monotone_start")
    for e in range(1, len(rep.val_mse)):
        if rep.val_mse[e] > 1.1 * min(rep.val_mse[:e]):
            rep.flags.append("early_regression")
            break
    return rep


def _split_80_10_10(idx: np.ndarray) -> tuple:
    n = len(idx)
    n_tr = max(1, int(0.8 * n))
    n_va = int(0.1 * n)
    tr, va, te = idx[:n_tr], idx[n_tr:n_tr + n_va], idx[n_tr + n_va:]
    if len(va) == 0:
        va = tr
    if len(te) == 0:
        te = va
    return tr, va, te


def tae_train_two_batch(
    pairs: Pairs,
    model: TaeModel,
    epochs: int = 50,
    lr: float = 0.001,
    seed: int = 0,
    batch_size: int = 256,
    patience: Optional[int] = 5,
    checkpoint_dir=None,
) -> tuple[TaeModel, tuple[TrainReport, TrainReport]]:
    """Train on two disjoint halves of the shuffled pairs in sequence.

    After the first half the model and optimizer state are written to a
    container, read back (verified bitwise) and training continues on the
    second half from the reloaded objects.
    """
    n = len(pairs)
    if n < 2:
        raise DataError(f"need at least 2 pairs to train, got {n}")
    inputs = pairs.target if model.config.identity_ae else pairs.context_12
    targets = pairs.target
    order = np.random.default_rng(seed).permutation(n)
    halves = np.array_split(order, 2)

    reports = []
    optimizer = None
    for batch, half in enumerate(halves, 1):
        tr, va, te = _split_80_10_10(half)
        if batch == 1:
            model.fit_scaling(inputs[tr], targets[tr])
        x, y = model.scale_in(inputs), model.scale_out(targets)
        state = None
        if optimizer is not None:
            state = TaeTrainState(optimizer)
            state.initial_val_mse = _mse(model, x[va], y[va])
        state = fit_tae(model, (x[tr], y[tr]), (x[va], y[va]), epochs, lr, seed, batch_size, patience,
                        state=state, stream=batch)
        reports.append(_report(batch, state, _mse(model, x[te], y[te])))
        log.info("TAE batch %d: %d epochs, final val MSE %.5g", batch, reports[-1].epochs, reports[-1].val_mse[-1])
        if batch == 1:
            model, optimizer = _checkpoint_roundtrip(model, state.optimizer, checkpoint_dir)

    rep1, rep2 = reports
    if min(rep2.val_mse) > min(rep1.val_mse):
        rep2.flags.append("second_batch_not_better")
    return model, (rep1, rep2)


def _checkpoint_roundtrip(model: TaeModel, optimizer: AdamState, checkpoint_dir) -> tuple[TaeModel, AdamState]:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(checkpoint_dir or tmp) / "tae_batch1.taec"
        model_store.save(model_store.Checkpoint(model, optimizer, 0, {"batch": 1}), path)
        ck = model_store.load(path)
    for name, a in model.params.arrays().items():
        if not np.array_equal(a, ck.model.params[name].data) or a.tobytes() != ck.model.params[name].data.tobytes():
            raise RuntimeError(f"checkpoint reload changed parameter {name}")
    return ck.model, ck.optimizer
