"""End-to-end driver: split, balance, TAE, vocabulary, embedding, CLSA, metrics.

Every stage is seeded from one integer so that a rerun produces
byte-identical artifacts.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .clsa import ClsaConfig, ClsaModel, clsa_init, clsa_predict_batch, clsa_train, param_layout
from .dataset import Dataset, smote_balance, split_80_10_10
from .errors import ConfigError, DataError, DimensionError
from .metrics import MetricReport, compute_metrics, confusion, param_report
from .preprocess import DEFAULT_Q, DEFAULT_WINDOW, build_vocabulary, make_pairs_corpus
from .tae import TaeConfig, TaeModel, TrainReport, build_embedding_matrix, tae_init, tae_train_two_batch

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    seed: int = 0
    window: int = DEFAULT_WINDOW
    latent_dim: int = 6
    use_tae: bool = True
    identity_ae: bool = False
    tae_epochs: int = 50
    tae_lr: float = 0.001
    tae_batch_size: int = 256
    tae_patience: Optional[int] = 5
    q: float = DEFAULT_Q
    smote_k: int = 5
    paper_faithful: bool = False
    clsa_epochs: int = 30
    clsa_lr: float = 0.001
    clsa_batch_size: int = 32
    clsa: dict = field(default_factory=dict)

    def clsa_config(self) -> ClsaConfig:
        width = self.latent_dim if self.use_tae else 12
        try:
            return ClsaConfig(**{**self.clsa, "embed_dim": width})
        except TypeError as exc:
            raise ConfigError(f"bad clsa config: {exc}") from None

    def tae_config(self) -> TaeConfig:
        return TaeConfig(latent_dim=self.latent_dim, identity_ae=self.identity_ae)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def prepare_splits(ds: Dataset, cfg: PipelineConfig) -> Dataset:
    """Split then SMOTE-balance train (or balance first when paper-faithful)."""
    if cfg.paper_faithful:
        return split_80_10_10(smote_balance(ds, cfg.smote_k, cfg.seed), cfg.seed, synthetic_to_train=False)
    split = ds if ds.split else split_80_10_10(ds, cfg.seed)
    train = Dataset(split.subset("train"))
    balanced = smote_balance(train, cfg.smote_k, cfg.seed)
    new = [r for r in balanced.records if r.synthetic and r.record_id not in split.split]
    return Dataset(split.records + tuple(new), {**split.split, **{r.record_id: "train" for r in new}}, split.skipped)


def train_tae(records, cfg: PipelineConfig, checkpoint_dir=None) -> tuple[TaeModel, tuple[TrainReport, TrainReport]]:
    pairs = make_pairs_corpus(records, cfg.window)
    model = tae_init(cfg.latent_dim, cfg.seed, cfg.tae_config())
    return tae_train_two_batch(pairs, model, cfg.tae_epochs, cfg.tae_lr, cfg.seed, cfg.tae_batch_size,
                               cfg.tae_patience, checkpoint_dir)


def build_classifier(train_records, cfg: PipelineConfig, tae: Optional[TaeModel]) -> ClsaModel:
    """Vocabulary over the training records, embedding rows from the encoder."""
    vocab = build_vocabulary(train_records, cfg.q)
    ccfg = cfg.clsa_config()
    if tae is not None:
        if tae.latent_dim != ccfg.embed_dim:
            raise DimensionError(f"TAE latent width {tae.latent_dim} != classifier embed_dim {ccfg.embed_dim}")
        E = build_embedding_matrix(vocab, tae)
    else:
        E = vocab.vectors()
    return clsa_init(E, ccfg, cfg.seed, vocab=vocab, encoder=tae)


def labelled(model: ClsaModel, records, open_vocab: bool = True) -> tuple[list, np.ndarray]:
    seqs = [model.tokenize(r, open_vocab) for r in records]
    return seqs, np.array([int(r.label) for r in records], dtype=np.int64)


def evaluate_records(model: ClsaModel, records, open_vocab: bool = True) -> MetricReport:
    seqs, labels = labelled(model, records, open_vocab)
    if not seqs:
        raise DataError("no records to evaluate")
    preds = [p.label for p in clsa_predict_batch(seqs, model)]
    return compute_metrics(confusion(preds, labels), params={"total": model.param_count()})


@dataclass
class PipelineResult:
    config: PipelineConfig
    data: Dataset
    tae: Optional[TaeModel]
    tae_reports: Optional[tuple]
    model: ClsaModel
    curves: list
    report: MetricReport

    def size_report(self):
        """Compare against the same stack fed 12-wide raw instants."""
        base = replace(self.model.config, embed_dim=12)
        n_vocab = self.model.embedding.shape[0]
        return param_report(self.model.param_counts(), param_layout(base, n_vocab))


def run_pipeline(ds: Dataset, cfg: Optional[PipelineConfig] = None, checkpoint_dir=None,
                 on_epoch=None) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    data = prepare_splits(ds, cfg)
    train, val, test = (data.subset(s) for s in ("train", "val", "test"))
    tae, reports = None, None
    if cfg.use_tae:
        tae, reports = train_tae(train, cfg, checkpoint_dir)
    model = build_classifier(train, cfg, tae)
    tr, va = labelled(model, train), labelled(model, val)
    model, curves = clsa_train(tr, va, model, cfg.clsa_epochs, cfg.clsa_lr, cfg.clsa_batch_size, cfg.seed, on_epoch)
    report = evaluate_records(model, test)
    return PipelineResult(cfg, data, tae, reports, model, curves, report)
