"""Finite-difference gradient suite over every differentiable op.

Each case draws fresh random inputs ``points`` times and checks up to
``coords`` coordinates per input against central differences. The last
case runs a full forward/backward pass through a tiny classifier.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .clsa import ClsaConfig, clsa_init, clsa_loss
from .tensor_engine import (
    BatchNormStats,
    Tensor,
    batchnorm1d,
    binary_cross_entropy,
    conv1d,
    cross_entropy,
    dense,
    embedding_lookup,
    grad_check,
    lstm_forward,
    maxpool1d,
    mse_loss,
    self_attention,
)


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _dense(rng):
    return (lambda x, W, b: dense(x, W, b, "tanh")), [_t(rng.normal(size=(3, 4))), _t(rng.normal(size=(4, 3))), _t(rng.normal(size=3))]


def _conv(rng):
    return conv1d, [_t(rng.normal(size=(7, 3))), _t(rng.normal(size=(3, 3, 4))), _t(rng.normal(size=4))]


def _batchnorm(rng):
    stats = BatchNormStats.fresh(3)
    return (lambda x, g, b: batchnorm1d(x, g, b, stats, "train")), [
        _t(rng.normal(size=(6, 3))), _t(rng.normal(size=3) + 1.0), _t(rng.normal(size=3))]


def _maxpool(rng):
    # distinct values keep the argmax away from ties
    x = rng.permutation(24).reshape(8, 3) + rng.uniform(0, 0.1, size=(8, 3))
    return maxpool1d, [_t(x)]


def _lstm(rng):
    return lstm_forward, [_t(rng.normal(size=(3, 2))), _t(rng.normal(size=(2, 12)) * 0.5),
                          _t(rng.normal(size=(3, 12)) * 0.5), _t(rng.normal(size=12) * 0.1)]


def _embedding(rng):
    ids = rng.integers(0, 5, size=7)
    return (lambda E: embedding_lookup(ids, E)), [_t(rng.normal(size=(5, 3)))]


def _attention(rng):
    return (lambda x: self_attention(x)[0]), [_t(rng.normal(size=(5, 3)))]


def _attention_projected(rng):
    return (lambda x, q, k, v: self_attention(x, q, k, v)[0]), [_t(rng.normal(size=(5, 3)))] + [
        _t(rng.normal(size=(3, 3)) * 0.5) for _ in range(3)]


def _cross_entropy(rng):
    labels = rng.integers(0, 5, size=4)
    return (lambda z: cross_entropy(z, labels)), [_t(rng.normal(size=(4, 5)))]


def _bce(rng):
    y = (rng.random((4, 5)) < 0.5).astype(float)
    return (lambda z: binary_cross_entropy(z, y)), [_t(rng.normal(size=(4, 5)))]


def _mse(rng):
    y = rng.normal(size=(4, 3))
    return (lambda p: mse_loss(p, y)), [_t(rng.normal(size=(4, 3)))]


TINY_CLSA = ClsaConfig(embed_dim=6, conv_filters=4, lstm_units=6, dense_units=(8, 4), n_classes=5,
                       finetune_embedding=True)


def _clsa(rng):
    E = rng.normal(size=(20, 6))
    model = clsa_init(E, TINY_CLSA, seed=int(rng.integers(1 << 31)))
    ids = rng.integers(0, 20, size=(2, 12))
    labels = rng.integers(0, 5, size=2)
    drop_seed = int(rng.integers(1 << 31))
    params = list(model.params.values())
    return (lambda *_: clsa_loss(model, ids, labels, "train", drop_seed)[0]), params


CASES: dict[str, Callable] = {
    "dense": _dense,
    "conv1d": _conv,
    "batchnorm": _batchnorm,
    "maxpool": _maxpool,
    "lstm": _lstm,
    "embedding": _embedding,
    "self_attention": _attention,
    "self_attention_projected": _attention_projected,
    "cross_entropy": _cross_entropy,
    "binary_cross_entropy": _bce,
    "mse": _mse,
    "clsa_end_to_end": _clsa,
}


@dataclass
class SuiteResult:
    op: str
    max_rel_error: float
    n_points: int
    n_checked: int
    passed: bool


def run_suite(tol: float = 1e-4, seed: int = 0, points: int = 10, coords: int = 12, ops=None) -> list[SuiteResult]:
    out = []
    for k, (name, make) in enumerate(CASES.items()):
        if ops is not None and name not in ops:
            continue
        worst, checked = 0.0, 0
        for p in range(points):
            fn, inputs = make(np.random.default_rng([seed, k, p]))
            r = grad_check(fn, inputs, tolerance=tol, max_coords=coords, seed=p)
            worst = max(worst, r.max_rel_error)
            checked += r.n_checked
        out.append(SuiteResult(name, worst, points, checked, worst < tol))
    return out


def format_results(results: list[SuiteResult], tol: float) -> str:
    w = max(len(r.op) for r in results)
    lines = [f"{'op':<{w}}  {'max rel error':>13}  {'checked':>7}  status"]
    for r in results:
        lines.append(f"{r.op:<{w}}  {r.max_rel_error:>13.3e}  {r.n_checked:>7d}  {'ok' if r.passed else 'FAIL'}")
    lines.append(f"tolerance {tol:g}")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    t0 = time.time()
    res = run_suite()
    print(format_results(res, 1e-4), f"{time.time() - t0:.1f}s")
