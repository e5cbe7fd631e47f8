"""Synthetic fine-tuning tasks with a frozen base model and a hidden low-rank shift."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .linalg import make_rng

TASK_KINDS = ("lowrank_regression", "blob_classification")


@dataclass
class TaskSpec:
    kind: str = "lowrank_regression"
    m: int = 32
    n: int = 32
    n_layers: int = 1
    true_rank: int = 3
    noise_std: float = 0.0
    n_samples: int = 256
    n_eval: int = 128
    batch_size: int = 0  # 0 means full batch
    target_scale: float = 4.0  # top singular value of the hidden shift
    base_scale: float = 16.0  # ||W0||_F is about base_scale * sqrt(m)
    n_classes: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.m < 1 or self.n < 1 or self.n_layers < 1:
            raise ValueError("m, n and n_layers must be positive")
        if self.n_samples < 1 or self.n_eval < 1:
            raise ValueError("sample counts must be positive")
        if self.batch_size < 0 or self.batch_size > self.n_samples:
            raise ValueError("batch_size must lie in [0, n_samples]")
        if self.base_scale <= 0 or self.target_scale < 0:
            raise ValueError("base_scale must be positive and target_scale non-negative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.kind == "lowrank_regression":
            if self.true_rank < 0 or self.true_rank > min(self.m, self.n):
                raise ValueError("true_rank must lie in [0, min(m, n)]")
        elif self.n_classes < 2:
            raise ValueError("classification needs at least two classes")


@dataclass
class Task:
    spec: TaskSpec
    base_layers: list
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    loss_kind: str
    target_deltas: list = field(default_factory=list)

    def fresh_layers(self):
        """Copies of the frozen base model, without adapters."""
        return [mdl.AdaptedLayer(l.w0, l.bias, None, l.alpha, l.activation) for l in self.base_layers]

    def eval_metric(self, layers):
        """Held-out MSE for regression, held-out accuracy for classification."""
        if self.loss_kind == "mse":
            return mdl.evaluate(layers, self.x_eval, self.y_eval, "mse")
        return mdl.accuracy(layers, self.x_eval, self.y_eval)

    def train_loss(self, layers):
        return mdl.evaluate(layers, self.x_train, self.y_train, self.loss_kind)


class Batcher:
    """Deterministic batch source; full batch when ``batch_size`` is 0 or ``n``."""

    def __init__(self, task, rng):
        self.task = task
        self.rng = rng
        size = task.spec.batch_size
        self.size = task.x_train.shape[0] if size == 0 else size

    def next(self):
        n = self.task.x_train.shape[0]
        if self.size >= n:
            return self.task.x_train, self.task.y_train
        idx = np.sort(self.rng.choice(n, size=self.size, replace=False))
        return self.task.x_train[idx], self.task.y_train[idx]


def _orthonormal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def lowrank_delta(rng, m, n, rank, scale):
    """``sum_i s_i u_i v_i^T`` with orthonormal u, v and s from ``scale`` down to ``scale / 2``."""
    if rank == 0:
        return np.zeros((m, n))
    u = _orthonormal(rng, m, rank)
    v = _orthonormal(rng, n, rank)
    s = scale * np.linspace(1.0, 0.5, rank) if rank > 1 else np.array([scale])
    return (u * s) @ v.T


def gen_lowrank_task(spec, rng=None):
    """Linear-chain regression: targets come from ``W0_l + dW*_l`` per layer.

    Layer 0 maps ``n -> m``; later layers map ``m -> m``. Every hidden shift
    has rank ``spec.true_rank``.
    """
    if spec.kind != "lowrank_regression":
        raise ValueError(f"task kind {spec.kind!r} is not lowrank_regression")
    rng = make_rng(spec.seed) if rng is None else rng
    base, deltas = [], []
    fan_in = spec.n
    for _ in range(spec.n_layers):
        w0 = spec.base_scale * rng.standard_normal((spec.m, fan_in)) / math.sqrt(fan_in)
        base.append(mdl.AdaptedLayer(w0))
        deltas.append(lowrank_delta(rng, spec.m, fan_in, spec.true_rank, spec.target_scale))
        fan_in = spec.m
    teacher = [mdl.AdaptedLayer(l.w0 + d) for l, d in zip(base, deltas)]

    def sample(count):
        x = rng.standard_normal((count, spec.n))
        y, _ = mdl.forward(teacher, x)
        return x, y + spec.noise_std * rng.standard_normal(y.shape)

    x_train, y_train = sample(spec.n_samples)
    x_eval, y_eval = sample(spec.n_eval)
    return Task(spec, base, x_train, y_train, x_eval, y_eval, "mse", deltas)


def gen_blob_task(spec, rng=None):
    """Gaussian blobs pushed through a random frozen tanh network."""
    if spec.kind != "blob_classification":
        raise ValueError(f"task kind {spec.kind!r} is not blob_classification")
    rng = make_rng(spec.seed) if rng is None else rng
    widths = [spec.n] + [spec.m] * (spec.n_layers - 1) + [spec.n_classes]
    base = []
    for i in range(spec.n_layers):
        w0 = rng.standard_normal((widths[i + 1], widths[i])) / math.sqrt(widths[i])
        act = "identity" if i == spec.n_layers - 1 else "tanh"
        base.append(mdl.AdaptedLayer(w0, activation=act))
    centers = 2.0 * spec.target_scale * rng.standard_normal((spec.n_classes, spec.n))
    noise = spec.noise_std if spec.noise_std > 0 else 1.0

    def sample(count):
        labels = rng.integers(0, spec.n_classes, size=count)
        x = centers[labels] + noise * rng.standard_normal((count, spec.n))
        return x, labels

    x_train, y_train = sample(spec.n_samples)
    x_eval, y_eval = sample(spec.n_eval)
    return Task(spec, base, x_train, y_train, x_eval, y_eval, "softmax_cross_entropy")


def make_task(spec, rng=None):
    if spec.kind == "lowrank_regression":
        return gen_lowrank_task(spec, rng)
    return gen_blob_task(spec, rng)


def optimal_rank_fit_mse(task, rank):
    """Least-squares floor for a rank-``rank`` correction of a single-layer task.

    Minimizes ``||R - X D^T||_F`` over rank-``rank`` D, where ``R`` is the
    residual of the frozen model on the training set: the fitted values for
    the unconstrained solution are projected onto ``col(X)`` and truncated by
    SVD. Returned as a mean over all entries, matching the ``mse`` loss.
    """
    if len(task.base_layers) != 1 or task.loss_kind != "mse":
        raise ValueError("the truncated-SVD floor is defined for single-layer regression")
    x, y = task.x_train, task.y_train
    resid = y - mdl.forward(task.base_layers, x)[0]
    coef, *_ = np.linalg.lstsq(x, resid, rcond=None)
    fitted = x @ coef
    u, s, vt = np.linalg.svd(fitted, full_matrices=False)
    best = (u[:, :rank] * s[:rank]) @ vt[:rank]
    return float(np.mean(np.square(resid - best)))
