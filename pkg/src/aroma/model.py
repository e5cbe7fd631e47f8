"""Frozen linear-layer stacks carrying trainable low-rank adapters.

Each layer computes ``act(x W0^T + bias + scale * ((x A_m^T) B_m^T + (x A^T) B^T))``
where ``(B_m, A_m)`` is the frozen merged accumulator and ``(B, A)`` the
trainable factors. AROMA keeps a single trainable column/row (``B`` is
``m x 1``); LoRA keeps ``r`` of them. The adapter update is always applied in
factored form, never by materializing ``delta W``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import DimensionError, as_matrix

ACTIVATIONS = ("identity", "relu", "tanh")
LOSSES = ("mse", "softmax_cross_entropy")


@dataclass
class RankOnePair:
    b: np.ndarray  # (m,)
    a: np.ndarray  # (n,)


@dataclass
class Adapter:
    """Merged frozen factors plus the currently trainable factors.

    ``delta_w() == merged_B @ merged_A + B @ A``; an absent trainable part
    (``B is None``) contributes zero.
    """

    merged_B: np.ndarray
    merged_A: np.ndarray
    B: np.ndarray | None = None
    A: np.ndarray | None = None

    @classmethod
    def empty(cls, m, n):
        return cls(np.zeros((m, 0)), np.zeros((0, n)))

    @property
    def shape(self):
        return self.merged_B.shape[0], self.merged_A.shape[1]

    @property
    def merged_rank(self):
        return self.merged_B.shape[1]

    @property
    def active_width(self):
        return 0 if self.B is None else self.B.shape[1]

    @property
    def active(self):
        if self.B is None:
            return None
        if self.B.shape[1] != 1:
            raise DimensionError("active factors are not a rank-one pair")
        return RankOnePair(self.B[:, 0], self.A[0, :])

    def set_active(self, B, A):
        m, n = self.shape
        B = as_matrix(B, "B")
        A = as_matrix(A, "A")
        if B.shape[0] != m or A.shape[1] != n or B.shape[1] != A.shape[0]:
            raise DimensionError(f"factors {B.shape} x {A.shape} do not fit a {m}x{n} adapter")
        self.B = B
        self.A = A

    def set_pair(self, b, a):
        self.set_active(np.asarray(b, dtype=np.float64)[:, None],
                        np.asarray(a, dtype=np.float64)[None, :])

    def merge_active(self):
        """Fold the trainable factors into the frozen accumulator."""
        if self.B is None:
            raise ValueError("no active factors to merge")
        self.merged_B = np.hstack([self.merged_B, self.B])
        self.merged_A = np.vstack([self.merged_A, self.A])
        self.B = None
        self.A = None

    def discard_active(self):
        self.B = None
        self.A = None

    def merged_delta(self):
        return self.merged_B @ self.merged_A

    def delta_w(self):
        dw = self.merged_delta()
        if self.B is not None:
            dw = dw + self.B @ self.A
        return dw


@dataclass
class AdaptedLayer:
    w0: np.ndarray
    bias: np.ndarray | None = None
    adapter: Adapter | None = None
    alpha: float = 1.0
    activation: str = "identity"

    def __post_init__(self):
        self.w0 = as_matrix(np.array(self.w0, dtype=np.float64), "w0")
        self.w0.setflags(write=False)
        if self.bias is not None:
            self.bias = np.array(self.bias, dtype=np.float64)
            if self.bias.shape != (self.w0.shape[0],):
                raise DimensionError(f"bias shape {self.bias.shape} does not match w0 {self.w0.shape}")
            self.bias.setflags(write=False)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def shape(self):
        return self.w0.shape

    def attach(self):
        """Attach an empty adapter (no merged rank, no trainable factors)."""
        self.adapter = Adapter.empty(*self.w0.shape)
        return self.adapter

    def effective_weight(self):
        if self.adapter is None:
            return np.array(self.w0)
        return self.w0 + self.alpha * self.adapter.delta_w()


@dataclass
class Tape:
    inputs: list = field(default_factory=list)  # layer inputs x_l
    pre: list = field(default_factory=list)  # pre-activations z_l
    merged_proj: list = field(default_factory=list)  # x A_m^T
    active_proj: list = field(default_factory=list)  # x A^T
    outputs: np.ndarray | None = None


def _activate(z, kind):
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z, kind):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def forward(layers, inputs):
    """Run ``inputs`` (batch x n_in) through the stack; returns ``(outputs, tape)``."""
    x = as_matrix(inputs, "inputs")
    tape = Tape()
    for idx, layer in enumerate(layers):
        if x.shape[1] != layer.w0.shape[1]:
            raise DimensionError(
                f"layer {idx} expects {layer.w0.shape[1]} inputs, got {x.shape[1]}")
        z = x @ layer.w0.T
        if layer.bias is not None:
            z = z + layer.bias
        merged_proj = active_proj = None
        ad = layer.adapter
        if ad is not None:
            if ad.merged_rank:
                merged_proj = x @ ad.merged_A.T
                z = z + layer.alpha * (merged_proj @ ad.merged_B.T)
            if ad.B is not None:
                active_proj = x @ ad.A.T
                z = z + layer.alpha * (active_proj @ ad.B.T)
        tape.inputs.append(x)
        tape.pre.append(z)
        tape.merged_proj.append(merged_proj)
        tape.active_proj.append(active_proj)
        x = _activate(z, layer.activation)
    tape.outputs = x
    return x, tape


def _check_labels(targets, n_classes):
    labels = np.asarray(targets)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("cross-entropy targets must be a 1-D integer label array")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return labels


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def loss(outputs, targets, kind="mse"):
    """Batch-mean loss.

    ``mse`` averages squared error over every output entry;
    ``softmax_cross_entropy`` averages the per-sample negative log-likelihood
    of integer labels.
    """
    outputs = as_matrix(outputs, "outputs")
    if kind == "mse":
        targets = as_matrix(targets, "targets")
        if targets.shape != outputs.shape:
            raise DimensionError(f"targets {targets.shape} != outputs {outputs.shape}")
        return float(np.mean(np.square(outputs - targets)))
    if kind == "softmax_cross_entropy":
        labels = _check_labels(targets, outputs.shape[1])
        if labels.shape[0] != outputs.shape[0]:
            raise DimensionError("one label per output row required")
        logp = _log_softmax(outputs)
        return float(-np.mean(logp[np.arange(labels.shape[0]), labels]))
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_grad(outputs, targets, kind="mse"):
    """Gradient of :func:`loss` with respect to ``outputs``."""
    if kind == "mse":
        return 2.0 * (outputs - targets) / outputs.size
    if kind == "softmax_cross_entropy":
        labels = _check_labels(targets, outputs.shape[1])
        probs = np.exp(_log_softmax(outputs))
        probs[np.arange(labels.shape[0]), labels] -= 1.0
        return probs / outputs.shape[0]
    raise ValueError(f"unknown loss kind {kind!r}")


def backward(layers, tape, targets, kind="mse"):
    """Gradients of the loss with respect to every layer's trainable factors.

    Returns a list aligned with ``layers``: ``(dB, dA)`` for layers with
    trainable factors, otherwise ``None``. Frozen tensors get no gradient.
    """
    grads = [None] * len(layers)
    upstream = loss_grad(tape.outputs, targets, kind)
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        dz = upstream * _activation_grad(tape.pre[idx], layer.activation)
        ad = layer.adapter
        if ad is not None and ad.B is not None:
            dB = layer.alpha * (dz.T @ tape.active_proj[idx])
            dA = layer.alpha * ((dz @ ad.B).T @ tape.inputs[idx])
            grads[idx] = (dB, dA)
        if idx == 0:
            break
        dx = dz @ layer.w0
        if ad is not None:
            if ad.merged_rank:
                dx = dx + layer.alpha * ((dz @ ad.merged_B) @ ad.merged_A)
            if ad.B is not None:
                dx = dx + layer.alpha * ((dz @ ad.B) @ ad.A)
        upstream = dx
    return grads


def evaluate(layers, inputs, targets, kind="mse"):
    outputs, _ = forward(layers, inputs)
    return loss(outputs, targets, kind)


def accuracy(layers, inputs, labels):
    outputs, _ = forward(layers, inputs)
    return float(np.mean(np.argmax(outputs, axis=1) == np.asarray(labels)))


def loss_and_grads(layers, inputs, targets, kind="mse"):
    outputs, tape = forward(layers, inputs)
    value = loss(outputs, targets, kind)
    return value, backward(layers, tape, targets, kind)
