"""Adam with decoupled weight decay, random moment pruning, and warmup ramps."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import NumericError


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class OptimizerSlot:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param):
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64))


def adam_step(param, grad, slot, cfg, lr):
    """One AdamW update; returns the new parameter and mutates ``slot``.

    A non-finite gradient raises :class:`NumericError` before anything is
    touched.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or slot.m.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, slot {slot.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    slot.step += 1
    slot.m = cfg.beta1 * slot.m + (1.0 - cfg.beta1) * grad
    slot.v = cfg.beta2 * slot.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = slot.m / (1.0 - cfg.beta1 ** slot.step)
    v_hat = slot.v / (1.0 - cfg.beta2 ** slot.step)
    update = lr * (m_hat / (np.sqrt(v_hat) + cfg.eps))
    if cfg.weight_decay:
        update = update + lr * cfg.weight_decay * param
    return param - update


def reset_states(slot, fraction, rng, reset_step_counter=True):
    """Zero a random ``floor(fraction * N)`` subset of moment entries.

    The same flat positions are cleared in ``m`` and ``v``. Parameters are
    not touched.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = slot.m.size
    # guard against 0.999 * 1000 landing a hair below 999
    count = min(n, int(math.floor(fraction * n + 1e-9)))
    if count:
        idx = rng.choice(n, size=count, replace=False)
        m = slot.m.reshape(-1).copy()
        v = slot.v.reshape(-1).copy()
        m[idx] = 0.0
        v[idx] = 0.0
        slot.m = m.reshape(slot.m.shape)
        slot.v = v.reshape(slot.v.shape)
    if reset_step_counter:
        slot.step = 0
    return slot


@dataclass
class WarmupSchedule:
    """Linear ramp at run start, a shorter ramp after every reset.

    ``decay`` is ``"constant"`` or ``"linear"`` (to zero at ``horizon``).
    """

    base_lr: float = 1e-3
    initial_warmup_steps: int = 100
    rewarmup_steps: int = 50
    decay: str = "constant"
    horizon: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.initial_warmup_steps < 0 or self.rewarmup_steps < 0:
            raise ValueError("warmup lengths must be non-negative")
        if self.decay not in ("constant", "linear"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.decay == "linear" and self.horizon <= 0:
            raise ValueError("linear decay needs a positive horizon")


def lr_at(schedule, global_step, steps_since_last_reset=None):
    """Learning rate for the update at ``global_step``.

    ``steps_since_last_reset`` is ``None`` until the first reset; after that
    it counts updates since the most recent reset (0 for the first one).
    """
    if steps_since_last_reset is None:
        window, pos = schedule.initial_warmup_steps, global_step
    else:
        window, pos = schedule.rewarmup_steps, steps_since_last_reset
    ramp = 1.0 if window == 0 or pos >= window else pos / window
    if schedule.decay == "linear":
        ramp *= max(0.0, 1.0 - global_step / schedule.horizon)
    return schedule.base_lr * ramp
