"""Fixed-rank LoRA and the cycle-based ReLoRA schedule.

Both trainers reuse the controller's primitives and emit the same
:class:`RunRecord` stream, so runs line up column for column.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .analysis import adapter_flops
from .controller import (
    RunRecord, RunResult, TrainingError, _apply_update, _checked_loss, _reset,
    ControllerConfig, DISABLED_EPS_IN, DISABLED_EPS_OUT, merge_and_reinit, prepare, snapshot,
)
from .linalg import NumericError, kaiming_init, spawn_rngs
from .optim import AdamConfig, OptimizerSlot, WarmupSchedule, adam_step, lr_at
from .tasks import Batcher


@dataclass
class LoraConfig:
    rank: int = 3
    alpha: float = 4.0  # applied as alpha / rank
    T: int = 3000
    eval_every: int = 10

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.T < 1 or self.eval_every < 1:
            raise ValueError("T and eval_every must be positive")


@dataclass
class ReloraConfig:
    rank: int = 1  # per-cycle rank; only rank-one cycles are supported
    T_in: int = 200
    T: int = 3000
    alpha: float = 4.0
    prune_fraction: float = 0.999
    reset_step_counter: bool = True
    eval_every: int = 10

    def __post_init__(self):
        if self.rank != 1:
            raise ValueError("only rank-one cycles are supported")
        if self.T_in < 1 or self.T < 1 or self.eval_every < 1:
            raise ValueError("T_in, T and eval_every must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.prune_fraction <= 1.0:
            raise ValueError("prune_fraction must lie in [0, 1]")

    @property
    def cycles(self):
        return self.T // self.T_in

    def as_controller(self):
        """The equivalent controller setup with both stopping rules disabled."""
        return ControllerConfig(
            T=self.T, T_in=self.T_in, dT_in=self.T_in, eps_in=DISABLED_EPS_IN,
            eps_out=DISABLED_EPS_OUT, alpha=self.alpha, prune_fraction=self.prune_fraction,
            reset_step_counter=self.reset_step_counter, eval_every=self.eval_every)


def train_lora(layers, task, cfg, adam=None, schedule=None, seed=0, adapt=None):
    """Plain LoRA at constant rank; only the initial warmup ramp applies."""
    adam = adam or AdamConfig()
    schedule = schedule or WarmupSchedule()
    layers = copy.deepcopy(layers)
    # same stream layout as the controller so step-0 draws coincide
    init_rng, _, batch_rng = spawn_rngs(seed, 3)
    indices = list(range(len(layers)) if adapt is None else adapt)
    if not indices:
        raise ValueError("at least one adapted module is required")
    slots = {}
    for idx in indices:
        layer = layers[idx]
        m, n = layer.w0.shape
        if cfg.rank > min(m, n):
            raise ValueError(f"rank {cfg.rank} exceeds min({m}, {n}) for layer {idx}")
        layer.alpha = cfg.alpha / cfg.rank
        ad = layer.attach()
        A = np.vstack([kaiming_init(init_rng, n, n) for _ in range(cfg.rank)])
        ad.set_active(np.zeros((m, cfg.rank)), A)
        slots[idx] = {"B": OptimizerSlot.zeros_like(ad.B), "A": OptimizerSlot.zeros_like(ad.A)}

    shapes = [layers[i].w0.shape for i in indices]
    ranks = tuple(cfg.rank for _ in indices)
    params = tuple((m + n) * cfg.rank for m, n in shapes)
    flops = tuple(adapter_flops(m, n, cfg.rank) for m, n in shapes)

    def row(step, lr, value, metric):
        return RunRecord(step, ranks, params, float(lr), float(value),
                         None if metric is None else float(metric), flops)

    batcher = Batcher(task, batch_rng)
    records = []
    try:
        for step in range(cfg.T):
            lr = lr_at(schedule, step, None)
            x, y = batcher.next()
            value, grads = mdl.loss_and_grads(layers, x, y, task.loss_kind)
            _checked_loss(value, records)
            metric = task.eval_metric(layers) if step % cfg.eval_every == 0 else None
            records.append(row(step, lr, value, metric))
            for idx in indices:
                ad = layers[idx].adapter
                dB, dA = grads[idx]
                B = adam_step(ad.B, dB, slots[idx]["B"], adam, lr)
                A = adam_step(ad.A, dA, slots[idx]["A"], adam, lr)
                ad.B, ad.A = B, A
    except NumericError as exc:
        if isinstance(exc, TrainingError):
            raise
        raise TrainingError(str(exc), records) from exc
    final = _checked_loss(task.train_loss(layers), records)
    records.append(row(cfg.T, 0.0, final, task.eval_metric(layers)))
    return RunResult(layers, records, [], "budget")


def train_relora(layers, task, cfg, adam=None, schedule=None, seed=0, adapt=None):
    """Merge a rank-one pair every ``T_in`` steps, ``floor(T / T_in)`` times.

    Each merge is followed by Reinit, Reset and a re-warmup ramp. Random
    streams are consumed in the controller's order, so the output matches
    :func:`aroma.controller.run` with disabled criteria bit for bit.
    """
    adam = adam or AdamConfig()
    schedule = schedule or WarmupSchedule()
    layers = copy.deepcopy(layers)
    ccfg = cfg.as_controller()
    init_rng, reset_rng, batch_rng = spawn_rngs(seed, 3)
    modules = prepare(layers, ccfg, init_rng, adapt)
    batcher = Batcher(task, batch_rng)
    records = []
    since_reset = None
    step = 0
    try:
        while step < cfg.T:
            lr = lr_at(schedule, step, since_reset)
            x, y = batcher.next()
            value, grads = mdl.loss_and_grads(layers, x, y, task.loss_kind)
            _checked_loss(value, records)
            metric = task.eval_metric(layers) if step % cfg.eval_every == 0 else None
            records.append(snapshot(step, modules, lr, value, metric))
            for ms in modules:
                _apply_update(ms, grads[ms.index], adam, lr)
                ms.inner_step += 1
            step += 1
            since_reset = None if since_reset is None else since_reset + 1
            if step % cfg.T_in == 0:
                for ms in modules:
                    merge_and_reinit(ms, init_rng)
                    _reset(ms, ccfg, reset_rng)
                since_reset = 0
    except NumericError as exc:
        if isinstance(exc, TrainingError):
            raise
        raise TrainingError(str(exc), records) from exc
    final = _checked_loss(task.train_loss(layers), records)
    records.append(snapshot(step, modules, 0.0, final, task.eval_metric(layers)))
    return RunResult(layers, records, modules, "budget")
