"""Dual-loop rank growth.

Every adapted module trains one rank-one pair at a time. The inner loop runs
until the pair's norm stops growing (checked every ``dT_in`` steps) or
``T_in`` steps pass; modules wait for each other at that barrier. At the
barrier each module either freezes (its pair is negligible relative to the
current weight, and is discarded) or merges the pair, draws a fresh one and
resets its optimizer moments. The run stops when every module is frozen or
after ``T`` steps.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .analysis import adapter_flops
from .linalg import NumericError, fro_norm, kaiming_init, rank_one_fro_norm, spawn_rngs
from .optim import AdamConfig, OptimizerSlot, WarmupSchedule, adam_step, lr_at, reset_states
from .tasks import Batcher

DISABLED_EPS_IN = -math.inf
DISABLED_EPS_OUT = 0.0


@dataclass
class ControllerConfig:
    T: int = 3000
    T_in: int = 200
    dT_in: int = 10
    eps_in: float = 0.1
    eps_out: float = 1e-3
    alpha: float = 4.0
    prune_fraction: float = 0.999
    guard_delta: float = 1e-12
    reset_optimizer: bool = True
    reset_step_counter: bool = True
    inner_abs: bool = False
    eval_every: int = 0  # 0: every dT_in steps

    def __post_init__(self):
        if self.T < 1 or self.T_in < 1 or self.dT_in < 1:
            raise ValueError("T, T_in and dT_in must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.prune_fraction <= 1.0:
            raise ValueError("prune_fraction must lie in [0, 1]")
        if self.guard_delta <= 0:
            raise ValueError("guard_delta must be positive")

    @property
    def eval_interval(self):
        return self.eval_every or self.dT_in


@dataclass
class ModuleState:
    index: int  # position of the layer in the stack
    layer: mdl.AdaptedLayer
    outer_step: int = 1
    inner_step: int = 0
    prev_pair_norm: float = 0.0
    inner_converged: bool = False
    outer_converged: bool = False
    frozen: bool = False
    slots: dict | None = None
    pair_log: list = field(default_factory=list)  # merged (b, a) in order
    discarded: tuple | None = None

    @property
    def adapter(self):
        return self.layer.adapter

    @property
    def rank(self):
        return self.adapter.merged_rank

    @property
    def shape(self):
        return self.layer.w0.shape


@dataclass
class RunRecord:
    step: int
    ranks: tuple
    module_params: tuple
    lr: float
    train_loss: float
    eval_metric: float | None
    module_flops: tuple

    @property
    def trainable_params(self):
        return int(sum(self.module_params))

    @property
    def flops_step(self):
        return int(sum(self.module_flops))


@dataclass
class RunResult:
    layers: list
    records: list
    modules: list
    terminated: str  # "converged" or "budget"

    @property
    def pair_logs(self):
        return {ms.index: list(ms.pair_log) for ms in self.modules}


class TrainingError(NumericError):
    """Numeric failure mid-run; ``records`` holds every row emitted so far."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def inner_check(pair, prev_norm, eps_in, guard_delta=1e-12, absolute=False):
    """Relative growth of ``||b a^T||_F`` since the previous check is below ``eps_in``.

    A baseline below ``guard_delta`` never counts as converged.
    """
    if prev_norm < guard_delta:
        return False
    change = (rank_one_fro_norm(pair.b, pair.a) - prev_norm) / prev_norm
    if absolute:
        change = abs(change)
    return change < eps_in


def outer_check(pair, alpha, base_plus_merged_norm, eps_out):
    """``alpha ||b a^T||_F / ||W0 + alpha B A||_F < eps_out``."""
    if not base_plus_merged_norm > 0.0:
        raise NumericError("weight norm in the outer criterion must be positive")
    return alpha * rank_one_fro_norm(pair.b, pair.a) / base_plus_merged_norm < eps_out


def weight_norm(module):
    """``||W0 + alpha * merged||_F`` for the module's current accumulator."""
    layer = module.layer
    return fro_norm(layer.w0 + layer.alpha * module.adapter.merged_delta())


def init_pair(module, rng):
    m, n = module.shape
    module.adapter.set_pair(np.zeros(m), kaiming_init(rng, n, n))
    module.slots = {"B": OptimizerSlot.zeros_like(module.adapter.B),
                    "A": OptimizerSlot.zeros_like(module.adapter.A)}


def merge_and_reinit(module, rng):
    """Fold the active pair into the accumulator and start a fresh one (b = 0, Kaiming a).

    Optimizer slots are kept; resetting them is a separate step.
    """
    if module.outer_converged or module.frozen:
        raise ValueError("cannot merge into a converged module")
    pair = module.adapter.active
    module.pair_log.append((pair.b.copy(), pair.a.copy()))
    slots = module.slots
    module.adapter.merge_active()
    m, n = module.shape
    module.adapter.set_pair(np.zeros(m), kaiming_init(rng, n, n))
    module.slots = slots
    module.outer_step += 1
    module.inner_step = 0
    module.prev_pair_norm = 0.0
    module.inner_converged = False
    return module


def freeze_module(module):
    """Stop training; the unmerged pair is discarded and slots dropped."""
    pair = module.adapter.active
    if pair is not None:
        module.discarded = (pair.b.copy(), pair.a.copy())
    module.adapter.discard_active()
    module.outer_converged = True
    module.frozen = True
    module.slots = None
    return module


def count_trainable(modules):
    return sum(sum(ms.shape) for ms in modules if not ms.frozen)


def module_flops(module):
    m, n = module.shape
    width = module.rank + (0 if module.frozen else 1)
    return adapter_flops(m, n, width)


def snapshot(step, modules, lr, train_loss, eval_metric):
    return RunRecord(
        step=step,
        ranks=tuple(ms.rank for ms in modules),
        module_params=tuple(0 if ms.frozen else sum(ms.shape) for ms in modules),
        lr=float(lr),
        train_loss=float(train_loss),
        eval_metric=None if eval_metric is None else float(eval_metric),
        module_flops=tuple(module_flops(ms) for ms in modules),
    )


def _apply_update(module, grads, adam, lr):
    dB, dA = grads
    ad = module.adapter
    B = adam_step(ad.B, dB, module.slots["B"], adam, lr)
    A = adam_step(ad.A, dA, module.slots["A"], adam, lr)
    ad.B, ad.A = B, A


def _reset(module, config, rng):
    if not config.reset_optimizer:
        return
    for key in ("B", "A"):
        reset_states(module.slots[key], config.prune_fraction, rng, config.reset_step_counter)


def _checked_loss(value, records):
    if not math.isfinite(value):
        raise TrainingError("loss became non-finite", records)
    return value


def prepare(layers, config, init_rng, adapt=None):
    """Attach empty adapters to the chosen layers and draw their first pairs."""
    indices = range(len(layers)) if adapt is None else adapt
    modules = []
    for idx in indices:
        layer = layers[idx]
        layer.alpha = config.alpha
        layer.attach()
        ms = ModuleState(idx, layer)
        init_pair(ms, init_rng)
        modules.append(ms)
    if not modules:
        raise ValueError("at least one adapted module is required")
    return modules


def run(layers, task, config, adam=None, schedule=None, seed=0, adapt=None, hooks=None):
    """Train with adaptive rank growth.

    ``layers`` is copied, never mutated. One :class:`RunRecord` is emitted
    per update (describing the state the update ran from), plus a final row
    for the finished model. ``hooks(event, step, module, layers)`` is called
    with ``"before_merge"``, ``"after_merge"`` and ``"freeze"``.
    """
    adam = adam or AdamConfig()
    schedule = schedule or WarmupSchedule()
    layers = copy.deepcopy(layers)
    init_rng, reset_rng, batch_rng = spawn_rngs(seed, 3)
    modules = prepare(layers, config, init_rng, adapt)
    batcher = Batcher(task, batch_rng)
    records = []
    since_reset = None
    step = 0

    def emit(event, ms):
        if hooks is not None:
            hooks(event, step, ms, layers)

    try:
        while step < config.T and any(not ms.frozen for ms in modules):
            live = [ms for ms in modules if not ms.frozen]
            lr = lr_at(schedule, step, since_reset)
            x, y = batcher.next()
            value, grads = mdl.loss_and_grads(layers, x, y, task.loss_kind)
            _checked_loss(value, records)
            metric = task.eval_metric(layers) if step % config.eval_interval == 0 else None
            records.append(snapshot(step, modules, lr, value, metric))

            for ms in live:
                _apply_update(ms, grads[ms.index], adam, lr)
                ms.inner_step += 1
            t = live[0].inner_step

            all_inner = False
            if t % config.dT_in == 0:
                for ms in live:
                    pair = ms.adapter.active
                    if inner_check(pair, ms.prev_pair_norm, config.eps_in,
                                   config.guard_delta, config.inner_abs):
                        ms.inner_converged = True
                    ms.prev_pair_norm = rank_one_fro_norm(pair.b, pair.a)
                all_inner = all(ms.inner_converged for ms in live)

            step += 1
            since_reset = None if since_reset is None else since_reset + 1
            if all_inner or t >= config.T_in:
                merged = False
                for ms in live:
                    if outer_check(ms.adapter.active, ms.layer.alpha, weight_norm(ms), config.eps_out):
                        freeze_module(ms)
                        emit("freeze", ms)
                    else:
                        emit("before_merge", ms)
                        merge_and_reinit(ms, init_rng)
                        _reset(ms, config, reset_rng)
                        merged = True
                        emit("after_merge", ms)
                if merged:
                    since_reset = 0
    except NumericError as exc:
        if isinstance(exc, TrainingError):
            raise
        raise TrainingError(str(exc), records) from exc

    final = _checked_loss(task.train_loss(layers), records)
    records.append(snapshot(step, modules, 0.0, final, task.eval_metric(layers)))
    terminated = "converged" if all(ms.frozen for ms in modules) else "budget"
    return RunResult(layers, records, modules, terminated)
