from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from aroma.controller import ControllerConfig
from aroma.optim import WarmupSchedule
from aroma.tasks import TaskSpec, make_task

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

# criterion number -> (passed, description); filled by test_acceptance.py
ACCEPTANCE = {}

ROOT = Path(__file__).resolve().parents[1]
SYNTH = ROOT / "configs" / "synthetic"


def recovery_spec(seed=0, **kw):
    """The noise-free 32x32 rank-3 regression task used for acceptance runs."""
    base = dict(m=32, n=32, true_rank=3, noise_std=0.0, base_scale=16.0, target_scale=4.0, seed=seed)
    base.update(kw)
    return TaskSpec(**base)


def recovery_controller(**kw):
    base = dict(T=8000, T_in=500, dT_in=50, eps_in=0.1, eps_out=1e-3, alpha=4.0)
    base.update(kw)
    return ControllerConfig(**base)


RECOVERY_SCHEDULE = WarmupSchedule(base_lr=1e-2)


@pytest.fixture
def recovery_task():
    return make_task(recovery_spec())


@pytest.fixture
def small_task():
    """Cheap 2-layer regression task for bookkeeping tests."""
    return make_task(TaskSpec(m=6, n=5, n_layers=2, true_rank=2, n_samples=32, n_eval=16,
                              base_scale=4.0, target_scale=1.0, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, text = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {text}")
