"""Experiment configuration: a small line-oriented ``key = value`` format.

Grammar::

    # full-line comment
    [section]
    key = value

Sections are ``run``, ``task``, ``adam``, ``schedule`` and exactly one
method section (``aroma``, ``lora`` or ``relora``). Keys are the field names
of the matching dataclass; values are typed from the field's default
(integers, floats including ``inf``/``-inf``, ``true``/``false``, bare
strings). ``task.m`` and ``task.n`` are required; everything else has a
default. Errors carry the 1-based line number they refer to.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .baselines import LoraConfig, ReloraConfig
from .controller import ControllerConfig
from .optim import AdamConfig, WarmupSchedule
from .tasks import TaskSpec

METHODS = {"aroma": ControllerConfig, "lora": LoraConfig, "relora": ReloraConfig}
REQUIRED = {"task": ("m", "n")}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class RunSection:
    method: str = "aroma"
    seed: int = 0
    name: str = "run"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {sorted(METHODS)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not self.name or any(c in self.name for c in "/\\") or self.name in (".", ".."):
            raise ValueError("name must be a plain file-name stem")


@dataclass
class ExperimentConfig:
    task: TaskSpec
    method: str = "aroma"
    method_config: object = field(default_factory=ControllerConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    schedule: WarmupSchedule = field(default_factory=WarmupSchedule)
    seed: int = 0
    name: str = "run"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not isinstance(self.method_config, METHODS[self.method]):
            raise ValueError(f"method {self.method!r} needs a {METHODS[self.method].__name__}")


def _parse_value(raw, default, key, line):
    kind = type(default)
    if kind is bool:
        if raw in ("true", "false"):
            return raw == "true"
        raise ConfigError(f"key {key!r} expects true or false, got {raw!r}", line)
    if kind is int:
        try:
            return int(raw, 10)
        except ValueError:
            raise ConfigError(f"key {key!r} expects an integer, got {raw!r}", line) from None
    if kind is float:
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"key {key!r} expects a number, got {raw!r}", line) from None
        if math.isnan(value):
            raise ConfigError(f"key {key!r} must not be nan", line)
        return value
    if not raw:
        raise ConfigError(f"key {key!r} must not be empty", line)
    return raw


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fields(cls):
    """Field name -> default for a dataclass whose fields all have scalar defaults."""
    return {f.name: f.default for f in dataclasses.fields(cls)}


def _build(cls, values, header_line):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), header_line) from None


def parse_config(text):
    """Parse and validate config text into an :class:`ExperimentConfig`."""
    schema = {"run": RunSection, "task": TaskSpec, "adam": AdamConfig, "schedule": WarmupSchedule}
    schema.update(METHODS)
    sections = {}  # name -> (header line, {key: value})
    current = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            name = line[1:-1].strip()
            if name not in schema:
                raise ConfigError(f"unknown section [{name}]", lineno)
            if name in sections:
                raise ConfigError(f"duplicate section [{name}]", lineno)
            sections[name] = (lineno, {})
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        defaults = _fields(schema[current])
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in [{current}]", lineno)
        values = sections[current][1]
        if key in values:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno)
        values[key] = _parse_value(raw, defaults[key], key, lineno)

    for sec, keys in REQUIRED.items():
        if sec not in sections:
            raise ConfigError(f"missing required section [{sec}]")
        header, values = sections[sec]
        for key in keys:
            if key not in values:
                raise ConfigError(f"missing required key {key!r} in [{sec}]", header)

    present = [name for name in METHODS if name in sections]
    run_line, run_values = sections.get("run", (None, {}))
    if len(present) > 1:
        raise ConfigError(f"more than one method section: {present}", sections[present[1]][0])
    if "method" in run_values:
        method = run_values["method"]
        if present and present[0] != method:
            raise ConfigError(f"[{present[0]}] given but run.method is {method!r}",
                              sections[present[0]][0])
    elif present:
        run_values = dict(run_values, method=present[0])
    run = _build(RunSection, run_values, run_line)

    def built(name, cls):
        header, values = sections.get(name, (None, {}))
        return _build(cls, values, header)

    return ExperimentConfig(
        task=built("task", TaskSpec),
        method=run.method,
        method_config=built(run.method, METHODS[run.method]),
        adam=built("adam", AdamConfig),
        schedule=built("schedule", WarmupSchedule),
        seed=run.seed,
        name=run.name,
    )


def format_config(cfg):
    """Normalized text form: every section and key, in a fixed order."""
    blocks = [
        ("run", RunSection(cfg.method, cfg.seed, cfg.name)),
        ("task", cfg.task),
        (cfg.method, cfg.method_config),
        ("adam", cfg.adam),
        ("schedule", cfg.schedule),
    ]
    out = []
    for name, obj in blocks:
        out.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
