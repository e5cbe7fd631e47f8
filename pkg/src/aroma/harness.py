"""End-to-end experiment runner and its on-disk formats.

Each run writes four files under ``<output root>/<name>/``:

``records.csv``
    One row per (step, module), header ``step,module_id,rank,
    trainable_params,lr,train_loss,eval_metric,flops_step``. ``rank``,
    ``trainable_params`` and ``flops_step`` are per module (sum over a
    step's rows for the global value); ``lr``, ``train_loss`` and
    ``eval_metric`` are global and repeated. ``eval_metric`` is empty on
    steps without evaluation. Floats use Python's shortest round-trip
    ``repr``. The last step is the finished model (``lr`` 0).
``summary.json``
    Final ranks, rank report, flop ledger and termination reason.
``checkpoint.npz``
    Frozen weights and merged factors, readable by :func:`load_checkpoint`.
``config.cfg``
    The normalized config the run used.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .analysis import flop_ledger, rank_report
from .baselines import train_lora, train_relora
from .config import ConfigError, format_config, load_config
from .controller import TrainingError, run
from .linalg import NumericError
from .tasks import make_task

OUTPUT_ENV = "AROMA_OUTPUT_ROOT"
CSV_COLUMNS = ("step", "module_id", "rank", "trainable_params", "lr",
               "train_loss", "eval_metric", "flops_step")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_OUTPUT = 3
EXIT_NUMERIC = 4


class OutputError(OSError):
    pass


@dataclass
class ExperimentResult:
    status: int
    run_dir: str | None
    records: list
    summary: dict | None
    message: str = ""


def output_root(explicit=None):
    if explicit:
        return explicit
    return os.environ.get(OUTPUT_ENV) or "runs"


def module_ids(cfg):
    return list(range(cfg.task.n_layers))


def train(cfg):
    """Build the task and run the configured trainer; returns ``(task, RunResult)``."""
    task = make_task(cfg.task)
    layers = task.fresh_layers()
    kw = dict(adam=cfg.adam, schedule=cfg.schedule, seed=cfg.seed)
    if cfg.method == "aroma":
        return task, run(layers, task, cfg.method_config, **kw)
    if cfg.method == "lora":
        return task, train_lora(layers, task, cfg.method_config, **kw)
    return task, train_relora(layers, task, cfg.method_config, **kw)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records, ids):
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        glob = (_fmt(rec.lr), _fmt(rec.train_loss), _fmt(rec.eval_metric))
        for k, mid in enumerate(ids):
            lines.append(",".join((
                str(rec.step), str(mid), str(rec.ranks[k]), str(rec.module_params[k]),
                *glob, str(rec.module_flops[k]))))
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Parse a records CSV into a list of row dicts (values kept as strings)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = tuple(lines[0].split(","))
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def summarize(cfg, task, result):
    last = result.records[-1]
    shapes = [l.w0.shape for l in result.layers if l.adapter is not None]
    ledger = flop_ledger(shapes, [r.flops_step for r in result.records[:-1]])
    return {
        "name": cfg.name,
        "method": cfg.method,
        "seed": cfg.seed,
        "terminated": result.terminated,
        "steps": last.step,
        "final_ranks": list(last.ranks),
        "total_rank": int(sum(last.ranks)),
        "final_trainable_params": last.trainable_params,
        "final_train_loss": last.train_loss,
        "final_eval_metric": last.eval_metric,
        "rank_report": rank_report(result.layers).to_dict(),
        "flop_ledger": ledger.to_dict(),
    }


def save_checkpoint(path, layers):
    arrays = {"n_layers": np.array(len(layers))}
    for i, layer in enumerate(layers):
        arrays[f"w0_{i}"] = layer.w0
        arrays[f"alpha_{i}"] = np.array(layer.alpha)
        arrays[f"activation_{i}"] = np.array(layer.activation)
        if layer.bias is not None:
            arrays[f"bias_{i}"] = layer.bias
        if layer.adapter is not None:
            arrays[f"merged_B_{i}"] = layer.adapter.merged_B
            arrays[f"merged_A_{i}"] = layer.adapter.merged_A
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Rebuild the finished layer stack (merged factors only, no active pairs)."""
    with np.load(path, allow_pickle=False) as data:
        layers = []
        for i in range(int(data["n_layers"])):
            bias = data[f"bias_{i}"] if f"bias_{i}" in data else None
            layer = mdl.AdaptedLayer(data[f"w0_{i}"], bias, None, float(data[f"alpha_{i}"]),
                                     str(data[f"activation_{i}"]))
            if f"merged_B_{i}" in data:
                layer.adapter = mdl.Adapter(np.array(data[f"merged_B_{i}"]),
                                            np.array(data[f"merged_A_{i}"]))
            layers.append(layer)
    return layers


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _prepare_dir(root, name):
    run_dir = os.path.join(root, name)
    try:
        os.makedirs(run_dir, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {run_dir}: {exc}") from exc
    if not os.access(run_dir, os.W_OK):
        raise OutputError(f"output directory {run_dir} is not writable")
    return run_dir


def run_experiment(cfg, root=None):
    """Run one experiment and persist its outputs; never raises for expected failures."""
    try:
        run_dir = _prepare_dir(output_root(root), cfg.name)
    except OutputError as exc:
        return ExperimentResult(EXIT_OUTPUT, None, [], None, str(exc))
    ids = module_ids(cfg)
    try:
        task, result = train(cfg)
    except TrainingError as exc:
        try:
            _write(os.path.join(run_dir, "records.csv"), records_to_csv(exc.records, ids))
        except OSError:
            pass
        return ExperimentResult(EXIT_NUMERIC, run_dir, exc.records, None, f"numeric failure: {exc}")
    except NumericError as exc:
        return ExperimentResult(EXIT_NUMERIC, run_dir, [], None, f"numeric failure: {exc}")
    summary = summarize(cfg, task, result)
    try:
        _write(os.path.join(run_dir, "records.csv"), records_to_csv(result.records, ids))
        _write(os.path.join(run_dir, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
        _write(os.path.join(run_dir, "config.cfg"), format_config(cfg))
        save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), result.layers)
    except OSError as exc:
        return ExperimentResult(EXIT_OUTPUT, run_dir, result.records, summary, f"cannot write outputs: {exc}")
    return ExperimentResult(EXIT_OK, run_dir, result.records, summary)


def align_records(record_lists):
    """Pad every run to the longest step count by repeating its final row.

    A finished run keeps its final state, so repeating the terminal row is
    the honest continuation; the padded rows carry ``lr`` 0 and no eval.
    """
    end = max(recs[-1].step for recs in record_lists)
    out = []
    for recs in record_lists:
        recs = list(recs)
        last = recs[-1]
        for step in range(last.step + 1, end + 1):
            recs.append(type(last)(step, last.ranks, last.module_params, 0.0, last.train_loss,
                                   None, last.module_flops))
        out.append(recs)
    return out


def compare(cfgs, root=None):
    """Run several experiments, then write step-aligned ``aligned.csv`` files next to each."""
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError(f"compare needs distinct run names, got {names}")
    results = [run_experiment(c, root) for c in cfgs]
    bad = [r for r in results if r.status != EXIT_OK]
    if bad:
        return results, bad[0].status
    aligned = align_records([r.records for r in results])
    try:
        for cfg, res, recs in zip(cfgs, results, aligned):
            _write(os.path.join(res.run_dir, "aligned.csv"), records_to_csv(recs, module_ids(cfg)))
    except OSError:
        return results, EXIT_OUTPUT
    return results, EXIT_OK


def load_and_run(path, root=None):
    """Read a config file and run it; config problems map to their own exit code."""
    try:
        cfg = load_config(path)
    except OSError as exc:
        return ExperimentResult(EXIT_CONFIG, None, [], None, f"cannot read config {path}: {exc}")
    except ConfigError as exc:
        return ExperimentResult(EXIT_CONFIG, None, [], None, f"{path}: {exc}")
    return run_experiment(cfg, root)
