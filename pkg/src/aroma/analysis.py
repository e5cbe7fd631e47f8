"""Effective rank, rank reports, flop accounting, and pair cosine diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import singular_values


def effective_rank(m, tail_cut=1e-12):
    """``exp`` of the Shannon entropy (natural log) of the normalized singular values.

    Values below ``tail_cut * sigma_1`` are dropped before normalizing; the
    zero matrix has effective rank 0.
    """
    sigma = singular_values(m)
    if sigma.size == 0 or sigma[0] <= 0.0:
        return 0.0
    sigma = sigma[sigma > tail_cut * sigma[0]]
    p = sigma / sigma.sum()
    return float(math.exp(-np.sum(p * np.log(p))))


@dataclass
class ModuleRank:
    module_id: int
    nominal: int
    effective: float
    ratio: float


@dataclass
class RankReport:
    modules: list = field(default_factory=list)

    @property
    def mean_ratio(self):
        ranked = [r.ratio for r in self.modules if r.nominal > 0]
        return float(np.mean(ranked)) if ranked else 1.0

    @property
    def total_rank(self):
        return sum(r.nominal for r in self.modules)

    def to_dict(self):
        return {
            "modules": [asdict(r) for r in self.modules],
            "total_rank": self.total_rank,
            "mean_ratio": self.mean_ratio,
        }


def rank_report(layers, tail_cut=1e-12):
    """Nominal rank (merged pair count) and effective rank of every adapter's merged update.

    A module with nothing merged reports ratio 1 by convention.
    """
    report = RankReport()
    for idx, layer in enumerate(layers):
        ad = layer.adapter
        if ad is None:
            continue
        nominal = ad.merged_rank
        eff = effective_rank(ad.merged_delta(), tail_cut) if nominal else 0.0
        ratio = eff / nominal if nominal else 1.0
        report.modules.append(ModuleRank(idx, nominal, eff, ratio))
    return report


def adapter_flops(m, n, width):
    """Multiply-adds for ``B (A x)`` with inner dimension ``width``.

    A length-k dot product counts k multiplies and k-1 adds. The base
    ``W0 x`` product is shared by every method and excluded.
    """
    if width <= 0:
        return 0
    return width * (2 * n - 1) + m * (2 * width - 1)


def adalora_flops(m, n, rank):
    """``P (Lambda (Q x))``: the diagonal scaling adds ``rank`` multiplies."""
    if rank <= 0:
        return 0
    return rank * (2 * n - 1) + rank + m * (2 * rank - 1)


def flops_step(method, m, n, width):
    """Exact per-sample adapter cost and its big-O form for one method.

    ``method`` is ``"aroma"`` (width = current outer step p), ``"lora"``
    (width = r) or ``"adalora"`` (width = current rank r~).
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if method in ("aroma", "lora"):
        sym = "p" if method == "aroma" else "r"
        return adapter_flops(m, n, width), f"O((m+n){sym})"
    if method == "adalora":
        return adalora_flops(m, n, width), "O((m+n)r~)"
    raise ValueError(f"unknown method {method!r}")


def overall_complexity(method, m, n, T, *, r=None, r_initial=None, r_final=None, P=None):
    """Closed-form whole-run cost (leading terms only)."""
    if method == "lora":
        return (m + n) * r * T
    if method == "adalora":
        return (m + n) * (r_initial + r_final) / 2 * T
    if method == "aroma":
        return (m + n) * T * (1 + P) / 2
    raise ValueError(f"unknown method {method!r}")


@dataclass
class FlopLedger:
    aroma_actual: list  # counted per step, summed over modules
    lora_formula: int
    adalora_formula: int
    lora_rank: int
    adalora_rank: int

    def to_dict(self):
        steps = self.aroma_actual
        return {
            "aroma_actual_total": int(sum(steps)),
            "aroma_actual_mean": float(np.mean(steps)) if steps else 0.0,
            "aroma_actual_max": int(max(steps)) if steps else 0,
            "lora_formula": self.lora_formula,
            "lora_rank": self.lora_rank,
            "adalora_formula": self.adalora_formula,
            "adalora_rank": self.adalora_rank,
        }


def flop_ledger(shapes, step_flops, lora_rank=8, adalora_rank=12):
    """Compare counted per-step cost against the fixed-rank formulas on the same shapes."""
    lora = sum(adapter_flops(m, n, lora_rank) for m, n in shapes)
    ada = sum(adalora_flops(m, n, adalora_rank) for m, n in shapes)
    return FlopLedger(list(step_flops), lora, ada, lora_rank, adalora_rank)


def pair_cosine(b1, a1, b2, a2):
    """Cosine between ``vec(b1 a1^T)`` and ``vec(b2 a2^T)``; sign flips of (b, a) cancel."""
    den = np.linalg.norm(b1) * np.linalg.norm(a1) * np.linalg.norm(b2) * np.linalg.norm(a2)
    if den == 0.0:
        return 0.0
    return float((b1 @ b2) * (a1 @ a2) / den)


def cosine_similarity_probe(pairs_a, pairs_b):
    """Cosine matrices between two runs' merged pairs, per module.

    ``pairs_a`` and ``pairs_b`` map module id to a list of ``(b, a)`` pairs in
    merge order. Entry ``[i, j]`` compares pair i of run a with pair j of run
    b; the diagonal aligns pairs by outer step.
    """
    if set(pairs_a) != set(pairs_b):
        raise ValueError("runs cover different module sets")
    out = {}
    for key in pairs_a:
        pa, pb = pairs_a[key], pairs_b[key]
        mat = np.zeros((len(pa), len(pb)))
        for i, (b1, a1) in enumerate(pa):
            for j, (b2, a2) in enumerate(pb):
                mat[i, j] = pair_cosine(b1, a1, b2, a2)
        out[key] = mat
    return out
