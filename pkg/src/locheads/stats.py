"""Attention-sum statistics and the max-curvature threshold.

The first discovery criterion scores each head by how much of the final
text token's attention lands on image positions. Heads are thresholded at
the point of maximum discrete curvature of the sorted per-head mean sums,
so the cutoff adapts to the corpus instead of being hand picked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .types import AttentionDump, AttnMap, HeadId, LocheadsError


@dataclass
class HeadStats:
    """Per-head mean attention sums over a corpus, keyed by HeadId."""

    mean_sums: dict[HeadId, float]
    num_samples: int


@dataclass
class ThresholdResult:
    """Curvature threshold plus the sorted curve it was read from.

    curve[i] is the i-th smallest mean sum and heads[i] its owner;
    tau == curve[curvature_index].
    """

    tau: float
    curve: np.ndarray
    heads: list[HeadId]
    curvature_index: int

    @property
    def sorted_curve(self) -> list[tuple[int, float]]:
        return [(i, float(v)) for i, v in enumerate(self.curve)]


def attention_sum(attn: AttnMap) -> float:
    """Total attention mass on the image: sum of all P*P entries."""
    return float(attn.values.sum(dtype=np.float64))


def dump_attention_sums(dump: AttentionDump) -> np.ndarray:
    """Per-head attention sums for one dump, shape (layers, heads)."""
    return dump.maps.sum(axis=(2, 3), dtype=np.float64)


def mean_attention_sums(
    corpus: Iterable[AttentionDump], excluded_layers: int = 2
) -> HeadStats:
    """Mean per-head attention sum over a corpus.

    The first excluded_layers layers are dropped before any ranking; their
    sums are dominated by positional effects rather than content. To make
    the result invariant to corpus order, per-sample sums are accumulated
    in sorted sample-id order.
    """
    per_sample: dict[str, np.ndarray] = {}
    geometry: tuple[int, int] | None = None
    for dump in corpus:
        if dump.sample_id in per_sample:
            raise LocheadsError(f"duplicate sample id {dump.sample_id!r}")
        if geometry is None:
            geometry = (dump.num_layers, dump.num_heads)
        elif geometry != (dump.num_layers, dump.num_heads):
            raise LocheadsError(
                f"sample {dump.sample_id!r} has head layout "
                f"{(dump.num_layers, dump.num_heads)}, expected {geometry}"
            )
        per_sample[dump.sample_id] = dump_attention_sums(dump)
    if not per_sample:
        raise LocheadsError("empty corpus")
    num_layers, num_heads = geometry
    if excluded_layers >= num_layers:
        raise LocheadsError(
            f"excluded_layers={excluded_layers} leaves no layers "
            f"out of {num_layers}"
        )
    acc = np.zeros((num_layers, num_heads), dtype=np.float64)
    for sample_id in sorted(per_sample):
        acc += per_sample[sample_id]
    acc /= len(per_sample)
    mean_sums = {
        HeadId(layer, head): float(acc[layer, head])
        for layer in range(excluded_layers, num_layers)
        for head in range(num_heads)
    }
    return HeadStats(mean_sums=mean_sums, num_samples=len(per_sample))


def max_curvature_threshold(stats: HeadStats) -> ThresholdResult:
    """Threshold at the point of maximum curvature of the sorted sums.

    Mean sums are sorted ascending, both axes are normalized to [0, 1],
    and the discrete curvature kappa_i = |y''_i| / (1 + y'_i^2)^(3/2) is
    evaluated with central differences at interior points. tau is the mean
    sum at the maximizing index; exact ties resolve to the larger index.
    """
    items = sorted(stats.mean_sums.items(), key=lambda kv: (kv[1], kv[0]))
    if len(items) < 4:
        raise LocheadsError(
            f"curvature threshold needs at least 4 heads, got {len(items)}"
        )
    heads = [head for head, _ in items]
    curve = np.array([value for _, value in items], dtype=np.float64)
    n = len(curve)
    x = np.arange(n, dtype=np.float64) / (n - 1)
    span = curve[-1] - curve[0]
    y = (curve - curve[0]) / span if span > 0 else np.zeros_like(curve)
    h = x[1] - x[0]
    d1 = (y[2:] - y[:-2]) / (2.0 * h)
    d2 = (y[2:] - 2.0 * y[1:-1] + y[:-2]) / (h * h)
    kappa = np.abs(d2) / np.power(1.0 + d1 * d1, 1.5)
    # argmax with ties resolved toward the larger interior index
    best = len(kappa) - 1 - int(np.argmax(kappa[::-1]))
    index = best + 1
    return ThresholdResult(
        tau=float(curve[index]), curve=curve, heads=heads, curvature_index=index
    )


def eligible_heads(stats: HeadStats, tau: float) -> list[HeadId]:
    """Heads whose mean attention sum reaches tau, in HeadId order."""
    return sorted(h for h, s in stats.mean_sums.items() if s >= tau)
