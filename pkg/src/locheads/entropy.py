"""Spatial entropy of attention maps.

A map is binarized at its own mean (strictly above), the foreground is
split into 8-connected components, and the entropy of the component size
distribution is the spatial concentration score. One compact region gives
entropy 0; scattered fragments give high entropy; an empty foreground maps
to the MAX_ENTROPY sentinel so it always sorts last when ranking ascending.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import AttnMap, BinaryMask

# Sentinel for maps whose binarized support is empty. Infinity keeps the
# "ascending entropy" order meaningful without a magic finite constant.
MAX_ENTROPY = float("inf")

_NO_LABEL = np.iinfo(np.int64).max


@dataclass
class ComponentSet:
    """Connected components of a mask, each a sorted list of (row, col)."""

    components: list[list[tuple[int, int]]]

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.components]

    def __len__(self) -> int:
        return len(self.components)


@dataclass
class EntropyResult:
    value: float
    num_components: int
    support: int


def binarize_at_mean(attn: AttnMap) -> BinaryMask:
    """Threshold a map strictly above its mean (mean taken in 64-bit)."""
    mean = attn.values.mean(dtype=np.float64)
    return BinaryMask.from_bits(attn.values > mean)


def binarize_batch(maps: np.ndarray) -> np.ndarray:
    """Vectorized binarize-at-mean for a stack of maps (n, P, P)."""
    means = maps.mean(axis=(1, 2), dtype=np.float64)
    return maps > means[:, None, None]


def label_batch(masks: np.ndarray) -> np.ndarray:
    """Label 8-connected components for a stack of masks (n, H, W).

    Iterative min-label propagation: every foreground cell starts with its
    own flat index and repeatedly adopts the minimum label among itself and
    its 8 neighbors until no label changes. Background cells hold a large
    sentinel. Converged labels identify components by their minimum cell
    index, which also makes the labeling order-deterministic.
    """
    masks = np.asarray(masks, dtype=bool)
    n, height, width = masks.shape
    ids = np.arange(height * width, dtype=np.int64).reshape(1, height, width)
    labels = np.where(masks, ids, _NO_LABEL)
    while True:
        padded = np.pad(
            labels, ((0, 0), (1, 1), (1, 1)), constant_values=_NO_LABEL
        )
        best = labels.copy()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                shifted = padded[:, 1 + dr : 1 + dr + height, 1 + dc : 1 + dc + width]
                np.minimum(best, shifted, out=best)
        best = np.where(masks, best, _NO_LABEL)
        if np.array_equal(best, labels):
            return labels
        labels = best


def connected_components(mask: BinaryMask) -> ComponentSet:
    """8-connected components, sorted by (min row, min col) of each.

    Cells within a component are sorted in row-major order.
    """
    labels = label_batch(mask.bits[None])[0]
    components: list[list[tuple[int, int]]] = []
    for label in np.unique(labels):
        if label == _NO_LABEL:
            continue
        cells = np.argwhere(labels == label)
        components.append([(int(r), int(c)) for r, c in cells])
    components.sort(key=lambda c: (min(r for r, _ in c), min(col for _, col in c)))
    return ComponentSet(components)


def _entropy_from_sizes(sizes: np.ndarray) -> float:
    # Sizes are summed in sorted order so every caller (single-map and
    # batched) produces bit-identical values for the same size multiset.
    sizes = np.sort(np.asarray(sizes))
    total = sizes.sum(dtype=np.float64)
    p = sizes.astype(np.float64) / total
    return float(-(p * np.log(p)).sum())


def spatial_entropy(attn: AttnMap) -> EntropyResult:
    """Entropy of the component-size distribution of the binarized map.

    H = -sum_i P(C_i) ln P(C_i) with P(C_i) = |C_i| / sum_j |C_j|, natural
    log. Empty support yields MAX_ENTROPY; a single component yields 0.
    """
    mask = binarize_at_mean(attn)
    support = mask.count()
    if support == 0:
        return EntropyResult(value=MAX_ENTROPY, num_components=0, support=0)
    comps = connected_components(mask)
    sizes = np.array(comps.sizes, dtype=np.int64)
    return EntropyResult(
        value=_entropy_from_sizes(sizes),
        num_components=len(comps),
        support=support,
    )


def entropy_batch(maps: np.ndarray) -> np.ndarray:
    """Spatial entropy for a stack of maps (n, P, P), float64 output.

    Matches spatial_entropy(map).value exactly; the batched path exists so
    per-sample head selection does not label maps one at a time.
    """
    masks = binarize_batch(np.asarray(maps))
    labels = label_batch(masks)
    out = np.empty(len(masks), dtype=np.float64)
    for i in range(len(masks)):
        fg = labels[i][masks[i]]
        if fg.size == 0:
            out[i] = MAX_ENTROPY
            continue
        _, counts = np.unique(fg, return_counts=True)
        out[i] = _entropy_from_sizes(counts)
    return out
