"""Evaluation metrics: box/mask IoU, Acc@0.5, cumulative IoU, Spearman.

Boxes are zero-based half-open so all box arithmetic is exact integer
math. Mask IoU counts bits. cIoU accumulates intersections and unions over
the whole corpus before dividing, which is not the same as averaging
per-sample IoU.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .types import BBox, BinaryMask, LocheadsError, SampleAnnotation


@dataclass
class SampleEval:
    sample_id: str
    box_iou: float
    mask_intersection: int
    mask_union: int


@dataclass
class EvalSummary:
    """Corpus-level grounding scores plus the per-sample rows behind them."""

    num_samples: int
    acc_at_05: float
    mean_box_iou: float
    ciou: float
    per_sample: list[SampleEval]


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two half-open boxes."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0, iw) * max(0, ih)
    union = a.area() + b.area() - inter
    return inter / union


def mask_iou(a: BinaryMask, b: BinaryMask) -> tuple[int, int, float]:
    """(intersection, union, iou) of two same-shape masks.

    Two empty masks agree vacuously and score 1.0.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise LocheadsError(
            f"mask shapes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    iou = 1.0 if union == 0 else inter / union
    return inter, union, iou


def downsample_mask(mask: BinaryMask, grid_size: int) -> BinaryMask:
    """Reduce a pixel mask to grid resolution by majority coverage.

    A grid cell is foreground when at least half of its pixel area is
    foreground. Cell boundaries follow floor(i * extent / grid_size) so
    non-divisible image sizes still partition exactly.
    """
    row_edges = [mask.height * r // grid_size for r in range(grid_size + 1)]
    col_edges = [mask.width * c // grid_size for c in range(grid_size + 1)]
    bits = np.zeros((grid_size, grid_size), dtype=bool)
    for r in range(grid_size):
        for c in range(grid_size):
            cell = mask.bits[row_edges[r] : row_edges[r + 1],
                             col_edges[c] : col_edges[c + 1]]
            bits[r, c] = cell.mean() >= 0.5
    return BinaryMask.from_bits(bits)


def upscale_mask(mask: BinaryMask, width: int, height: int) -> BinaryMask:
    """Nearest-neighbor upscale of a grid mask to pixel resolution."""
    rows = np.minimum(
        (np.arange(height) * mask.height) // height, mask.height - 1
    )
    cols = np.minimum((np.arange(width) * mask.width) // width, mask.width - 1)
    return BinaryMask.from_bits(mask.bits[np.ix_(rows, cols)])


def _annotation_index(
    annotations: list[SampleAnnotation],
) -> dict[str, SampleAnnotation]:
    return {a.sample_id: a for a in annotations}


def evaluate_rec(results, annotations: list[SampleAnnotation]) -> EvalSummary:
    """Referring-expression comprehension: box IoU, Acc@0.5, mean IoU.

    results is a list of grounding results carrying sample_id and
    bbox_pixels. Every result must have a matching annotation.
    """
    index = _annotation_index(annotations)
    rows: list[SampleEval] = []
    for result in sorted(results, key=lambda r: r.sample_id):
        ann = index.get(result.sample_id)
        if ann is None:
            raise LocheadsError(f"no annotation for sample {result.sample_id!r}")
        rows.append(
            SampleEval(
                sample_id=result.sample_id,
                box_iou=box_iou(result.bbox_pixels, ann.gt_bbox),
                mask_intersection=0,
                mask_union=0,
            )
        )
    if not rows:
        raise LocheadsError("nothing to evaluate")
    ious = np.array([r.box_iou for r in rows], dtype=np.float64)
    return EvalSummary(
        num_samples=len(rows),
        acc_at_05=float((ious >= 0.5).mean()),
        mean_box_iou=float(ious.mean()),
        ciou=0.0,
        per_sample=rows,
    )


def evaluate_res(results, annotations: list[SampleAnnotation]) -> EvalSummary:
    """Referring-expression segmentation: cumulative IoU of pseudo-masks.

    cIoU = sum of intersections / sum of unions over all samples. Each
    annotation must carry a ground-truth mask.
    """
    index = _annotation_index(annotations)
    rows: list[SampleEval] = []
    for result in sorted(results, key=lambda r: r.sample_id):
        ann = index.get(result.sample_id)
        if ann is None:
            raise LocheadsError(f"no annotation for sample {result.sample_id!r}")
        if ann.gt_mask is None:
            raise LocheadsError(
                f"annotation for {result.sample_id!r} has no ground-truth mask"
            )
        inter, union, _ = mask_iou(result.pseudo_mask_pixels, ann.gt_mask)
        rows.append(
            SampleEval(
                sample_id=result.sample_id,
                box_iou=box_iou(result.bbox_pixels, ann.gt_bbox),
                mask_intersection=inter,
                mask_union=union,
            )
        )
    if not rows:
        raise LocheadsError("nothing to evaluate")
    ious = np.array([r.box_iou for r in rows], dtype=np.float64)
    total_inter = sum(r.mask_intersection for r in rows)
    total_union = sum(r.mask_union for r in rows)
    ciou = 1.0 if total_union == 0 else total_inter / total_union
    return EvalSummary(
        num_samples=len(rows),
        acc_at_05=float((ious >= 0.5).mean()),
        mean_box_iou=float(ious.mean()),
        ciou=ciou,
        per_sample=rows,
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties averaged (midrank)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc * xc).sum()) * float((yc * yc).sum()))
    return float((xc * yc).sum()) / denom


# Permutation testing is exact only while n! stays small.
EXACT_PERMUTATION_LIMIT = 8


def spearman(xs, ys) -> tuple[float, float]:
    """Spearman rank correlation with a two-sided p-value.

    Ties get average ranks and rho is the Pearson correlation of the rank
    vectors. For n <= 8 the p-value enumerates all permutations of one
    variable (fraction with |rho| at least the observed, within 1e-12);
    beyond that it falls back on the t approximation with n - 2 degrees of
    freedom. Fewer than 3 points or a zero-variance input is an error.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LocheadsError("spearman needs two equal-length vectors")
    n = len(x)
    if n < 3:
        raise LocheadsError(f"spearman undefined for n={n} < 3")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise LocheadsError("spearman undefined for zero-variance input")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rho = _pearson(rx, ry)
    if n <= EXACT_PERMUTATION_LIMIT:
        threshold = abs(rho) - 1e-12
        hits = 0
        total = 0
        for perm in itertools.permutations(range(n)):
            r = _pearson(rx, ry[list(perm)])
            hits += abs(r) >= threshold
            total += 1
        return rho, hits / total
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return rho, p
