"""Training-free grounding from selected heads.

Each selected head's map is Gaussian-smoothed, the smoothed maps are
summed into a combined map (no renormalization), the combined map is
binarized strictly above its mean, and the largest connected component is
kept. Its convex hull certifies the retained region; the emitted box is
the tight bound of the retained cells, scaled outward to pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .entropy import connected_components, binarize_at_mean
from .metrics import upscale_mask
from .types import (
    AttentionDump,
    AttnMap,
    BBox,
    BinaryMask,
    HeadId,
    LocheadsError,
    SelectionReport,
)


@dataclass
class GroundingConfig:
    """Knobs for map assembly and box extraction.

    sigma = 0 or kernel_size = 1 turn smoothing off exactly; that path is
    bit-identical to smoothing_enabled = False. Padding is reflect (the
    edge-inclusive mirror), which keeps the total map mass unchanged up to
    rounding because every weight that falls off the border re-enters.
    """

    kernel_size: int = 7
    sigma: float = 1.0
    smoothing_enabled: bool = True
    padding: str = "reflect"
    strategy: str = "fixed"

    def __post_init__(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise LocheadsError(
                f"kernel_size must be odd and positive, got {self.kernel_size}"
            )
        if self.sigma < 0:
            raise LocheadsError(f"sigma must be >= 0, got {self.sigma}")
        if self.padding != "reflect":
            raise LocheadsError(f"unsupported padding {self.padding!r}")
        if self.strategy not in ("fixed", "greedy"):
            raise LocheadsError(f"unknown strategy {self.strategy!r}")

    @property
    def smoothing_active(self) -> bool:
        return self.smoothing_enabled and self.sigma > 0 and self.kernel_size > 1


@dataclass
class GroundingResult:
    sample_id: str
    heads_used: list[HeadId]
    combined_map: AttnMap
    pseudo_mask_grid: BinaryMask
    bbox_grid: BBox
    bbox_pixels: BBox
    pseudo_mask_pixels: BinaryMask = field(repr=False, default=None)


def gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    """Separable 1-D weights w_i proportional to exp(-i^2 / (2 sigma^2)).

    Offsets run from -(k-1)/2 to +(k-1)/2 and the weights are normalized
    to sum to 1 in 64-bit.
    """
    radius = (kernel_size - 1) // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets * offsets) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _reflect_pad_1d_indices(length: int, radius: int) -> np.ndarray:
    """Index vector implementing the edge-inclusive mirror pad."""
    idx = np.arange(-radius, length + radius)
    idx = np.where(idx < 0, -idx - 1, idx)
    idx = np.where(idx >= length, 2 * length - idx - 1, idx)
    return idx


def gaussian_smooth(attn: AttnMap, config: GroundingConfig) -> AttnMap:
    """Smooth one map with the separable kernel and reflect padding.

    With smoothing off (sigma = 0 or kernel 1) the input is returned
    unchanged. The kernel may not exceed the mirrorable extent, so
    kernel_size <= 2 * grid_size - 1 is required.
    """
    if not config.smoothing_active:
        return attn
    smoothed = smooth_values(
        attn.values, config.kernel_size, config.sigma
    )
    return AttnMap(attn.grid_size, smoothed)


def smooth_values(values: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution of a (P, P) array, float32 out."""
    size = values.shape[0]
    if kernel_size > 2 * size - 1:
        raise LocheadsError(
            f"kernel size {kernel_size} too large for grid {size} "
            f"(limit {2 * size - 1})"
        )
    weights = gaussian_kernel(kernel_size, sigma)
    radius = (kernel_size - 1) // 2
    idx = _reflect_pad_1d_indices(size, radius)
    work = values.astype(np.float64)
    for axis in (0, 1):
        padded = np.take(work, idx, axis=axis)
        out = np.zeros_like(work)
        for j in range(kernel_size):
            if axis == 0:
                out += weights[j] * padded[j : j + size, :]
            else:
                out += weights[j] * padded[:, j : j + size]
        work = out
    return work.astype(np.float32)


def assemble_combined_map(
    dump: AttentionDump, heads: list[HeadId], config: GroundingConfig
) -> AttnMap:
    """Sum the (optionally smoothed) maps of the chosen heads.

    Accumulation is 64-bit; the result is stored as float32. The combined
    map is a sum of softmax rows, so its total mass may exceed 1.
    """
    if not heads:
        raise LocheadsError("no heads to combine")
    acc = np.zeros((dump.grid_size, dump.grid_size), dtype=np.float64)
    for head in heads:
        smoothed = gaussian_smooth(dump.map_for(head), config)
        acc += smoothed.values.astype(np.float64)
    return AttnMap(dump.grid_size, acc.astype(np.float32))


def convex_hull(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Monotone-chain convex hull; returns vertices counterclockwise.

    Degenerate inputs (fewer than 3 distinct points, collinear sets) come
    back as-is after deduplication and sorting.
    """
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def polygon_area(vertices: list[tuple[float, float]]) -> float:
    """Shoelace area; zero for degenerate polygons."""
    if len(vertices) < 3:
        return 0.0
    area = 0.0
    for i, (x0, y0) in enumerate(vertices):
        x1, y1 = vertices[(i + 1) % len(vertices)]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def extract_bbox(
    combined: AttnMap,
    image_width: int,
    image_height: int,
    fallback_argmax: bool = False,
) -> tuple[BBox, BBox, BinaryMask]:
    """Binarize the combined map and box the largest component.

    Components are compared by cell count, then hull area, then discovery
    order (components already arrive sorted by (min row, min col)). The
    grid box bounds the retained component's cells half-open; the pixel
    box scales it outward (floor the low edge, ceil the high edge) and
    clamps to the image. An all-background binarization raises unless
    fallback_argmax is set, in which case the single argmax cell is boxed.

    Returns (bbox_grid, bbox_pixels, pseudo_mask_grid).
    """
    grid = combined.grid_size
    mask = binarize_at_mean(combined)
    if mask.count() == 0:
        if not fallback_argmax:
            raise LocheadsError(
                "combined map binarized to empty foreground; "
                "pass fallback_argmax to box the peak cell instead"
            )
        flat_idx = int(np.argmax(combined.values))
        r, c = divmod(flat_idx, grid)
        cells = [(r, c)]
    else:
        comps = connected_components(mask)
        best = None
        best_key = None
        for order, comp in enumerate(comps.components):
            hull = convex_hull([(c + 0.5, r + 0.5) for r, c in comp])
            key = (len(comp), polygon_area(hull), -order)
            if best_key is None or key > best_key:
                best_key = key
                best = comp
        cells = best
    rows = [r for r, _ in cells]
    cols = [c for _, c in cells]
    bbox_grid = BBox(min(cols), min(rows), max(cols) + 1, max(rows) + 1)
    bbox_pixels = BBox(
        int(np.floor(bbox_grid.x_min * image_width / grid)),
        int(np.floor(bbox_grid.y_min * image_height / grid)),
        int(np.ceil(bbox_grid.x_max * image_width / grid)),
        int(np.ceil(bbox_grid.y_max * image_height / grid)),
    ).clamped(image_width, image_height)
    return bbox_grid, bbox_pixels, mask


def ground_sample(
    dump: AttentionDump,
    report: SelectionReport,
    config: GroundingConfig,
    top_k: int | None = None,
    criteria: str = "both",
    fallback_argmax: bool = False,
) -> GroundingResult:
    """Ground one sample with heads taken from a selection report.

    strategy = "fixed" reuses the corpus-level top heads from the report;
    "greedy" re-selects the best heads for this sample alone using the
    report's threshold. The pseudo-mask is the binarized combined map at
    grid and pixel resolution.
    """
    from .selection import greedy_heads, sample_eligible_heads

    if report.grid_size != dump.grid_size:
        raise LocheadsError(
            f"report grid {report.grid_size} does not match dump grid "
            f"{dump.grid_size}"
        )
    k = top_k if top_k is not None else len(report.top_k_heads)
    if k < 1:
        raise LocheadsError(f"need at least one head, got k={k}")
    if config.strategy == "fixed":
        heads = report.ranks[:k]
    else:
        excluded = int(report.config.get("excluded_layers", 0))
        eligible = sample_eligible_heads(
            dump, report.tau_used, excluded_layers=excluded, criteria=criteria
        )
        heads = greedy_heads(dump, eligible, top_k=k, criteria=criteria)
    if not heads:
        raise LocheadsError(f"no heads available for sample {dump.sample_id!r}")
    combined = assemble_combined_map(dump, heads, config)
    bbox_grid, bbox_pixels, mask_grid = extract_bbox(
        combined, dump.image_width, dump.image_height, fallback_argmax
    )
    return GroundingResult(
        sample_id=dump.sample_id,
        heads_used=list(heads),
        combined_map=combined,
        pseudo_mask_grid=mask_grid,
        bbox_grid=bbox_grid,
        bbox_pixels=bbox_pixels,
        pseudo_mask_pixels=upscale_mask(
            mask_grid, dump.image_width, dump.image_height
        ),
    )
