"""Core value types shared across the toolkit.

Attention weights are stored as 32-bit floats end to end; whenever values
are accumulated (sums, means) the arithmetic runs in 64-bit. Boxes use
zero-based half-open coordinates so width is simply x_max - x_min.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

# Attention rows are softmax slices, so their sum may exceed 1 only by
# rounding noise.
SUM_TOLERANCE = 1e-4


class LocheadsError(Exception):
    """Base class for all errors raised by this package."""


class GeometryMismatchError(LocheadsError):
    """Two artifacts disagree on grid size or head layout."""


@dataclass(frozen=True, order=True)
class HeadId:
    """Identifies one attention head as (layer, head), both zero-based.

    Field order gives the lexicographic total order used everywhere a
    deterministic tie-break over heads is needed.
    """

    layer: int
    head: int

    def label(self) -> str:
        return f"L{self.layer} H{self.head}"

    @staticmethod
    def parse(text: str) -> "HeadId":
        """Parse the 'L<layer> H<head>' form produced by label(); the
        space is optional."""
        match = re.fullmatch(r"L(\d+)\s*H(\d+)", text.strip())
        if match is None:
            raise ValueError(f"not a head label: {text!r}")
        return HeadId(int(match.group(1)), int(match.group(2)))


@dataclass
class AttnMap:
    """A P x P attention map over image patch positions, row-major."""

    grid_size: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (self.grid_size, self.grid_size):
            raise ValueError(
                f"map shape {self.values.shape} does not match grid size "
                f"{self.grid_size}"
            )

    @staticmethod
    def from_flat(flat: np.ndarray, grid_size: int) -> "AttnMap":
        flat = np.asarray(flat, dtype=np.float32)
        if flat.size != grid_size * grid_size:
            raise ValueError(
                f"expected {grid_size * grid_size} values, got {flat.size}"
            )
        return AttnMap(grid_size, flat.reshape(grid_size, grid_size))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass
class AttentionDump:
    """All text-to-image attention maps captured for one sample.

    maps has shape (num_layers, num_heads, P, P), float32, and holds the
    softmax row of the final text token restricted to image positions.
    """

    sample_id: str
    grid_size: int
    num_layers: int
    num_heads: int
    maps: np.ndarray
    image_width: int
    image_height: int
    text: str = ""

    def __post_init__(self) -> None:
        self.maps = np.asarray(self.maps, dtype=np.float32)
        expected = (self.num_layers, self.num_heads, self.grid_size, self.grid_size)
        if self.maps.shape != expected:
            raise ValueError(f"maps shape {self.maps.shape}, expected {expected}")

    def map_for(self, head: HeadId) -> AttnMap:
        if not (0 <= head.layer < self.num_layers and 0 <= head.head < self.num_heads):
            raise KeyError(f"{head.label()} outside dump geometry")
        return AttnMap(self.grid_size, self.maps[head.layer, head.head])

    def head_ids(self, excluded_layers: int = 0) -> Iterator[HeadId]:
        """All head ids in lexicographic order, skipping the first layers."""
        for layer in range(excluded_layers, self.num_layers):
            for head in range(self.num_heads):
                yield HeadId(layer, head)


@dataclass
class BinaryMask:
    """A 2-D binary mask; bits has shape (height, width), row-major."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != (self.height, self.width):
            raise ValueError(
                f"mask shape {self.bits.shape} does not match "
                f"{self.height}x{self.width}"
            )

    @staticmethod
    def from_bits(bits: np.ndarray) -> "BinaryMask":
        bits = np.asarray(bits, dtype=bool)
        return BinaryMask(width=bits.shape[1], height=bits.shape[0], bits=bits)

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with zero-based half-open bounds [min, max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def clamped(self, width: int, height: int) -> "BBox":
        return BBox(
            max(0, self.x_min),
            max(0, self.y_min),
            min(width, self.x_max),
            min(height, self.y_max),
        )


@dataclass
class SampleAnnotation:
    """Ground truth for one sample: referring text, box and optional mask.

    gt_mask, when present, is a pixel-resolution BinaryMask of shape
    (image_height, image_width).
    """

    sample_id: str
    image_width: int
    image_height: int
    text: str
    gt_bbox: BBox
    gt_mask: BinaryMask | None = None


@dataclass
class FrequencyEntry:
    head: HeadId
    mean: float
    std: float


@dataclass
class SelectionReport:
    """Output of head discovery over a corpus.

    frequency maps every considered head to its mean selection frequency
    over trials; ranks lists heads by descending mean frequency with ties
    broken by HeadId order; top_k_heads is the first top_k of ranks.
    """

    grid_size: int
    num_layers: int
    num_heads: int
    tau_used: float
    frequency: dict[HeadId, float]
    frequency_std: dict[HeadId, float]
    ranks: list[HeadId]
    top_k_heads: list[HeadId]
    config: dict = field(default_factory=dict)


def validate_dump(dump: AttentionDump) -> list[str]:
    """Check every map in a dump against the attention-row invariants.

    Returns human-readable violation strings naming the offending head;
    an empty list means the dump is well formed.
    """
    problems: list[str] = []
    if dump.grid_size <= 0:
        problems.append(f"grid size {dump.grid_size} not positive")
    if dump.image_width <= 0 or dump.image_height <= 0:
        problems.append(
            f"image size {dump.image_width}x{dump.image_height} not positive"
        )
    if not np.all(np.isfinite(dump.maps)):
        bad = np.argwhere(~np.isfinite(dump.maps.sum(axis=(2, 3))))
        for layer, head in bad:
            problems.append(f"L{layer} H{head}: non-finite weight")
    neg = dump.maps.min(axis=(2, 3))
    sums = dump.maps.sum(axis=(2, 3), dtype=np.float64)
    for layer in range(dump.num_layers):
        for head in range(dump.num_heads):
            if neg[layer, head] < 0:
                problems.append(f"L{layer} H{head}: negative weight")
            if sums[layer, head] > 1.0 + SUM_TOLERANCE:
                problems.append(
                    f"L{layer} H{head}: attention sum {sums[layer, head]:.6f} "
                    f"exceeds 1 + {SUM_TOLERANCE}"
                )
    return problems


def check_dump(dump: AttentionDump) -> AttentionDump:
    """Validation helper: raise if a dump violates attention invariants."""
    problems = validate_dump(dump)
    if problems:
        raise LocheadsError(
            "invalid attention dump "
            f"{dump.sample_id!r}: " + "; ".join(problems[:5])
        )
    return dump


def check_same_geometry(dumps: list[AttentionDump]) -> tuple[int, int, int]:
    """Validation helper: all dumps must share (layers, heads, grid)."""
    if not dumps:
        raise LocheadsError("empty corpus")
    key = (dumps[0].num_layers, dumps[0].num_heads, dumps[0].grid_size)
    for dump in dumps[1:]:
        other = (dump.num_layers, dump.num_heads, dump.grid_size)
        if other != key:
            raise GeometryMismatchError(
                f"sample {dump.sample_id!r} has geometry {other}, expected {key}"
            )
    return key
