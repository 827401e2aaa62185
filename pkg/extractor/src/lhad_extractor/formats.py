"""Self-contained writers for the LHAD interchange contracts.

Implemented from the format definition rather than imported from the
analysis toolkit: the two packages are meant to interoperate purely
through bytes on disk, and an independent writer is what makes the
strict-reader conformance test meaningful.

LHAD layout (all integers little-endian): magic "LHAD"; u16 version = 1;
u16 grid_size P; u16 num_layers; u16 num_heads; u16 sample_id length +
UTF-8 sample id; u32 image_width; u32 image_height; u32 text length +
UTF-8 text; then num_layers * num_heads * P * P IEEE-754 float32 values,
layer-major, head-major, row-major.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .adapter import ExtractorError

MAGIC = b"LHAD"
VERSION = 1
SUM_TOLERANCE = 1e-4  # attention rows are softmax slices; allow rounding


def atomic_write_bytes(path: str | Path, blob: bytes) -> None:
    """Write via a temp file in the same directory, then rename over.

    Readers never observe a partially written file: either the previous
    content survives or the complete new content appears.
    """
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except FileNotFoundError:
            pass
        raise


def validate_maps(maps: np.ndarray) -> list[str]:
    """Pre-write checks mirroring what a strict reader will enforce."""
    problems: list[str] = []
    if maps.ndim != 4 or maps.shape[2] != maps.shape[3]:
        return [f"maps must be (layers, heads, P, P), got {maps.shape}"]
    sums = maps.sum(axis=(2, 3), dtype=np.float64)
    mins = maps.min(axis=(2, 3))
    for layer in range(maps.shape[0]):
        for head in range(maps.shape[1]):
            if mins[layer, head] < 0:
                problems.append(f"L{layer} H{head}: negative weight")
            if sums[layer, head] > 1.0 + SUM_TOLERANCE:
                problems.append(
                    f"L{layer} H{head}: attention sum "
                    f"{sums[layer, head]:.6f} exceeds 1 + {SUM_TOLERANCE}"
                )
    return problems


def encode_dump(
    sample_id: str,
    text: str,
    image_width: int,
    image_height: int,
    maps: np.ndarray,
) -> bytes:
    """Serialize one sample's maps (layers, heads, P, P) to LHAD bytes."""
    maps = np.ascontiguousarray(maps, dtype="<f4")
    if maps.ndim != 4 or maps.shape[2] != maps.shape[3]:
        raise ExtractorError(
            f"maps must be (layers, heads, P, P), got {maps.shape}"
        )
    num_layers, num_heads, grid_size, _ = maps.shape
    if min(num_layers, num_heads, grid_size) == 0:
        raise ExtractorError(f"zero geometry in maps shape {maps.shape}")
    if image_width <= 0 or image_height <= 0:
        raise ExtractorError(
            f"image size must be positive, got {image_width}x{image_height}"
        )
    id_bytes = sample_id.encode("utf-8")
    text_bytes = text.encode("utf-8")
    if len(id_bytes) > 0xFFFF:
        raise ExtractorError(f"sample id too long ({len(id_bytes)} bytes)")
    for value, what in (
        (grid_size, "grid size"),
        (num_layers, "layer count"),
        (num_heads, "head count"),
    ):
        if value > 0xFFFF:
            raise ExtractorError(f"{what} {value} exceeds the u16 field")
    header = b"".join(
        [
            MAGIC,
            struct.pack("<H", VERSION),
            struct.pack("<H", grid_size),
            struct.pack("<H", num_layers),
            struct.pack("<H", num_heads),
            struct.pack("<H", len(id_bytes)),
            id_bytes,
            struct.pack("<I", image_width),
            struct.pack("<I", image_height),
            struct.pack("<I", len(text_bytes)),
            text_bytes,
        ]
    )
    return header + maps.tobytes()


def write_dump(
    path: str | Path,
    sample_id: str,
    text: str,
    image_width: int,
    image_height: int,
    maps: np.ndarray,
) -> None:
    atomic_write_bytes(
        path, encode_dump(sample_id, text, image_width, image_height, maps)
    )


def _stable_json(document) -> bytes:
    return (json.dumps(document, indent=1, sort_keys=True) + "\n").encode("utf-8")


def write_manifest(path: str | Path, entries: list[dict]) -> None:
    """entries: [{sample_id, dump_path, has_annotation}, ...]."""
    seen = set()
    for entry in entries:
        if entry["sample_id"] in seen:
            raise ExtractorError(f"duplicate sample id {entry['sample_id']!r}")
        seen.add(entry["sample_id"])
    atomic_write_bytes(
        path, _stable_json({"format_version": 1, "samples": entries})
    )


def mask_to_rle(bits: np.ndarray) -> list[int]:
    """Alternating background/foreground run lengths, background first."""
    flat = np.asarray(bits, dtype=bool).ravel()
    runs: list[int] = []
    current = False  # RLE convention starts with a background run
    length = 0
    for bit in flat:
        if bool(bit) == current:
            length += 1
        else:
            runs.append(length)
            current = not current
            length = 1
    runs.append(length)
    return runs


def write_annotations(path: str | Path, annotations: list[dict]) -> None:
    """annotations: [{sample_id, image_width, image_height, text, gt_bbox,
    optional gt_mask_rle or gt_mask_bits}, ...]."""
    documents = []
    seen = set()
    for ann in annotations:
        if ann["sample_id"] in seen:
            raise ExtractorError(f"duplicate sample id {ann['sample_id']!r}")
        seen.add(ann["sample_id"])
        doc = {
            "sample_id": ann["sample_id"],
            "image_width": int(ann["image_width"]),
            "image_height": int(ann["image_height"]),
            "text": ann["text"],
            "gt_bbox": [int(v) for v in ann["gt_bbox"]],
        }
        x_min, y_min, x_max, y_max = doc["gt_bbox"]
        if not (
            0 <= x_min < x_max <= doc["image_width"]
            and 0 <= y_min < y_max <= doc["image_height"]
        ):
            raise ExtractorError(
                f"{ann['sample_id']!r}: gt_bbox {doc['gt_bbox']} outside "
                f"{doc['image_width']}x{doc['image_height']}"
            )
        if ann.get("gt_mask_bits") is not None:
            bits = np.asarray(ann["gt_mask_bits"], dtype=bool)
            if bits.shape != (doc["image_height"], doc["image_width"]):
                raise ExtractorError(
                    f"{ann['sample_id']!r}: mask shape {bits.shape} does not "
                    f"match image {doc['image_width']}x{doc['image_height']}"
                )
            doc["gt_mask_rle"] = mask_to_rle(bits)
        elif ann.get("gt_mask_rle") is not None:
            runs = [int(v) for v in ann["gt_mask_rle"]]
            if sum(runs) != doc["image_width"] * doc["image_height"]:
                raise ExtractorError(
                    f"{ann['sample_id']!r}: RLE runs sum to {sum(runs)}, "
                    f"expected {doc['image_width'] * doc['image_height']}"
                )
            doc["gt_mask_rle"] = runs
        documents.append(doc)
    atomic_write_bytes(path, _stable_json(documents))
