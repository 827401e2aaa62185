"""Serialization: attention dumps, manifests, annotations, reports.

The dump container is a little-endian binary format ("LHAD"):

    offset  field
    ------  -----------------------------------------
    0       magic, 4 bytes, b"LHAD"
    4       version, u16 (currently 1)
    6       grid_size P, u16
    8       num_layers, u16
    10      num_heads, u16
    12      sample_id_length, u16, then that many UTF-8 bytes
    ..      image_width, u32
    ..      image_height, u32
    ..      text_length, u32, then that many UTF-8 bytes
    ..      payload: num_layers * num_heads * P * P float32 values,
            layer-major, then head-major, then row-major within a map

Every reader here rejects malformed input with a distinct error type
rather than guessing. Documents (manifest, annotations, reports, results,
summaries) are JSON; floats round-trip at full 64-bit precision because
they are emitted with repr-style shortest representations.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .metrics import EvalSummary, SampleEval
from .types import (
    AttentionDump,
    BBox,
    BinaryMask,
    HeadId,
    LocheadsError,
    SampleAnnotation,
    SelectionReport,
    validate_dump,
)

MAGIC = b"LHAD"
VERSION = 1


class DumpFormatError(LocheadsError):
    """A dump file does not follow the binary layout."""


class BadMagicError(DumpFormatError):
    pass


class VersionMismatchError(DumpFormatError):
    pass


class TruncatedDumpError(DumpFormatError):
    pass


class DumpValidationError(DumpFormatError):
    """Strict mode: the payload violates attention-row invariants."""


class AnnotationError(LocheadsError):
    pass


class ManifestError(LocheadsError):
    pass


class ReportError(LocheadsError):
    pass


class _Cursor:
    """Byte reader that reports exactly where truncation happened."""

    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise TruncatedDumpError(
                f"{self.path}: truncated while reading {what}: need "
                f"{self.offset + count} bytes, file has {len(self.data)}"
            )
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def write_dump(dump: AttentionDump, path: str | Path) -> None:
    """Serialize one dump to the binary container."""
    path = Path(path)
    sample_id = dump.sample_id.encode("utf-8")
    text = dump.text.encode("utf-8")
    if len(sample_id) > 0xFFFF:
        raise DumpFormatError(f"sample id too long ({len(sample_id)} bytes)")
    header = b"".join(
        [
            MAGIC,
            struct.pack("<H", VERSION),
            struct.pack("<H", dump.grid_size),
            struct.pack("<H", dump.num_layers),
            struct.pack("<H", dump.num_heads),
            struct.pack("<H", len(sample_id)),
            sample_id,
            struct.pack("<I", dump.image_width),
            struct.pack("<I", dump.image_height),
            struct.pack("<I", len(text)),
            text,
        ]
    )
    payload = np.ascontiguousarray(dump.maps, dtype="<f4").tobytes()
    path.write_bytes(header + payload)


def read_dump(path: str | Path, strict: bool = False) -> AttentionDump:
    """Parse one dump file; strict mode also checks attention invariants."""
    path = Path(path)
    cur = _Cursor(path.read_bytes(), path)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.u16("version")
    if version != VERSION:
        raise VersionMismatchError(
            f"{path}: unsupported version {version}, expected {VERSION}"
        )
    grid_size = cur.u16("grid size")
    num_layers = cur.u16("layer count")
    num_heads = cur.u16("head count")
    if grid_size == 0 or num_layers == 0 or num_heads == 0:
        raise DumpFormatError(
            f"{path}: zero geometry field "
            f"(P={grid_size}, layers={num_layers}, heads={num_heads})"
        )
    id_len = cur.u16("sample id length")
    sample_id = cur.take(id_len, "sample id").decode("utf-8")
    image_width = cur.u32("image width")
    image_height = cur.u32("image height")
    text_len = cur.u32("text length")
    text = cur.take(text_len, "text").decode("utf-8")
    count = num_layers * num_heads * grid_size * grid_size
    payload = cur.take(count * 4, "attention payload")
    if cur.offset != len(cur.data):
        raise DumpFormatError(
            f"{path}: {len(cur.data) - cur.offset} trailing bytes after payload"
        )
    maps = np.frombuffer(payload, dtype="<f4").reshape(
        num_layers, num_heads, grid_size, grid_size
    )
    dump = AttentionDump(
        sample_id=sample_id,
        grid_size=grid_size,
        num_layers=num_layers,
        num_heads=num_heads,
        maps=maps.copy(),
        image_width=image_width,
        image_height=image_height,
        text=text,
    )
    if strict:
        problems = validate_dump(dump)
        if problems:
            raise DumpValidationError(
                f"{path}: invalid attention data: " + "; ".join(problems[:5])
            )
    return dump


def write_json(obj, path: str | Path) -> None:
    """Plain JSON with sorted keys; byte-stable for equal inputs."""
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


@dataclass
class ManifestEntry:
    sample_id: str
    dump_path: str
    has_annotation: bool = True


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    """Write the corpus manifest; dump paths are relative to the manifest."""
    doc = {
        "format_version": 1,
        "samples": [
            {
                "sample_id": e.sample_id,
                "dump_path": e.dump_path,
                "has_annotation": e.has_annotation,
            }
            for e in entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "samples" not in doc:
        raise ManifestError(f"{path}: missing 'samples' field")
    entries = []
    seen: set[str] = set()
    for i, row in enumerate(doc["samples"]):
        try:
            entry = ManifestEntry(
                sample_id=row["sample_id"],
                dump_path=row["dump_path"],
                has_annotation=bool(row.get("has_annotation", True)),
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: bad sample entry #{i}: {exc}") from exc
        if entry.sample_id in seen:
            raise ManifestError(f"{path}: duplicate sample id {entry.sample_id!r}")
        seen.add(entry.sample_id)
        entries.append(entry)
    return entries


def iter_corpus(
    manifest_path: str | Path, strict: bool = False
) -> Iterator[AttentionDump]:
    """Yield dumps listed in a manifest, in manifest order."""
    manifest_path = Path(manifest_path)
    for entry in read_manifest(manifest_path):
        dump = read_dump(manifest_path.parent / entry.dump_path, strict=strict)
        if dump.sample_id != entry.sample_id:
            raise ManifestError(
                f"{entry.dump_path}: dump says sample {dump.sample_id!r}, "
                f"manifest says {entry.sample_id!r}"
            )
        yield dump


def rle_encode(bits: np.ndarray) -> list[int]:
    """Run lengths of a flattened mask, alternating background/foreground.

    The encoding always starts with a background run (possibly zero).
    """
    flat = np.asarray(bits, dtype=bool).reshape(-1)
    runs: list[int] = []
    if flat.size and flat[0]:
        runs.append(0)
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = [0, *changes.tolist(), flat.size]
    for i in range(len(edges) - 1):
        runs.append(edges[i + 1] - edges[i])
    return runs


def rle_decode(runs: list[int], width: int, height: int) -> BinaryMask:
    """Inverse of rle_encode; validates that runs cover width*height."""
    total = sum(runs)
    if total != width * height:
        raise AnnotationError(
            f"mask run lengths sum to {total}, expected {width * height}"
        )
    if any(r < 0 for r in runs):
        raise AnnotationError("negative run length")
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    fg = False
    for run in runs:
        if fg:
            flat[pos : pos + run] = True
        pos += run
        fg = not fg
    return BinaryMask(width=width, height=height, bits=flat.reshape(height, width))


def write_annotations(
    annotations: list[SampleAnnotation], path: str | Path
) -> None:
    rows = []
    for ann in annotations:
        row = {
            "sample_id": ann.sample_id,
            "image_width": ann.image_width,
            "image_height": ann.image_height,
            "text": ann.text,
            "gt_bbox": list(ann.gt_bbox.as_tuple()),
        }
        if ann.gt_mask is not None:
            row["gt_mask_rle"] = rle_encode(ann.gt_mask.bits)
        rows.append(row)
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def read_annotations(path: str | Path) -> list[SampleAnnotation]:
    path = Path(path)
    try:
        rows = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(rows, list):
        raise AnnotationError(f"{path}: expected a JSON array")
    out: list[SampleAnnotation] = []
    seen: set[str] = set()
    for i, row in enumerate(rows):
        try:
            sample_id = row["sample_id"]
            width = int(row["image_width"])
            height = int(row["image_height"])
            text = row["text"]
            x_min, y_min, x_max, y_max = (int(v) for v in row["gt_bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"{path}: bad annotation #{i}: {exc}") from exc
        if sample_id in seen:
            raise AnnotationError(f"{path}: duplicate sample id {sample_id!r}")
        seen.add(sample_id)
        if not (0 <= x_min < x_max <= width and 0 <= y_min < y_max <= height):
            raise AnnotationError(
                f"{path}: {sample_id!r}: box {(x_min, y_min, x_max, y_max)} "
                f"out of bounds for {width}x{height}"
            )
        mask = None
        if "gt_mask_rle" in row:
            mask = rle_decode(row["gt_mask_rle"], width, height)
        out.append(
            SampleAnnotation(
                sample_id=sample_id,
                image_width=width,
                image_height=height,
                text=text,
                gt_bbox=BBox(x_min, y_min, x_max, y_max),
                gt_mask=mask,
            )
        )
    return out


def write_report(report: SelectionReport, path: str | Path) -> None:
    """Persist a selection report; frequencies keep full float precision."""
    doc = {
        "format_version": 1,
        "grid_size": report.grid_size,
        "num_layers": report.num_layers,
        "num_heads": report.num_heads,
        "tau_used": report.tau_used,
        "frequency": [
            {
                "layer": head.layer,
                "head": head.head,
                "mean": report.frequency[head],
                "std": report.frequency_std[head],
            }
            for head in sorted(report.frequency)
        ],
        "ranks": [[h.layer, h.head] for h in report.ranks],
        "top_k_heads": [[h.layer, h.head] for h in report.top_k_heads],
        "config": report.config,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_report(path: str | Path) -> SelectionReport:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: not valid JSON: {exc}") from exc
    try:
        num_layers = int(doc["num_layers"])
        num_heads = int(doc["num_heads"])
        grid_size = int(doc["grid_size"])
        tau = float(doc["tau_used"])
        freq_rows = doc["frequency"]
        ranks = [HeadId(int(l), int(h)) for l, h in doc["ranks"]]
        top = [HeadId(int(l), int(h)) for l, h in doc["top_k_heads"]]
        config = doc.get("config", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"{path}: malformed report: {exc}") from exc
    frequency: dict[HeadId, float] = {}
    std: dict[HeadId, float] = {}
    for row in freq_rows:
        head = HeadId(int(row["layer"]), int(row["head"]))
        frequency[head] = float(row["mean"])
        std[head] = float(row["std"])
    for head in [*frequency, *ranks, *top]:
        if not (0 <= head.layer < num_layers and 0 <= head.head < num_heads):
            raise ReportError(
                f"{path}: head {head.label()} outside geometry "
                f"{num_layers}x{num_heads}"
            )
    return SelectionReport(
        grid_size=grid_size,
        num_layers=num_layers,
        num_heads=num_heads,
        tau_used=tau,
        frequency=frequency,
        frequency_std=std,
        ranks=ranks,
        top_k_heads=top,
        config=config,
    )


def write_results(results, path: str | Path) -> None:
    """Grounding results as JSON lines, one record per sample."""
    lines = []
    for r in sorted(results, key=lambda r: r.sample_id):
        record = {
            "sample_id": r.sample_id,
            "grid_size": r.pseudo_mask_grid.width,
            "image_width": r.pseudo_mask_pixels.width,
            "image_height": r.pseudo_mask_pixels.height,
            "bbox_grid": list(r.bbox_grid.as_tuple()),
            "bbox_pixels": list(r.bbox_pixels.as_tuple()),
            "pseudo_mask_grid_rle": rle_encode(r.pseudo_mask_grid.bits),
            "pseudo_mask_pixels_rle": rle_encode(r.pseudo_mask_pixels.bits),
        }
        lines.append(json.dumps(record))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ResultRecord:
    """One grounding record as stored on disk (maps are not kept)."""

    sample_id: str
    grid_size: int
    image_width: int
    image_height: int
    bbox_grid: BBox
    bbox_pixels: BBox
    pseudo_mask_grid: BinaryMask
    pseudo_mask_pixels: BinaryMask


def read_results(path: str | Path) -> list[ResultRecord]:
    path = Path(path)
    records = []
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            grid = int(row["grid_size"])
            width = int(row["image_width"])
            height = int(row["image_height"])
            records.append(
                ResultRecord(
                    sample_id=row["sample_id"],
                    grid_size=grid,
                    image_width=width,
                    image_height=height,
                    bbox_grid=BBox(*row["bbox_grid"]),
                    bbox_pixels=BBox(*row["bbox_pixels"]),
                    pseudo_mask_grid=rle_decode(
                        row["pseudo_mask_grid_rle"], grid, grid
                    ),
                    pseudo_mask_pixels=rle_decode(
                        row["pseudo_mask_pixels_rle"], width, height
                    ),
                )
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise LocheadsError(f"{path}: bad result line {i + 1}: {exc}") from exc
    return records


def write_eval_summary(summary: EvalSummary, path: str | Path) -> None:
    doc = {
        "num_samples": summary.num_samples,
        "acc_at_05": summary.acc_at_05,
        "mean_box_iou": summary.mean_box_iou,
        "ciou": summary.ciou,
        "per_sample": [
            {
                "sample_id": r.sample_id,
                "box_iou": r.box_iou,
                "mask_intersection": r.mask_intersection,
                "mask_union": r.mask_union,
            }
            for r in summary.per_sample
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_eval_summary(path: str | Path) -> EvalSummary:
    doc = json.loads(Path(path).read_text())
    return EvalSummary(
        num_samples=int(doc["num_samples"]),
        acc_at_05=float(doc["acc_at_05"]),
        mean_box_iou=float(doc["mean_box_iou"]),
        ciou=float(doc["ciou"]),
        per_sample=[
            SampleEval(
                sample_id=r["sample_id"],
                box_iou=float(r["box_iou"]),
                mask_intersection=int(r["mask_intersection"]),
                mask_union=int(r["mask_union"]),
            )
            for r in doc["per_sample"]
        ],
    )


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Write an 8-bit RGB image as a binary P6 portable pixmap."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise LocheadsError(f"overlay image must be HxWx3, got {rgb.shape}")
    height, width, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
