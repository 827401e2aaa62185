"""Turn captured attention tensors into LHAD corpora.

The numeric core, attention_rows_to_maps, is a pure function from a
capture to the (layers, heads, P, P) float32 stack; run_job adds sample
iteration, validation, and atomic file output around it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .adapter import Capture, ExtractorError, ModelRuntime, resolve_grid_size
from . import formats


@dataclass(frozen=True)
class ExtractionSample:
    """One referring expression to extract.

    image is passed through to the runtime untouched (path, array,
    PIL image — whatever the runtime accepts). gt_mask_bits, when
    given, is a (image_height, image_width) boolean array.
    """

    sample_id: str
    image: Any
    text: str
    image_width: int
    image_height: int
    gt_bbox: tuple[int, int, int, int]
    gt_mask_bits: Any = None


@dataclass(frozen=True)
class ExtractionJob:
    """A batch of samples to run through one model runtime.

    token_offset shifts the query token relative to the last input
    token: 0 means the final token, -1 the one before it, and so on.
    Chat templates that append suffix tokens after the user text are the
    reason this exists; pick the offset that lands on the last token of
    the actual input text.
    """

    runtime: ModelRuntime
    samples: list[ExtractionSample]
    out_dir: str | Path
    token_offset: int = 0
    validate: bool = True

    def __post_init__(self) -> None:
        if self.token_offset > 0:
            raise ExtractorError(
                f"token_offset must be <= 0 (relative to the last token), "
                f"got {self.token_offset}"
            )
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ExtractorError("duplicate sample ids in job")


def attention_rows_to_maps(
    attentions: np.ndarray,
    query_index: int,
    image_token_start: int,
    grid_size: int,
) -> np.ndarray:
    """Slice one query row per (layer, head) and fold it onto the grid.

    attentions has shape (layers, heads, seq, seq); the result is the
    (layers, heads, P, P) float32 stack of each head's attention from
    the query token onto the P*P image tokens, row-major.
    """
    attentions = np.asarray(attentions)
    if attentions.ndim != 4 or attentions.shape[2] != attentions.shape[3]:
        raise ExtractorError(
            f"attentions must be (layers, heads, seq, seq), got "
            f"{attentions.shape}"
        )
    seq_len = attentions.shape[2]
    if not 0 <= query_index < seq_len:
        raise ExtractorError(
            f"query index {query_index} outside sequence of {seq_len} tokens"
        )
    span_end = image_token_start + grid_size * grid_size
    if not 0 <= image_token_start <= seq_len - grid_size * grid_size:
        raise ExtractorError(
            f"image span [{image_token_start}, {span_end}) outside sequence "
            f"of {seq_len} tokens"
        )
    rows = attentions[:, :, query_index, image_token_start:span_end]
    layers, heads, _ = rows.shape
    return rows.reshape(layers, heads, grid_size, grid_size).astype(
        np.float32, copy=True
    )


def extract_sample(
    runtime: ModelRuntime, sample: ExtractionSample, token_offset: int = 0
) -> np.ndarray:
    """Run one sample through the runtime; return its (L, H, P, P) maps."""
    capture = runtime.capture(sample.image, sample.text)
    grid_size = resolve_grid_size(capture.num_image_tokens)
    query_index = capture.seq_len - 1 + token_offset
    if query_index < 0:
        raise ExtractorError(
            f"token_offset {token_offset} reaches before the sequence start "
            f"(sequence has {capture.seq_len} tokens)"
        )
    return attention_rows_to_maps(
        capture.attentions,
        query_index,
        capture.image_token_start,
        grid_size,
    )


def run_job(job: ExtractionJob) -> tuple[Path, Path]:
    """Extract every sample; write dumps, manifest, and annotations.

    Returns (manifest_path, annotations_path). Every file write is
    atomic, so an interrupted run leaves only complete files behind.
    """
    out = Path(job.out_dir)
    dumps_dir = out / "dumps"
    dumps_dir.mkdir(parents=True, exist_ok=True)
    manifest_entries = []
    annotation_docs = []
    for sample in job.samples:
        maps = extract_sample(job.runtime, sample, job.token_offset)
        if job.validate:
            problems = formats.validate_maps(maps)
            if problems:
                raise ExtractorError(
                    f"{sample.sample_id!r}: extracted maps violate the "
                    f"attention invariants: {'; '.join(problems[:3])}"
                )
        dump_name = f"{sample.sample_id}.lhad"
        formats.write_dump(
            dumps_dir / dump_name,
            sample.sample_id,
            sample.text,
            sample.image_width,
            sample.image_height,
            maps,
        )
        manifest_entries.append(
            {
                "sample_id": sample.sample_id,
                "dump_path": f"dumps/{dump_name}",
                "has_annotation": True,
            }
        )
        annotation_docs.append(
            {
                "sample_id": sample.sample_id,
                "image_width": sample.image_width,
                "image_height": sample.image_height,
                "text": sample.text,
                "gt_bbox": list(sample.gt_bbox),
                "gt_mask_bits": sample.gt_mask_bits,
            }
        )
    manifest_path = out / "manifest.json"
    annotations_path = out / "annotations.json"
    formats.write_manifest(manifest_path, manifest_entries)
    formats.write_annotations(annotations_path, annotation_docs)
    return manifest_path, annotations_path
