"""Attention extraction for vision-language models.

Captures, for every (layer, head), the attention that one text query
token places on the image-token grid, and writes the result as LHAD
dump files plus a corpus manifest and annotations. All analysis
(entropy, head selection, grounding) lives in the consumer of those
files; this package only talks to model runtimes and the filesystem.
"""
from .adapter import Capture, ExtractorError, ModelRuntime, resolve_grid_size
from .extract import (
    ExtractionJob,
    ExtractionSample,
    attention_rows_to_maps,
    extract_sample,
    run_job,
)
from .formats import encode_dump, write_annotations, write_dump, write_manifest

__all__ = [
    "Capture",
    "ExtractorError",
    "ModelRuntime",
    "resolve_grid_size",
    "ExtractionJob",
    "ExtractionSample",
    "attention_rows_to_maps",
    "extract_sample",
    "run_job",
    "encode_dump",
    "write_dump",
    "write_manifest",
    "write_annotations",
]
