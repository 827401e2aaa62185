"""Command-line extraction driver.

Reads a dataset description (the same annotation document the analysis
toolkit consumes, with an extra image_path field per sample), runs every
sample through a LLaVA-style checkpoint, and writes an LHAD corpus:

  lhad-extract --model llava-hf/llava-1.5-7b-hf --dataset refs.json \
      --images ./images --out corpus --device cuda

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adapter import ExtractorError
from .extract import ExtractionJob, ExtractionSample, run_job


def _load_samples(dataset_path: Path, images_dir: Path) -> list[ExtractionSample]:
    documents = json.loads(dataset_path.read_text(encoding="utf-8"))
    if not isinstance(documents, list):
        raise ExtractorError(f"{dataset_path}: expected a JSON array of samples")
    samples = []
    for index, doc in enumerate(documents):
        try:
            samples.append(
                ExtractionSample(
                    sample_id=doc["sample_id"],
                    image=str(images_dir / doc["image_path"]),
                    text=doc["text"],
                    image_width=int(doc["image_width"]),
                    image_height=int(doc["image_height"]),
                    gt_bbox=tuple(int(v) for v in doc["gt_bbox"]),
                )
            )
        except KeyError as exc:
            raise ExtractorError(
                f"{dataset_path}: sample #{index} is missing field {exc}"
            ) from exc
    return samples


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lhad-extract",
        description="Capture text-to-image attention into LHAD dumps.",
    )
    parser.add_argument("--model", required=True, help="HF model id or path")
    parser.add_argument("--dataset", required=True,
                        help="JSON array of samples (annotation schema plus "
                             "image_path)")
    parser.add_argument("--images", required=True, help="image root directory")
    parser.add_argument("--out", required=True, help="output corpus directory")
    parser.add_argument("--device", default="cuda")
    parser.add_argument("--dtype", default="float16")
    parser.add_argument("--token-offset", type=int, default=0,
                        help="query token relative to the last input token "
                             "(0 = last, -1 = one before; use for chat "
                             "templates that append suffix tokens)")
    parser.add_argument("--limit", type=int, default=0,
                        help="extract only the first N samples (0 = all)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        from .hf_llava import HFLlavaRuntime

        samples = _load_samples(Path(args.dataset), Path(args.images))
        if args.limit > 0:
            samples = samples[: args.limit]
        runtime = HFLlavaRuntime(args.model, device=args.device, dtype=args.dtype)
        job = ExtractionJob(
            runtime=runtime,
            samples=samples,
            out_dir=args.out,
            token_offset=args.token_offset,
        )
        manifest, annotations = run_job(job)
    except (ExtractorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"manifest: {manifest}")
    print(f"annotations: {annotations}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
