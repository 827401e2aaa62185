"""Command-line interface.

Subcommands:

  discover      find localization heads over a corpus, write a report
  ground        predict boxes and pseudo-masks from a report
  eval          score grounding results against annotations
  analyze       relate discovery rank to per-head grounding quality
  gen-fixtures  generate a synthetic corpus with a planted head

Exit codes: 0 on success, 1 on runtime errors (bad files, invalid
values), 2 on usage errors. All outputs are deterministic: the same
inputs and flags produce byte-identical files, regardless of --workers.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as lio
from .fixtures import FixtureSpec, generate_corpus
from .grounding import GroundingConfig, ground_sample
from .metrics import evaluate_rec, evaluate_res
from .selection import SelectionConfig, rank_iou_correlation, selection_frequency
from .stats import mean_attention_sums
from .types import HeadId, LocheadsError, SelectionReport


def _load_corpus(manifest: str, strict: bool):
    return list(lio.iter_corpus(manifest, strict=strict))


def _write_curve_tsv(path: Path, report_curve) -> None:
    lines = ["index\thead\tmean_sum"]
    for i, (head, value) in enumerate(report_curve):
        lines.append(f"{i}\t{head.label()}\t{value!r}")
    path.write_text("\n".join(lines) + "\n")


def _write_freq_tsv(path: Path, report: SelectionReport) -> None:
    lines = ["rank\thead\tmean_frequency\tstd_frequency"]
    for position, head in enumerate(report.ranks, start=1):
        lines.append(
            f"{position}\t{head.label()}\t{report.frequency[head]!r}"
            f"\t{report.frequency_std[head]!r}"
        )
    path.write_text("\n".join(lines) + "\n")


def _cmd_discover(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = _load_corpus(args.manifest, args.strict)
    if args.annotations:
        known = {a.sample_id for a in lio.read_annotations(args.annotations)}
        missing = [d.sample_id for d in corpus if d.sample_id not in known]
        if missing:
            raise LocheadsError(
                f"{len(missing)} corpus samples lack annotations, first: "
                f"{missing[0]!r}"
            )
    config = SelectionConfig(
        num_samples_per_trial=args.samples_per_trial,
        num_trials=args.trials,
        lowest_n=args.lowest_n,
        top_k=args.k,
        excluded_layers=args.excluded_layers,
        criteria=args.criteria,
        strategy=args.strategy,
        rng_seed=args.seed,
    )
    stats = mean_attention_sums(corpus, config.excluded_layers)
    report = selection_frequency(corpus, stats, config, tau=args.tau)
    lio.write_report(report, out / "report.json")
    ordered = sorted(stats.mean_sums.items(), key=lambda kv: (kv[1], kv[0]))
    _write_curve_tsv(out / "curve.tsv", ordered)
    _write_freq_tsv(out / "freq.tsv", report)
    print(f"samples: {stats.num_samples}")
    print(f"threshold: {report.tau_used!r}")
    for position, head in enumerate(report.top_k_heads, start=1):
        print(
            f"head {position}: {head.label()} "
            f"frequency {report.frequency[head]:.4f} "
            f"+- {report.frequency_std[head]:.4f}"
        )
    print(f"report: {out / 'report.json'}")
    return 0


def _ground_one(task) -> tuple:
    path, strict, report, config, top_k, criteria, fallback = task
    dump = lio.read_dump(path, strict=strict)
    result = ground_sample(
        dump,
        report,
        config,
        top_k=top_k,
        criteria=criteria,
        fallback_argmax=fallback,
    )
    return dump.sample_id, dump.text, result


def _overlay_rgb(result) -> np.ndarray:
    """Grayscale combined map upscaled to pixels, predicted box in red."""
    values = result.combined_map.values.astype(np.float64)
    peak = float(values.max())
    gray = np.zeros_like(values) if peak <= 0 else values / peak
    width = result.pseudo_mask_pixels.width
    height = result.pseudo_mask_pixels.height
    grid = result.combined_map.grid_size
    rows = np.minimum((np.arange(height) * grid) // height, grid - 1)
    cols = np.minimum((np.arange(width) * grid) // width, grid - 1)
    pixels = (gray[np.ix_(rows, cols)] * 255.0).round().astype(np.uint8)
    rgb = np.repeat(pixels[:, :, None], 3, axis=2)
    x0, y0, x1, y1 = result.bbox_pixels.as_tuple()
    stroke = 3
    red = np.array([224, 32, 32], dtype=np.uint8)
    rgb[y0 : min(y0 + stroke, height), x0:x1] = red
    rgb[max(y1 - stroke, 0) : y1, x0:x1] = red
    rgb[y0:y1, x0 : min(x0 + stroke, width)] = red
    rgb[y0:y1, max(x1 - stroke, 0) : x1] = red
    return rgb


def _cmd_ground(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = lio.read_report(args.report)
    criteria = args.criteria or report.config.get("criteria", "both")
    strategy = args.strategy or report.config.get("strategy", "fixed")
    config = GroundingConfig(
        kernel_size=args.kernel,
        sigma=args.sigma,
        smoothing_enabled=not args.no_smoothing,
        strategy=strategy,
    )
    entries = lio.read_manifest(args.manifest)
    base = Path(args.manifest).parent
    tasks = [
        (
            str(base / e.dump_path),
            args.strict,
            report,
            config,
            args.k,
            criteria,
            args.fallback_argmax,
        )
        for e in entries
    ]
    workers = args.workers if args.workers > 0 else (os.cpu_count() or 1)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_ground_one, tasks, chunksize=8))
    else:
        rows = [_ground_one(t) for t in tasks]
    rows.sort(key=lambda row: row[0])
    results = [result for _, _, result in rows]
    lio.write_results(results, out / "results.jsonl")
    # Box prompts for external mask refiners, one entry per sample.
    prompts = {
        sample_id: {"bbox_pixels": list(result.bbox_pixels.as_tuple()), "text": text}
        for sample_id, text, result in rows
    }
    lio.write_json(prompts, out / "prompts.json")
    if args.overlays:
        overlay_dir = out / "overlays"
        overlay_dir.mkdir(exist_ok=True)
        for sample_id, _, result in rows:
            lio.write_ppm(overlay_dir / f"{sample_id}.ppm", _overlay_rgb(result))
    print(f"grounded {len(results)} samples -> {out / 'results.jsonl'}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = lio.read_results(args.results)
    annotations = lio.read_annotations(args.annotations)
    if args.task == "rec":
        summary = evaluate_rec(records, annotations)
    else:
        summary = evaluate_res(records, annotations)
    path = out / f"eval_{args.task}.json"
    lio.write_eval_summary(summary, path)
    print(f"samples: {summary.num_samples}")
    print(f"acc@0.5: {summary.acc_at_05:.4f}")
    print(f"mean box IoU: {summary.mean_box_iou:.4f}")
    if args.task == "res":
        print(f"cIoU: {summary.ciou:.4f}")
    print(f"summary: {path}")
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = lio.read_report(args.report)
    corpus = _load_corpus(args.manifest, args.strict)
    annotations = lio.read_annotations(args.annotations)
    entries, (rho, p_value) = rank_iou_correlation(
        corpus, annotations, report, min_frequency=args.min_frequency
    )
    lines = ["rank\thead\tmean_frequency\tmean_iou"]
    for e in entries:
        lines.append(f"{e.rank}\t{e.head.label()}\t{e.frequency!r}\t{e.mean_iou!r}")
    (out / "head_iou.tsv").write_text("\n".join(lines) + "\n")
    print(f"qualifying heads: {len(entries)}")
    print(f"spearman rho: {rho!r}")
    print(f"p value: {p_value!r}")
    return 0


def _cmd_gen_fixtures(args: argparse.Namespace) -> int:
    spec = FixtureSpec(
        num_samples=args.samples,
        grid_size=args.grid,
        num_layers=args.layers,
        num_heads=args.heads,
        rng_seed=args.seed,
    )
    if args.planted_head is not None:
        spec = replace(spec, planted_head=HeadId.parse(args.planted_head))
    manifest, annotations = generate_corpus(spec, args.out)
    print(f"manifest: {manifest}")
    print(f"annotations: {annotations}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locheads",
        description="Find localization heads and ground referring expressions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discover", help="find localization heads over a corpus")
    p.add_argument("--manifest", required=True, help="corpus manifest JSON")
    p.add_argument("--annotations", default=None,
                   help="optional; verify every corpus sample is annotated")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--samples-per-trial", type=int, default=1000)
    p.add_argument("--lowest-n", type=int, default=10)
    p.add_argument("--k", type=int, default=3, help="heads kept in the report")
    p.add_argument("--tau", type=float, default=None,
                   help="override the curvature threshold")
    p.add_argument("--criteria", choices=["both", "sum_only", "entropy_only"],
                   default="both")
    p.add_argument("--strategy", choices=["fixed", "greedy"], default="fixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--excluded-layers", type=int, default=2)
    p.add_argument("--strict", action="store_true",
                   help="validate attention invariants while reading")
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("ground", help="predict boxes from a report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="report.json from discover")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None,
                   help="number of heads to combine (default: report top_k)")
    p.add_argument("--kernel", type=int, default=7, help="smoothing kernel size")
    p.add_argument("--sigma", type=float, default=1.0, help="smoothing sigma")
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--criteria", default=None,
                   choices=["both", "sum_only", "entropy_only"],
                   help="per-sample criteria for greedy strategy "
                        "(default: from report)")
    p.add_argument("--strategy", default=None, choices=["fixed", "greedy"],
                   help="head choice per sample (default: from report)")
    p.add_argument("--fallback-argmax", action="store_true",
                   help="box the peak cell when binarization is empty")
    p.add_argument("--overlays", action="store_true",
                   help="write PPM visualizations next to the results")
    p.add_argument("--workers", type=int, default=0,
                   help="parallel sample workers; 0 = all cores (output is "
                        "identical regardless)")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=_cmd_ground)

    p = sub.add_parser("eval", help="score grounding results")
    p.add_argument("--results", required=True, help="results.jsonl from ground")
    p.add_argument("--annotations", required=True)
    p.add_argument("--task", choices=["rec", "res"], default="rec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", help="rank-to-IoU correlation per head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-frequency", type=float, default=0.01)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("gen-fixtures", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--layers", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--planted-head", default=None,
                   help='planted head as "L<layer>H<head>"')
    p.set_defaults(func=_cmd_gen_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (LocheadsError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
