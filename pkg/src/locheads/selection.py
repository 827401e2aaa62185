"""Head discovery: per-sample selection and corpus selection frequency.

For every sample the candidate heads are ranked and the best lowest_n are
"selected"; a head's selection frequency is the fraction of sampled items
that select it, averaged over seeded trials. Heads that are consistently
selected are the localization heads. Three criteria modes exist: "both"
(attention sum gate plus entropy ranking), "sum_only" (rank by attention
sum alone) and "entropy_only" (rank by entropy with no gate); the reduced
modes exist for ablation comparisons.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics
from .entropy import MAX_ENTROPY, binarize_at_mean, entropy_batch
from .stats import HeadStats, dump_attention_sums, max_curvature_threshold
from .types import (
    AttentionDump,
    HeadId,
    LocheadsError,
    SampleAnnotation,
    SelectionReport,
)

CRITERIA = ("both", "sum_only", "entropy_only")
STRATEGIES = ("fixed", "greedy")


@dataclass
class SelectionConfig:
    """Discovery parameters; defaults follow the reference recipe."""

    num_samples_per_trial: int = 1000
    num_trials: int = 5
    lowest_n: int = 10
    top_k: int = 3
    excluded_layers: int = 2
    criteria: str = "both"
    strategy: str = "fixed"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_samples_per_trial < 1:
            raise LocheadsError("num_samples_per_trial must be positive")
        if self.num_trials < 1:
            raise LocheadsError("num_trials must be positive")
        if self.lowest_n < 1:
            raise LocheadsError("lowest_n must be positive")
        if not (1 <= self.top_k <= self.lowest_n):
            raise LocheadsError(
                f"top_k must be in [1, lowest_n], got {self.top_k}"
            )
        if self.excluded_layers < 0:
            raise LocheadsError("excluded_layers must be >= 0")
        if self.criteria not in CRITERIA:
            raise LocheadsError(f"unknown criteria {self.criteria!r}")
        if self.strategy not in STRATEGIES:
            raise LocheadsError(f"unknown strategy {self.strategy!r}")


def sample_eligible_heads(
    dump: AttentionDump,
    tau: float,
    excluded_layers: int,
    criteria: str = "both",
) -> list[HeadId]:
    """Candidate heads for one sample, in HeadId order.

    With criteria "both" a head qualifies when this sample's attention
    sum reaches tau; the reduced modes consider every non-excluded head.
    """
    heads = list(dump.head_ids(excluded_layers))
    if criteria != "both":
        return heads
    sums = dump_attention_sums(dump)
    return [h for h in heads if sums[h.layer, h.head] >= tau]


def _ranked_candidates(
    dump: AttentionDump, eligible: list[HeadId], criteria: str
) -> list[HeadId]:
    """Candidates best-first under the given criteria, HeadId tie-break."""
    if criteria not in CRITERIA:
        raise LocheadsError(f"unknown criteria {criteria!r}")
    if not eligible:
        return []
    if criteria == "sum_only":
        sums = dump_attention_sums(dump)
        return sorted(eligible, key=lambda h: (-sums[h.layer, h.head], h))
    stack = np.stack([dump.maps[h.layer, h.head] for h in eligible])
    entropies = entropy_batch(stack)
    order = sorted(range(len(eligible)), key=lambda i: (entropies[i], eligible[i]))
    return [eligible[i] for i in order]


def per_sample_selection(
    dump: AttentionDump,
    eligible: list[HeadId],
    lowest_n: int,
    criteria: str = "both",
) -> set[HeadId]:
    """Heads selected for one sample: the best lowest_n candidates.

    "both" and "entropy_only" take the lowest spatial entropy among the
    eligible heads; "sum_only" takes the highest attention sums instead.
    Ties break by HeadId order. When fewer than lowest_n heads qualify,
    all of them are selected.
    """
    return set(_ranked_candidates(dump, eligible, criteria)[:lowest_n])


def greedy_heads(
    dump: AttentionDump,
    eligible: list[HeadId],
    top_k: int,
    criteria: str = "both",
) -> list[HeadId]:
    """Best top_k heads for this sample alone, best first."""
    return _ranked_candidates(dump, eligible, criteria)[:top_k]


def selection_frequency(
    corpus: list[AttentionDump],
    stats: HeadStats,
    config: SelectionConfig,
    tau: float | None = None,
) -> SelectionReport:
    """Run the full discovery loop over a corpus.

    Each trial draws num_samples_per_trial samples without replacement
    (seeded with rng_seed + trial index) and counts how often each head is
    selected; frequencies are the per-trial counts divided by the trial
    size, reported as mean and standard deviation over trials. When the
    corpus is smaller than the trial size every trial uses the whole
    corpus. Ranks order heads by descending mean frequency with ties in
    HeadId order. tau defaults to the max-curvature threshold of stats.
    """
    if not corpus:
        raise LocheadsError("empty corpus")
    if tau is None:
        tau = max_curvature_threshold(stats).tau
    by_id = {}
    for dump in corpus:
        if dump.sample_id in by_id:
            raise LocheadsError(f"duplicate sample id {dump.sample_id!r}")
        by_id[dump.sample_id] = dump
    sample_ids = sorted(by_id)
    first = corpus[0]
    heads = list(first.head_ids(config.excluded_layers))
    if not heads:
        raise LocheadsError("no heads left after layer exclusion")

    # Selection per sample does not depend on the trial, so compute it
    # once and let the trials only recount over their subsets.
    selected: dict[str, set[HeadId]] = {}
    for sample_id in sample_ids:
        dump = by_id[sample_id]
        eligible = sample_eligible_heads(
            dump, tau, config.excluded_layers, config.criteria
        )
        selected[sample_id] = per_sample_selection(
            dump, eligible, config.lowest_n, config.criteria
        )

    trial_size = min(config.num_samples_per_trial, len(sample_ids))
    head_index = {h: i for i, h in enumerate(heads)}
    per_trial = np.zeros((config.num_trials, len(heads)), dtype=np.float64)
    for trial in range(config.num_trials):
        rng = np.random.default_rng(config.rng_seed + trial)
        picks = rng.permutation(len(sample_ids))[:trial_size]
        counts = np.zeros(len(heads), dtype=np.int64)
        for pick in picks:
            for head in selected[sample_ids[pick]]:
                counts[head_index[head]] += 1
        per_trial[trial] = counts / trial_size
    mean = per_trial.mean(axis=0)
    std = per_trial.std(axis=0)
    ranks = sorted(heads, key=lambda h: (-mean[head_index[h]], h))
    return SelectionReport(
        grid_size=first.grid_size,
        num_layers=first.num_layers,
        num_heads=first.num_heads,
        tau_used=float(tau),
        frequency={h: float(mean[head_index[h]]) for h in heads},
        frequency_std={h: float(std[head_index[h]]) for h in heads},
        ranks=ranks,
        top_k_heads=ranks[: config.top_k],
        config=asdict(config),
    )


@dataclass
class HeadIoUEntry:
    head: HeadId
    rank: int
    frequency: float
    mean_iou: float


def rank_iou_correlation(
    corpus: list[AttentionDump],
    annotations: list[SampleAnnotation],
    report: SelectionReport,
    min_frequency: float = 0.01,
) -> tuple[list[HeadIoUEntry], tuple[float, float]]:
    """Relate discovery rank to per-head grounding quality.

    For every head whose mean selection frequency reaches min_frequency,
    each sample's map is binarized at its mean and scored by IoU against
    the ground-truth mask downsampled to the grid (a cell is foreground at
    coverage >= 0.5); the head's score is the mean IoU over samples. The
    returned Spearman rho is oriented so that a positive value means
    higher-frequency heads ground better, with rank position (1 = most
    frequent) as the paired variable.
    """
    qualifying = [h for h in report.ranks if report.frequency[h] >= min_frequency]
    if len(qualifying) < 3:
        raise LocheadsError(
            f"need at least 3 heads at frequency >= {min_frequency}, "
            f"got {len(qualifying)}"
        )
    ann_by_id = {a.sample_id: a for a in annotations}
    grid_masks: dict[str, np.ndarray] = {}
    for dump in corpus:
        ann = ann_by_id.get(dump.sample_id)
        if ann is None:
            raise LocheadsError(f"no annotation for sample {dump.sample_id!r}")
        if ann.gt_mask is None:
            raise LocheadsError(
                f"annotation for {dump.sample_id!r} has no ground-truth mask"
            )
        grid_masks[dump.sample_id] = metrics.downsample_mask(
            ann.gt_mask, dump.grid_size
        ).bits
    entries: list[HeadIoUEntry] = []
    for rank_pos, head in enumerate(qualifying, start=1):
        total = 0.0
        for dump in corpus:
            pred = binarize_at_mean(dump.map_for(head)).bits
            gt = grid_masks[dump.sample_id]
            union = np.logical_or(pred, gt).sum()
            inter = np.logical_and(pred, gt).sum()
            total += 1.0 if union == 0 else float(inter) / float(union)
        entries.append(
            HeadIoUEntry(
                head=head,
                rank=rank_pos,
                frequency=report.frequency[head],
                mean_iou=total / len(corpus),
            )
        )
    # Negate rank so that "better rank implies better IoU" shows up as
    # positive correlation.
    rho, p = metrics.spearman(
        [-e.rank for e in entries], [e.mean_iou for e in entries]
    )
    return entries, (rho, p)
