"""Synthetic corpora with a planted localization head.

Every sample shares one ground-truth rectangle. Head roles:

  planted   one compact Gaussian blob centered in the rectangle; highest
            image mass of all heads and spatial entropy 0 every sample.
  echo      the planted pattern plus j isolated satellite cells
            (j = 1..echo_heads); entropy and grounding quality degrade
            strictly with j, which pins discovery ranks 2..k and gives
            the rank-to-IoU analysis a monotone target.
  fragment  4 or more well-separated single-cell blobs with image mass on
            the same ramp as the planted head, so attention sum alone
            cannot tell them apart; entropy is at least ln 4 always.
  diffuse   a broad low-mass bump at a random center; binarizes to one
            connected region, so entropy alone cannot reject it, but its
            attention sum stays under noise_heads_mass.

Fragment and planted/echo masses form one arithmetic ramp and are
constant across samples. The sorted mean-sum curve is then two exact
linear pieces joined at a jump, and the max-curvature threshold lands on
the lowest fragment mass: the adjacent gap is smaller on the fragment
side, which makes the upper junction point the curvature argmax. Keeping
the masses noise-free is what makes that landing deterministic.

Generation is byte-reproducible: sample i uses an rng seeded with
rng_seed XOR i and a fixed draw order.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import io as lio
from .types import (
    AttentionDump,
    BBox,
    BinaryMask,
    HeadId,
    LocheadsError,
    SampleAnnotation,
)

# Fragment/planted mass ramp and diffuse mass floor. The ramp gap must be
# smaller than the diffuse gap (see module docstring), which holds for
# any geometry with more fragment heads than diffuse heads.
RAMP_LO = 0.34
RAMP_HI = 0.80
DIFFUSE_LO = 0.01

# Echo satellites each carry this fraction of the head's image mass.
SATELLITE_MASS_FRACTION = 0.02


@dataclass
class FixtureSpec:
    """Parameters of a generated corpus."""

    num_samples: int = 1000
    grid_size: int = 16
    num_layers: int = 32
    num_heads: int = 4
    planted_head: HeadId = HeadId(14, 2)
    blob_sigma: float = 0.22
    noise_heads_mass: float = 0.10
    diffuse_heads_fraction: float = 0.10
    rng_seed: int = 0
    echo_heads: int = 9
    background_layers: int = 2
    pixels_per_cell: int = 21

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise LocheadsError("num_samples must be positive")
        if self.grid_size < 12:
            raise LocheadsError("grid_size must be at least 12")
        if self.background_layers < 1:
            raise LocheadsError("background_layers must be positive")
        if self.planted_head.layer < self.background_layers:
            raise LocheadsError(
                "planted head sits in a background layer "
                f"({self.planted_head.label()})"
            )
        if not (0 < self.noise_heads_mass <= 0.18):
            raise LocheadsError("noise_heads_mass must be in (0, 0.18]")
        if not (0 < self.diffuse_heads_fraction < 0.5):
            raise LocheadsError("diffuse_heads_fraction must be in (0, 0.5)")
        if self.echo_heads < 2:
            raise LocheadsError("need at least 2 echo heads")
        if not (0.05 <= self.blob_sigma <= 0.6):
            raise LocheadsError("blob_sigma must be in [0.05, 0.6]")
        roles = head_roles(self)
        del roles  # constructing the role map runs all layout checks


def _live_heads(spec: FixtureSpec) -> list[HeadId]:
    return [
        HeadId(layer, head)
        for layer in range(spec.background_layers, spec.num_layers)
        for head in range(spec.num_heads)
    ]


def head_roles(spec: FixtureSpec) -> dict[HeadId, tuple]:
    """Assign every non-background head a role and a constant image mass.

    Role tuples: ("diffuse", mass), ("planted", mass), ("echo", j, mass),
    ("fragment", mass). Mass layout guarantees the planted head has the
    highest mass, the next nine masses belong to fragments whose HeadIds
    precede the planted head, and echoes come right after those, so a
    sum-only ranking surfaces fragments while the combined criteria
    surface the planted head and its echoes.
    """
    live = _live_heads(spec)
    n_diffuse = round(spec.diffuse_heads_fraction * len(live))
    if n_diffuse < 3:
        raise LocheadsError("diffuse fraction leaves fewer than 3 diffuse heads")
    diffuse = live[:n_diffuse]
    rest = live[n_diffuse:]
    if spec.planted_head in diffuse or spec.planted_head not in rest:
        raise LocheadsError(
            f"planted head {spec.planted_head.label()} collides with the "
            "diffuse block; move it to a later layer"
        )
    planted_pos = rest.index(spec.planted_head)
    if planted_pos < 9:
        raise LocheadsError(
            "need at least 9 fragment heads before the planted head "
            f"(have {planted_pos})"
        )
    echoes = rest[planted_pos + 1 : planted_pos + 1 + spec.echo_heads]
    if len(echoes) < spec.echo_heads:
        raise LocheadsError("not enough heads after the planted head for echoes")
    fragments = [
        h for h in rest if h != spec.planted_head and h not in set(echoes)
    ]
    n_fragment_ramp = 1 + spec.echo_heads + len(fragments)
    ramp = np.linspace(RAMP_LO, RAMP_HI, n_fragment_ramp)
    diffuse_masses = np.linspace(DIFFUSE_LO, spec.noise_heads_mass, n_diffuse)

    roles: dict[HeadId, tuple] = {}
    for head, mass in zip(diffuse, diffuse_masses):
        roles[head] = ("diffuse", float(mass))
    pos = n_fragment_ramp - 1
    roles[spec.planted_head] = ("planted", float(ramp[pos]))
    pos -= 1
    # The nine heaviest fragments are the lowest-HeadId ones, placed
    # before the planted head.
    for head in fragments[:9]:
        roles[head] = ("fragment", float(ramp[pos]))
        pos -= 1
    for j, head in enumerate(echoes, start=1):
        roles[head] = ("echo", j, float(ramp[pos]))
        pos -= 1
    for head in fragments[9:]:
        roles[head] = ("fragment", float(ramp[pos]))
        pos -= 1
    return roles


def _gaussian_blob(
    grid: int, center_r: float, center_c: float, sigma_r: float, sigma_c: float
) -> np.ndarray:
    rows = np.arange(grid, dtype=np.float64)
    dr = (rows - center_r) / sigma_r
    dc = (rows - center_c) / sigma_c
    blob = np.exp(-0.5 * dr * dr)[:, None] * np.exp(-0.5 * dc * dc)[None, :]
    return blob / blob.sum()


def _satellite_pool(grid: int, rect: tuple[int, int, int, int]) -> list[tuple[int, int]]:
    """Isolated cells for echo satellites: a stride-3 lattice kept at
    Chebyshev distance >= 2 from the rectangle so satellites never touch
    the blob support or each other."""
    x0, y0, x1, y1 = rect
    pool = []
    for r in range(0, grid, 3):
        for c in range(0, grid, 3):
            if y0 - 2 <= r < y1 + 2 and x0 - 2 <= c < x1 + 2:
                continue
            pool.append((r, c))
    return pool


def iter_samples(
    spec: FixtureSpec,
) -> Iterator[tuple[AttentionDump, SampleAnnotation]]:
    """Generate the corpus sample by sample, deterministically."""
    roles = head_roles(spec)
    grid = spec.grid_size
    scale = spec.pixels_per_cell
    image_w = image_h = grid * scale
    lattice = [(r, c) for r in range(0, grid, 2) for c in range(0, grid, 2)]
    id_width = len(str(spec.num_samples - 1))
    background_value = 0.02 / (grid * grid)

    for index in range(spec.num_samples):
        rng = np.random.default_rng(spec.rng_seed ^ index)
        rect_w = int(rng.integers(5, 10))
        rect_h = int(rng.integers(5, 10))
        x0 = int(rng.integers(0, grid - rect_w + 1))
        y0 = int(rng.integers(0, grid - rect_h + 1))
        rect = (x0, y0, x0 + rect_w, y0 + rect_h)
        blob = _gaussian_blob(
            grid,
            center_r=y0 + rect_h / 2.0 - 0.5,
            center_c=x0 + rect_w / 2.0 - 0.5,
            sigma_r=spec.blob_sigma * rect_h,
            sigma_c=spec.blob_sigma * rect_w,
        )
        pool = _satellite_pool(grid, rect)
        order = rng.permutation(len(pool))
        satellites = [pool[i] for i in order[: spec.echo_heads]]
        if len(satellites) < spec.echo_heads:
            raise LocheadsError(
                f"sample {index}: only {len(satellites)} satellite slots"
            )

        maps = np.full(
            (spec.num_layers, spec.num_heads, grid, grid),
            background_value,
            dtype=np.float32,
        )
        for layer in range(spec.background_layers, spec.num_layers):
            for head in range(spec.num_heads):
                role = roles[HeadId(layer, head)]
                if role[0] == "planted":
                    cells = blob * role[1]
                elif role[0] == "echo":
                    j, mass = role[1], role[2]
                    sat_value = SATELLITE_MASS_FRACTION * mass
                    cells = blob * (mass - j * sat_value)
                    for r, c in satellites[:j]:
                        cells[r, c] += sat_value
                elif role[0] == "fragment":
                    count = int(rng.integers(6, 25))
                    picks = rng.choice(len(lattice), size=count, replace=False)
                    cells = np.zeros((grid, grid), dtype=np.float64)
                    value = role[1] / count
                    for p in picks:
                        r, c = lattice[p]
                        cells[r, c] = value
                else:  # diffuse
                    center_r = float(rng.uniform(2.0, grid - 2.0))
                    center_c = float(rng.uniform(2.0, grid - 2.0))
                    cells = (
                        _gaussian_blob(grid, center_r, center_c, grid / 4.0, grid / 4.0)
                        * role[1]
                    )
                maps[layer, head] = cells.astype(np.float32)

        sample_id = f"s{index:0{id_width}d}"
        dump = AttentionDump(
            sample_id=sample_id,
            grid_size=grid,
            num_layers=spec.num_layers,
            num_heads=spec.num_heads,
            maps=maps,
            image_width=image_w,
            image_height=image_h,
            text=f"synthetic target {index}",
        )
        px_box = BBox(x0 * scale, y0 * scale, (x0 + rect_w) * scale,
                      (y0 + rect_h) * scale)
        mask_bits = np.zeros((image_h, image_w), dtype=bool)
        mask_bits[px_box.y_min : px_box.y_max, px_box.x_min : px_box.x_max] = True
        annotation = SampleAnnotation(
            sample_id=sample_id,
            image_width=image_w,
            image_height=image_h,
            text=dump.text,
            gt_bbox=px_box,
            gt_mask=BinaryMask.from_bits(mask_bits),
        )
        yield dump, annotation


def generate_corpus(spec: FixtureSpec, out_dir: str | Path) -> tuple[Path, Path]:
    """Write dumps, manifest and annotations; returns their paths.

    The same spec always produces byte-identical files.
    """
    out_dir = Path(out_dir)
    dumps_dir = out_dir / "dumps"
    dumps_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    annotations = []
    for dump, annotation in iter_samples(spec):
        dump_path = dumps_dir / f"{dump.sample_id}.lhad"
        lio.write_dump(dump, dump_path)
        entries.append(
            lio.ManifestEntry(
                sample_id=dump.sample_id,
                dump_path=f"dumps/{dump.sample_id}.lhad",
                has_annotation=True,
            )
        )
        annotations.append(annotation)
    manifest_path = out_dir / "manifest.json"
    annotations_path = out_dir / "annotations.json"
    lio.write_manifest(entries, manifest_path)
    lio.write_annotations(annotations, annotations_path)
    return manifest_path, annotations_path
