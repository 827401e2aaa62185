import numpy as np
import pytest

from locheads import fixtures
from locheads.types import AttentionDump, AttnMap


@pytest.fixture(scope="session")
def acceptance_spec() -> fixtures.FixtureSpec:
    return fixtures.FixtureSpec(num_samples=1000, rng_seed=42)


@pytest.fixture(scope="session")
def acceptance_corpus(acceptance_spec):
    """The 1000-sample planted-head corpus, generated once per session."""
    pairs = list(fixtures.iter_samples(acceptance_spec))
    return [d for d, _ in pairs], [a for _, a in pairs]


@pytest.fixture(scope="session")
def small_spec() -> fixtures.FixtureSpec:
    return fixtures.FixtureSpec(num_samples=60, rng_seed=42)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    pairs = list(fixtures.iter_samples(small_spec))
    return [d for d, _ in pairs], [a for _, a in pairs]


@pytest.fixture(scope="session")
def disk_corpus(tmp_path_factory):
    """A 50-sample corpus written to disk for CLI and IO tests."""
    out = tmp_path_factory.mktemp("corpus")
    spec = fixtures.FixtureSpec(num_samples=50, rng_seed=7)
    manifest, annotations = fixtures.generate_corpus(spec, out)
    return spec, manifest, annotations


def random_map(rng: np.random.Generator, grid: int, scale: float = 0.005) -> AttnMap:
    values = (rng.random((grid, grid)) * scale).astype(np.float32)
    return AttnMap(grid_size=grid, values=values)


def random_dump(
    rng: np.random.Generator,
    sample_id: str = "s0",
    grid: int = 6,
    layers: int = 3,
    heads: int = 2,
) -> AttentionDump:
    maps = (rng.random((layers, heads, grid, grid)) * 0.002).astype(np.float32)
    return AttentionDump(
        sample_id=sample_id,
        grid_size=grid,
        num_layers=layers,
        num_heads=heads,
        maps=maps,
        image_width=grid * 14,
        image_height=grid * 14,
        text=f"query {sample_id}",
    )
