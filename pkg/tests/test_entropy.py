import math
import time

import numpy as np
import pytest

from locheads.entropy import (
    MAX_ENTROPY,
    binarize_at_mean,
    binarize_batch,
    connected_components,
    entropy_batch,
    label_batch,
    spatial_entropy,
)
from locheads.types import AttnMap, BinaryMask

from conftest import random_map
from oracle_utils import (
    entropy_of_sizes,
    flood_fill_components,
    spatial_entropy_oracle,
)


def _map_from(rows) -> AttnMap:
    values = np.asarray(rows, dtype=np.float32)
    return AttnMap(values.shape[0], values)


class TestBinarize:
    def test_strictly_above_mean(self):
        m = _map_from([[1.0, 1.0], [1.0, 1.0]])
        assert binarize_at_mean(m).count() == 0  # nothing is > mean

    def test_single_hot_cell(self):
        m = _map_from([[0.0, 0.0, 0.0], [0.0, 9.0, 0.0], [0.0, 0.0, 0.0]])
        mask = binarize_at_mean(m)
        assert mask.count() == 1
        assert mask.bits[1, 1]

    def test_mean_uses_64_bit_accumulation(self):
        # A large flat float32 map whose naive float32 mean drifts; the
        # 64-bit mean keeps every equal cell below threshold.
        values = np.full((64, 64), 0.1, dtype=np.float32)
        mask = binarize_at_mean(AttnMap(64, values))
        assert mask.count() == 0

    def test_binarize_batch_matches_single(self):
        rng = np.random.default_rng(11)
        maps = np.stack([random_map(rng, 8).values for _ in range(40)])
        batched = binarize_batch(maps)
        for i in range(len(maps)):
            single = binarize_at_mean(AttnMap(8, maps[i]))
            assert np.array_equal(batched[i], single.bits)


class TestConnectedComponents:
    def _components(self, rows):
        bits = np.asarray(rows, dtype=bool)
        return connected_components(BinaryMask.from_bits(bits))

    def test_empty_mask(self):
        assert len(self._components(np.zeros((4, 4)))) == 0

    def test_full_mask_single_component(self):
        comps = self._components(np.ones((3, 5)))
        assert comps.sizes == [15]

    def test_plus_shape_is_one_component(self):
        comps = self._components(
            [[0, 1, 0], [1, 1, 1], [0, 1, 0]]
        )
        assert len(comps) == 1
        assert comps.sizes == [5]

    def test_diagonal_touch_is_connected(self):
        # 8-connectivity: cells sharing only a corner belong together.
        comps = self._components([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
        assert len(comps) == 1

    def test_isolated_corners(self):
        comps = self._components([[1, 0, 0], [0, 0, 0], [0, 0, 1]])
        assert sorted(comps.sizes) == [1, 1]

    def test_component_ordering_and_cell_order(self):
        comps = self._components(
            [
                [0, 0, 0, 1],
                [1, 1, 0, 0],
                [0, 0, 0, 1],
            ]
        )
        # Sorted by (min row, min col): top-right single, then the pair,
        # then the bottom-right single.
        assert comps.components[0] == [(0, 3)]
        assert comps.components[1] == [(1, 0), (1, 1)]
        assert comps.components[2] == [(2, 3)]
        for comp in comps.components:
            assert comp == sorted(comp)

    def test_matches_flood_fill_on_random_masks(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            h = int(rng.integers(1, 10))
            w = int(rng.integers(1, 10))
            bits = rng.random((h, w)) < rng.uniform(0.1, 0.9)
            got = connected_components(BinaryMask.from_bits(bits))
            want = flood_fill_components(bits)
            assert sorted(map(tuple, got.components)) == sorted(
                map(tuple, (sorted(c) for c in want))
            )


class TestSpatialEntropy:
    def test_empty_support_is_max_entropy(self):
        result = spatial_entropy(_map_from(np.full((4, 4), 0.25)))
        assert result.value == MAX_ENTROPY
        assert math.isinf(result.value)
        assert result.num_components == 0
        assert result.support == 0

    def test_single_component_is_zero(self):
        m = _map_from(
            [
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 1.0, 0.0],
                [0.0, 1.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ]
        )
        result = spatial_entropy(m)
        assert result.value == 0.0
        assert result.num_components == 1
        assert result.support == 4

    def test_two_equal_components_is_ln2(self):
        m = _map_from(
            [
                [1.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ]
        )
        assert spatial_entropy(m).value == pytest.approx(math.log(2), abs=1e-15)

    def test_three_one_split_frozen_value(self):
        # Components of sizes {3, 1}: H = -(3/4)ln(3/4) - (1/4)ln(1/4).
        m = _map_from(
            [
                [1.0, 1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        result = spatial_entropy(m)
        assert result.num_components == 2
        assert result.value == pytest.approx(0.5623351446188083, abs=1e-15)
        assert result.value == pytest.approx(entropy_of_sizes([3, 1]), abs=1e-15)

    def test_bridging_two_blobs_reduces_entropy(self):
        split = _map_from(
            [
                [1.0, 1.0, 0.0, 1.0, 1.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
            ]
        )
        bridged = _map_from(
            [
                [1.0, 1.0, 1.0, 1.0, 1.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0, 0.0],
            ]
        )
        assert spatial_entropy(bridged).value < spatial_entropy(split).value
        assert spatial_entropy(bridged).value == 0.0

    def test_identical_values_identical_result(self):
        rng = np.random.default_rng(31)
        values = random_map(rng, 8).values
        a = spatial_entropy(AttnMap(8, values.copy()))
        b = spatial_entropy(AttnMap(8, values.copy()))
        assert (a.value, a.num_components, a.support) == (
            b.value,
            b.num_components,
            b.support,
        )

    def test_matches_oracle_on_random_maps(self):
        rng = np.random.default_rng(41)
        start = time.monotonic()
        for _ in range(1000):
            m = random_map(rng, 8)
            got = spatial_entropy(m)
            want = spatial_entropy_oracle(m.values)
            if math.isinf(want):
                assert got.value == MAX_ENTROPY
            else:
                assert abs(got.value - want) <= 1e-12
        assert time.monotonic() - start < 5.0

    def test_exact_partition_values(self):
        # Hand-built masks with known component-size partitions.
        cases = {
            (1, 1, 1, 1): [
                [1, 0, 0, 1],
                [0, 0, 0, 0],
                [0, 0, 0, 0],
                [1, 0, 0, 1],
            ],
            (2, 2): [
                [1, 1, 0, 0],
                [0, 0, 0, 0],
                [0, 0, 1, 1],
                [0, 0, 0, 0],
            ],
            (4, 2, 1): [
                [1, 1, 0, 1],
                [1, 1, 0, 0],
                [0, 0, 0, 0],
                [1, 1, 0, 0],
            ],
        }
        for sizes, rows in cases.items():
            bits = np.asarray(rows, dtype=np.float32)
            result = spatial_entropy(AttnMap(4, bits))
            assert result.num_components == len(sizes)
            assert sorted(
                connected_components(
                    binarize_at_mean(AttnMap(4, bits))
                ).sizes
            ) == sorted(sizes)
            assert result.value == pytest.approx(
                entropy_of_sizes(list(sizes)), abs=1e-15
            )

    def test_entropy_bounds(self):
        # 0 <= H <= ln(number of components), with finite H on nonempty
        # support.
        rng = np.random.default_rng(51)
        for _ in range(400):
            m = random_map(rng, int(rng.integers(2, 10)))
            result = spatial_entropy(m)
            if result.support == 0:
                assert result.value == MAX_ENTROPY
                continue
            assert 0.0 <= result.value <= math.log(max(result.num_components, 1)) + 1e-12
            if result.num_components == 1:
                assert result.value == 0.0


class TestBatchedEntropy:
    def test_entropy_batch_bitwise_matches_single(self):
        rng = np.random.default_rng(61)
        maps = np.stack([random_map(rng, 7).values for _ in range(80)])
        # Mix in a flat map (empty support) and a single-blob map.
        maps[0] = 0.02
        maps[1] = 0.0
        maps[1, 2:4, 2:4] = 1.0
        batched = entropy_batch(maps)
        for i in range(len(maps)):
            single = spatial_entropy(AttnMap(7, maps[i])).value
            if math.isinf(single):
                assert math.isinf(batched[i])
            else:
                assert batched[i] == single  # bitwise, not approx

    def test_label_batch_matches_per_mask_labelling(self):
        rng = np.random.default_rng(71)
        masks = rng.random((30, 6, 6)) < 0.5
        stacked = label_batch(masks)
        for i in range(len(masks)):
            alone = label_batch(masks[i][None])[0]
            assert np.array_equal(stacked[i], alone)

    def test_label_batch_component_count_matches_flood_fill(self):
        rng = np.random.default_rng(81)
        for _ in range(100):
            bits = rng.random((7, 7)) < 0.4
            labels = label_batch(bits[None])[0]
            got = len(np.unique(labels[bits])) if bits.any() else 0
            assert got == len(flood_fill_components(bits))
