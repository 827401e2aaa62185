import json
import struct

import numpy as np
import pytest

from locheads import io as lio
from locheads.types import (
    AttentionDump,
    BBox,
    BinaryMask,
    HeadId,
    LocheadsError,
    SampleAnnotation,
    SelectionReport,
)

from conftest import random_dump


class TestDumpRoundTrip:
    def test_hundred_random_dumps_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(100):
            dump = random_dump(
                rng,
                sample_id=f"sample-{i:03d}",
                grid=int(rng.integers(1, 9)),
                layers=int(rng.integers(1, 6)),
                heads=int(rng.integers(1, 5)),
            )
            path = tmp_path / f"d{i}.lhad"
            lio.write_dump(dump, path)
            back = lio.read_dump(path)
            assert back.sample_id == dump.sample_id
            assert back.text == dump.text
            assert (back.grid_size, back.num_layers, back.num_heads) == (
                dump.grid_size, dump.num_layers, dump.num_heads,
            )
            assert (back.image_width, back.image_height) == (
                dump.image_width, dump.image_height,
            )
            assert back.maps.tobytes() == dump.maps.tobytes()

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        dump = random_dump(rng)
        a, b = tmp_path / "a.lhad", tmp_path / "b.lhad"
        lio.write_dump(dump, a)
        lio.write_dump(lio.read_dump(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_unicode_text_and_id(self, tmp_path):
        rng = np.random.default_rng(2)
        dump = random_dump(rng, sample_id="样本-α")
        dump.text = "le café à gauche ☕"
        path = tmp_path / "u.lhad"
        lio.write_dump(dump, path)
        back = lio.read_dump(path)
        assert back.sample_id == "样本-α"
        assert back.text == "le café à gauche ☕"


class TestDumpErrors:
    @pytest.fixture()
    def good_file(self, tmp_path):
        rng = np.random.default_rng(3)
        path = tmp_path / "good.lhad"
        lio.write_dump(random_dump(rng), path)
        return path

    def test_bad_magic(self, good_file):
        data = good_file.read_bytes()
        good_file.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(lio.BadMagicError, match="XXXX"):
            lio.read_dump(good_file)

    def test_version_mismatch(self, good_file):
        data = bytearray(good_file.read_bytes())
        data[4:6] = struct.pack("<H", 2)
        good_file.write_bytes(bytes(data))
        with pytest.raises(lio.VersionMismatchError, match="version 2"):
            lio.read_dump(good_file)

    def test_truncated_payload_names_lengths(self, good_file):
        data = good_file.read_bytes()
        good_file.write_bytes(data[:-4])
        with pytest.raises(lio.TruncatedDumpError) as exc:
            lio.read_dump(good_file)
        message = str(exc.value)
        assert str(len(data)) in message        # expected length
        assert str(len(data) - 4) in message    # actual length

    def test_truncated_header(self, good_file):
        good_file.write_bytes(good_file.read_bytes()[:9])
        with pytest.raises(lio.TruncatedDumpError):
            lio.read_dump(good_file)

    def test_truncated_everywhere(self, good_file):
        # Any strict prefix must raise a distinct dump-format error, never
        # return a value or fail with an unrelated exception.
        data = good_file.read_bytes()
        for cut in range(len(data)):
            good_file.write_bytes(data[:cut])
            with pytest.raises(lio.DumpFormatError):
                lio.read_dump(good_file)

    def test_trailing_bytes(self, good_file):
        good_file.write_bytes(good_file.read_bytes() + b"\x00\x00")
        with pytest.raises(lio.DumpFormatError, match="2 trailing"):
            lio.read_dump(good_file)

    def test_zero_geometry(self, good_file):
        data = bytearray(good_file.read_bytes())
        data[6:8] = struct.pack("<H", 0)  # grid_size = 0
        good_file.write_bytes(bytes(data))
        with pytest.raises(lio.DumpFormatError, match="zero geometry"):
            lio.read_dump(good_file)

    def test_error_types_are_distinct(self):
        assert issubclass(lio.BadMagicError, lio.DumpFormatError)
        assert issubclass(lio.VersionMismatchError, lio.DumpFormatError)
        assert issubclass(lio.TruncatedDumpError, lio.DumpFormatError)
        assert not issubclass(lio.BadMagicError, lio.VersionMismatchError)
        assert not issubclass(lio.TruncatedDumpError, lio.BadMagicError)


class TestStrictMode:
    def _write(self, tmp_path, mutate):
        rng = np.random.default_rng(4)
        dump = random_dump(rng)
        mutate(dump.maps)
        path = tmp_path / "d.lhad"
        lio.write_dump(dump, path)
        return path

    def test_negative_weight_rejected_in_strict(self, tmp_path):
        path = self._write(tmp_path, lambda m: m.__setitem__((0, 0, 0, 0), -0.1))
        lio.read_dump(path)  # lenient mode loads it
        with pytest.raises(lio.DumpValidationError, match="negative"):
            lio.read_dump(path, strict=True)

    def test_oversum_rejected_in_strict(self, tmp_path):
        path = self._write(tmp_path, lambda m: m.__setitem__((1, 1), 0.1))
        with pytest.raises(lio.DumpValidationError, match="exceeds"):
            lio.read_dump(path, strict=True)

    def test_valid_dump_passes_strict(self, tmp_path):
        path = self._write(tmp_path, lambda m: None)
        assert lio.read_dump(path, strict=True).sample_id == "s0"


class TestManifest:
    def test_round_trip(self, tmp_path):
        entries = [
            lio.ManifestEntry("a", "dumps/a.lhad", True),
            lio.ManifestEntry("b", "dumps/b.lhad", False),
        ]
        path = tmp_path / "manifest.json"
        lio.write_manifest(entries, path)
        assert lio.read_manifest(path) == entries

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "manifest.json"
        lio.write_manifest(
            [lio.ManifestEntry("a", "x"), lio.ManifestEntry("a", "y")], path
        )
        with pytest.raises(lio.ManifestError, match="duplicate"):
            lio.read_manifest(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{nope")
        with pytest.raises(lio.ManifestError, match="JSON"):
            lio.read_manifest(path)

    def test_missing_samples_field(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{}")
        with pytest.raises(lio.ManifestError, match="samples"):
            lio.read_manifest(path)

    def test_iter_corpus_order_and_content(self, tmp_path):
        rng = np.random.default_rng(5)
        ids = ["c", "a", "b"]
        entries = []
        for sid in ids:
            dump = random_dump(rng, sample_id=sid)
            lio.write_dump(dump, tmp_path / f"{sid}.lhad")
            entries.append(lio.ManifestEntry(sid, f"{sid}.lhad"))
        manifest = tmp_path / "manifest.json"
        lio.write_manifest(entries, manifest)
        assert [d.sample_id for d in lio.iter_corpus(manifest)] == ids

    def test_iter_corpus_id_mismatch(self, tmp_path):
        rng = np.random.default_rng(6)
        dump = random_dump(rng, sample_id="real")
        lio.write_dump(dump, tmp_path / "d.lhad")
        manifest = tmp_path / "manifest.json"
        lio.write_manifest([lio.ManifestEntry("claimed", "d.lhad")], manifest)
        with pytest.raises(lio.ManifestError, match="'real'.*'claimed'"):
            list(lio.iter_corpus(manifest))

    def test_iter_corpus_strict_propagates(self, tmp_path):
        rng = np.random.default_rng(7)
        dump = random_dump(rng, sample_id="bad")
        dump.maps[0, 0, 0, 0] = -1.0
        lio.write_dump(dump, tmp_path / "bad.lhad")
        manifest = tmp_path / "manifest.json"
        lio.write_manifest([lio.ManifestEntry("bad", "bad.lhad")], manifest)
        list(lio.iter_corpus(manifest))  # lenient is fine
        with pytest.raises(lio.DumpValidationError):
            list(lio.iter_corpus(manifest, strict=True))


class TestRLE:
    def test_decode_hand_example(self):
        # 2x2 mask, runs [1,1,1,1]: bg, fg, bg, fg -> right column set.
        mask = lio.rle_decode([1, 1, 1, 1], 2, 2)
        assert mask.bits.reshape(-1).tolist() == [False, True, False, True]

    def test_encode_starts_with_background_run(self):
        assert lio.rle_encode(np.array([[True, True], [True, True]])) == [0, 4]
        assert lio.rle_encode(np.array([[False, False]])) == [2]
        assert lio.rle_encode(np.array([[False, True, False]])) == [1, 1, 1]

    def test_round_trip_random(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            bits = rng.random((h, w)) < rng.uniform(0.05, 0.95)
            runs = lio.rle_encode(bits)
            back = lio.rle_decode(runs, w, h)
            assert np.array_equal(back.bits, bits)
            # Alternation invariant: only the leading run may be zero.
            assert all(r > 0 for r in runs[1:])
            assert sum(runs) == w * h

    def test_sum_mismatch(self):
        with pytest.raises(lio.AnnotationError, match="sum to 3, expected 4"):
            lio.rle_decode([1, 1, 1], 2, 2)

    def test_negative_run(self):
        with pytest.raises(lio.AnnotationError, match="negative"):
            lio.rle_decode([5, -1], 2, 2)


class TestAnnotations:
    def _annotations(self):
        mask_bits = np.zeros((8, 10), dtype=bool)
        mask_bits[2:5, 3:7] = True
        return [
            SampleAnnotation(
                sample_id="a",
                image_width=10,
                image_height=8,
                text="the box",
                gt_bbox=BBox(3, 2, 7, 5),
                gt_mask=BinaryMask.from_bits(mask_bits),
            ),
            SampleAnnotation(
                sample_id="b",
                image_width=10,
                image_height=8,
                text="no mask here",
                gt_bbox=BBox(0, 0, 10, 8),
                gt_mask=None,
            ),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "ann.json"
        anns = self._annotations()
        lio.write_annotations(anns, path)
        back = lio.read_annotations(path)
        assert len(back) == 2
        assert back[0].sample_id == "a"
        assert back[0].gt_bbox == anns[0].gt_bbox
        assert np.array_equal(back[0].gt_mask.bits, anns[0].gt_mask.bits)
        assert back[1].gt_mask is None
        assert back[1].text == "no mask here"

    def test_bbox_out_of_bounds(self, tmp_path):
        path = tmp_path / "ann.json"
        rows = [{
            "sample_id": "a", "image_width": 10, "image_height": 8,
            "text": "t", "gt_bbox": [3, 2, 11, 5],
        }]
        path.write_text(json.dumps(rows))
        with pytest.raises(lio.AnnotationError, match="out of bounds"):
            lio.read_annotations(path)

    def test_duplicate_sample_id(self, tmp_path):
        path = tmp_path / "ann.json"
        row = {
            "sample_id": "a", "image_width": 10, "image_height": 8,
            "text": "t", "gt_bbox": [0, 0, 2, 2],
        }
        path.write_text(json.dumps([row, row]))
        with pytest.raises(lio.AnnotationError, match="duplicate"):
            lio.read_annotations(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "ann.json"
        path.write_text(json.dumps([{"sample_id": "a"}]))
        with pytest.raises(lio.AnnotationError, match="#0"):
            lio.read_annotations(path)

    def test_rle_sum_validated(self, tmp_path):
        path = tmp_path / "ann.json"
        rows = [{
            "sample_id": "a", "image_width": 2, "image_height": 2,
            "text": "t", "gt_bbox": [0, 0, 2, 2], "gt_mask_rle": [1, 1, 1],
        }]
        path.write_text(json.dumps(rows))
        with pytest.raises(lio.AnnotationError, match="sum"):
            lio.read_annotations(path)

    def test_fixture_masks_round_trip_bitwise(self, disk_corpus):
        from locheads import fixtures

        spec, _, annotations_path = disk_corpus
        back = {a.sample_id: a for a in lio.read_annotations(annotations_path)}
        for _, ann in fixtures.iter_samples(spec):
            stored = back[ann.sample_id]
            assert stored.gt_bbox == ann.gt_bbox
            assert np.array_equal(stored.gt_mask.bits, ann.gt_mask.bits)


class TestReport:
    def _report(self):
        heads = [HeadId(14, 2), HeadId(14, 3), HeadId(15, 0)]
        return SelectionReport(
            grid_size=16,
            num_layers=32,
            num_heads=4,
            tau_used=0.34000000653322787,
            frequency={h: 1.0 / (i + 3) for i, h in enumerate(heads)},
            frequency_std={h: 0.01 * i for i, h in enumerate(heads)},
            ranks=heads,
            top_k_heads=heads[:2],
            config={"top_k": 2, "criteria": "both"},
        )

    def test_round_trip_is_float64_exact(self, tmp_path):
        path = tmp_path / "report.json"
        report = self._report()
        lio.write_report(report, path)
        back = lio.read_report(path)
        assert back.tau_used == report.tau_used
        assert back.frequency == report.frequency
        assert back.frequency_std == report.frequency_std
        assert back.ranks == report.ranks
        assert back.top_k_heads == report.top_k_heads
        assert back.config == report.config
        assert (back.grid_size, back.num_layers, back.num_heads) == (16, 32, 4)

    def test_awkward_floats_survive(self, tmp_path):
        report = self._report()
        report.frequency[HeadId(14, 2)] = 0.1 + 0.2  # 0.30000000000000004
        report.frequency_std[HeadId(14, 2)] = 2.0 ** -52
        path = tmp_path / "report.json"
        lio.write_report(report, path)
        back = lio.read_report(path)
        assert back.frequency[HeadId(14, 2)] == 0.1 + 0.2
        assert back.frequency_std[HeadId(14, 2)] == 2.0 ** -52

    def test_head_beyond_geometry_rejected(self, tmp_path):
        report = self._report()
        report.ranks = [HeadId(32, 0)]  # num_layers is 32, so max is 31
        path = tmp_path / "report.json"
        lio.write_report(report, path)
        with pytest.raises(lio.ReportError, match="L32 H0"):
            lio.read_report(path)

    def test_malformed_report(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text("{\"grid_size\": 16}")
        with pytest.raises(lio.ReportError, match="malformed"):
            lio.read_report(path)
        path.write_text("not json")
        with pytest.raises(lio.ReportError, match="JSON"):
            lio.read_report(path)


class TestResults:
    def _records(self):
        grid_bits = np.zeros((4, 4), dtype=bool)
        grid_bits[1:3, 1:3] = True
        pixel_bits = np.zeros((8, 8), dtype=bool)
        pixel_bits[2:6, 2:6] = True
        return [
            lio.ResultRecord(
                sample_id="s1",
                grid_size=4,
                image_width=8,
                image_height=8,
                bbox_grid=BBox(1, 1, 3, 3),
                bbox_pixels=BBox(2, 2, 6, 6),
                pseudo_mask_grid=BinaryMask.from_bits(grid_bits),
                pseudo_mask_pixels=BinaryMask.from_bits(pixel_bits),
            )
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "results.jsonl"
        records = self._records()
        lio.write_results(records, path)
        back = lio.read_results(path)
        assert len(back) == 1
        r = back[0]
        assert r.sample_id == "s1"
        assert r.bbox_grid == records[0].bbox_grid
        assert r.bbox_pixels == records[0].bbox_pixels
        assert np.array_equal(
            r.pseudo_mask_grid.bits, records[0].pseudo_mask_grid.bits
        )
        assert np.array_equal(
            r.pseudo_mask_pixels.bits, records[0].pseudo_mask_pixels.bits
        )

    def test_sorted_by_sample_id(self, tmp_path):
        a = self._records()[0]
        b = self._records()[0]
        b.sample_id = "s0"
        path = tmp_path / "results.jsonl"
        lio.write_results([a, b], path)
        assert [r.sample_id for r in lio.read_results(path)] == ["s0", "s1"]

    def test_bad_line_reports_line_number(self, tmp_path):
        path = tmp_path / "results.jsonl"
        lio.write_results(self._records(), path)
        path.write_text(path.read_text() + "{\"sample_id\": \"x\"}\n")
        with pytest.raises(LocheadsError, match="line 2"):
            lio.read_results(path)


class TestEvalSummaryIO:
    def test_round_trip(self, tmp_path):
        from locheads.metrics import EvalSummary, SampleEval

        summary = EvalSummary(
            num_samples=2,
            acc_at_05=0.5,
            mean_box_iou=0.1 + 0.2,
            ciou=1.0 / 3.0,
            per_sample=[
                SampleEval("a", 0.6, 10, 20),
                SampleEval("b", 1.0 / 7.0, 0, 10),
            ],
        )
        path = tmp_path / "eval.json"
        lio.write_eval_summary(summary, path)
        back = lio.read_eval_summary(path)
        assert back == summary


class TestPPM:
    def test_header_and_payload(self, tmp_path):
        rgb = np.zeros((2, 3, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 0, 0)
        path = tmp_path / "img.ppm"
        lio.write_ppm(path, rgb)
        data = path.read_bytes()
        assert data.startswith(b"P6\n3 2\n255\n")
        assert data[len(b"P6\n3 2\n255\n"):] == rgb.tobytes()

    def test_rejects_non_rgb(self, tmp_path):
        with pytest.raises(LocheadsError, match="HxWx3"):
            lio.write_ppm(tmp_path / "x.ppm", np.zeros((4, 4), dtype=np.uint8))


class TestWriteJson:
    def test_stable_bytes_and_trailing_newline(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        obj = {"z": 1, "a": [1.5, 2.25], "m": {"k": True}}
        lio.write_json(obj, a)
        lio.write_json({"m": {"k": True}, "a": [1.5, 2.25], "z": 1}, b)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().endswith("\n")
