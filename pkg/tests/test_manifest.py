"""Manifest parsing, invariants, and deterministic content-aware splitting."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from contrique.manifest import (ImageRecord, ManifestError, load_manifest,
                                split_dataset, split_ids, write_manifest)


def _write_lines(path, objs):
    with open(path, "w", encoding="utf-8") as f:
        for obj in objs:
            f.write(json.dumps(obj) + "\n")


PRISTINE = {"id": "p1", "path": "a.png", "source_type": "pristine",
            "distortion_id": None, "level": None, "reference_id": None,
            "mos": None, "width": 64, "height": 48}
SYNTH = {"id": "s1", "path": "b.png", "source_type": "synthetic",
         "distortion_id": 2, "level": 3, "reference_id": "p1",
         "mos": None, "width": 64, "height": 48}
UGC = {"id": "u1", "path": "c.png", "source_type": "ugc",
       "distortion_id": None, "level": None, "reference_id": None,
       "mos": None, "width": 64, "height": 48}


class TestLoadManifest:
    def test_three_record_manifest(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_lines(path, [PRISTINE, SYNTH, UGC])
        records = load_manifest(path)
        assert [r.id for r in records] == ["p1", "s1", "u1"]
        assert records[0].source_type == "pristine"
        assert records[1].distortion_id == 2 and records[1].level == 3
        assert records[1].reference_id == "p1"
        assert records[2].source_type == "ugc"

    def test_empty_file_is_valid(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_manifest(path) == []

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope.jsonl")

    def test_synthetic_missing_level_names_field_and_line(self, tmp_path):
        bad = dict(SYNTH, level=None)
        path = tmp_path / "m.jsonl"
        _write_lines(path, [PRISTINE, bad])
        with pytest.raises(ManifestError, match=r"line 2.*level"):
            load_manifest(path)

    def test_pristine_with_level_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_lines(path, [dict(PRISTINE, level=1)])
        with pytest.raises(ManifestError, match="pristine"):
            load_manifest(path)

    def test_labeled_requires_mos(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_lines(path, [{"id": "l1", "path": "d.png", "source_type": "labeled"}])
        with pytest.raises(ManifestError, match="mos"):
            load_manifest(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_lines(path, [PRISTINE, PRISTINE])
        with pytest.raises(ManifestError, match=r"line 2.*duplicate"):
            load_manifest(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(PRISTINE) + "\n{ not json\n")
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(path)

    def test_round_trip_field_for_field(self, tmp_path):
        path = tmp_path / "m.jsonl"
        _write_lines(path, [PRISTINE, SYNTH, UGC])
        records = load_manifest(path)
        out = tmp_path / "out.jsonl"
        write_manifest(records, out)
        assert load_manifest(out) == records


class TestSplitDataset:
    def _records(self, n, refs=None):
        return [
            ImageRecord(id=f"r{i:03d}", path=f"{i}.png", source_type="synthetic",
                        distortion_id=1, level=1,
                        reference_id=refs[i] if refs else f"ref{i}")
            for i in range(n)
        ]

    def test_ratio_sizes_and_reproducibility(self):
        records = self._records(10)
        a = split_dataset(records, (0.7, 0.1, 0.2), seed=7)
        b = split_dataset(records, (0.7, 0.1, 0.2), seed=7)
        assert (len(a.train_ids), len(a.val_ids), len(a.test_ids)) == (7, 1, 2)
        assert a == b

    def test_input_order_irrelevant(self):
        records = self._records(20)
        a = split_dataset(records, seed=3)
        b = split_dataset(list(reversed(records)), seed=3)
        assert a == b

    def test_content_groups_stay_together(self):
        refs = {i: f"content{i % 10}" for i in range(30)}
        records = self._records(30, refs)
        split = split_dataset(records, seed=11, by_content=True)
        for ref in set(refs.values()):
            members = [r.id for r in records if r.reference_id == ref]
            partitions = {split.partition_of(m) for m in members}
            assert len(partitions) == 1

    def test_distinct_seeds_give_distinct_assignments(self):
        records = self._records(12)
        seen = {split_dataset(records, seed=s).train_ids for s in range(1, 11)}
        assert len(seen) == 10

    def test_bad_ratios(self):
        with pytest.raises(ValueError, match="sum to 1"):
            split_dataset(self._records(5), ratios=(0.5, 0.2, 0.2))

    def test_by_content_requires_reference(self):
        records = [ImageRecord(id="x", path="x.png", source_type="pristine")]
        with pytest.raises(ValueError, match="reference_id"):
            split_dataset(records, by_content=True)

    @given(n=st.integers(3, 60), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_partition_is_disjoint_and_complete(self, n, seed):
        ids = [f"i{k}" for k in range(n)]
        split = split_ids(ids, seed=seed)
        all_ids = set(split.train_ids) | set(split.val_ids) | set(split.test_ids)
        assert all_ids == set(ids)
        assert len(split.train_ids) + len(split.val_ids) + len(split.test_ids) == n
