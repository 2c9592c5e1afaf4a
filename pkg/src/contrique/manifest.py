"""JSONL image manifests: records, validation, and content-aware splitting.

A manifest is UTF-8 JSON Lines, one object per line with keys
``id, path, source_type, distortion_id, level, reference_id, mos, width,
height`` (absent fields are null). Records are immutable after load and safe
to share across threads.
"""

import json
import random
from dataclasses import dataclass, asdict
from pathlib import Path

SOURCE_TYPES = ("pristine", "synthetic", "ugc", "labeled")

MANIFEST_KEYS = (
    "id", "path", "source_type", "distortion_id", "level",
    "reference_id", "mos", "width", "height",
)


class ManifestError(ValueError):
    """Malformed manifest content (bad JSON, missing fields, invariants)."""


@dataclass(frozen=True)
class ImageRecord:
    """One corpus entry: pixel source plus provenance.

    ``distortion_id``/``level`` index the synthetic distortion class,
    ``reference_id`` names the pristine source a synthetic image came from,
    ``mos`` carries the subjective score for labeled records. ``split`` is an
    optional fixed-split tag for datasets that ship an author-defined split.
    """

    id: str
    path: str
    source_type: str
    distortion_id: int | None = None
    level: int | None = None
    reference_id: str | None = None
    mos: float | None = None
    width: int | None = None
    height: int | None = None
    split: str | None = None

    def validate(self) -> None:
        if self.source_type not in SOURCE_TYPES:
            raise ManifestError(
                f"record {self.id!r}: unknown source_type {self.source_type!r}"
            )
        if self.source_type == "synthetic":
            for field in ("distortion_id", "level", "reference_id"):
                if getattr(self, field) is None:
                    raise ManifestError(
                        f"record {self.id!r}: synthetic record missing {field!r}"
                    )
        if self.source_type == "pristine":
            if self.distortion_id is not None or self.level is not None:
                raise ManifestError(
                    f"record {self.id!r}: pristine record must not carry "
                    "distortion_id/level"
                )
        if self.source_type == "labeled" and self.mos is None:
            raise ManifestError(f"record {self.id!r}: labeled record missing mos")


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/val/test id sets produced by one seeded split."""

    train_ids: frozenset
    val_ids: frozenset
    test_ids: frozenset
    seed: int
    split_index: int = 0

    def partition_of(self, record_id: str) -> str:
        if record_id in self.train_ids:
            return "train"
        if record_id in self.val_ids:
            return "val"
        if record_id in self.test_ids:
            return "test"
        raise KeyError(record_id)


def _record_from_obj(obj: dict, lineno: int) -> ImageRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    for key in ("id", "path", "source_type"):
        if obj.get(key) is None:
            raise ManifestError(f"line {lineno}: missing required field {key!r}")
    known = set(MANIFEST_KEYS) | {"split"}
    unknown = set(obj) - known
    if unknown:
        raise ManifestError(f"line {lineno}: unknown fields {sorted(unknown)}")
    try:
        rec = ImageRecord(**obj)
        rec.validate()
    except ManifestError as e:
        raise ManifestError(f"line {lineno}: {e}") from None
    except TypeError as e:
        raise ManifestError(f"line {lineno}: {e}") from None
    return rec


def load_manifest(path) -> list[ImageRecord]:
    """Parse and validate a JSONL manifest; errors name the offending line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"line {lineno}: invalid JSON ({e.msg})") from None
            rec = _record_from_obj(obj, lineno)
            if rec.id in seen:
                raise ManifestError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def write_manifest(records, path) -> Path:
    """Write records as JSONL (LF endings); round-trips with load_manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            obj = asdict(rec)
            if obj.get("split") is None:
                obj.pop("split")
            f.write(json.dumps(obj, sort_keys=False) + "\n")
    return path


def split_ids(ids, ratios=(0.7, 0.1, 0.2), seed: int = 0, group_of=None,
              split_index: int = 0) -> SplitAssignment:
    """Deterministic train/val/test partition of bare ids.

    ``group_of`` maps an id to its content group (ids sharing a group land in
    the same partition); identity grouping when absent. Groups are sorted,
    shuffled with the seed, then assigned greedily: train until its ratio
    target is met, then val, then test. Pure function of
    (id set, ratios, seed, grouping).
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be 3 non-negative reals, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios} (sum {sum(ratios)})")

    groups: dict[str, list[str]] = {}
    for i in ids:
        key = group_of(i) if group_of is not None else i
        groups.setdefault(str(key), []).append(i)

    # Lexicographic pre-sort makes the shuffle independent of input order;
    # ties inside a group likewise resolve lexicographically.
    keys = sorted(groups)
    for k in keys:
        groups[k].sort()
    rng = random.Random(seed)
    rng.shuffle(keys)

    n = sum(len(groups[k]) for k in keys)
    target_train = round(n * ratios[0])
    target_val = round(n * (ratios[0] + ratios[1])) - target_train

    train, val, test = [], [], []
    for k in keys:
        if len(train) < target_train:
            train.extend(groups[k])
        elif len(val) < target_val:
            val.extend(groups[k])
        else:
            test.extend(groups[k])
    return SplitAssignment(
        train_ids=frozenset(train),
        val_ids=frozenset(val),
        test_ids=frozenset(test),
        seed=seed,
        split_index=split_index,
    )


def split_dataset(records, ratios=(0.7, 0.1, 0.2), seed: int = 0,
                  by_content: bool = False, split_index: int = 0) -> SplitAssignment:
    """Partition records, keeping same-reference content together on request."""
    if by_content:
        missing = [r.id for r in records if r.reference_id is None]
        if missing:
            raise ValueError(
                f"by_content split requires reference_id on every record; "
                f"missing on {missing[0]!r}"
                + (f" and {len(missing) - 1} more" if len(missing) > 1 else "")
            )
        ref = {r.id: r.reference_id for r in records}
        group_of = ref.__getitem__
    else:
        group_of = None
    return split_ids([r.id for r in records], ratios=ratios, seed=seed,
                     group_of=group_of, split_index=split_index)
