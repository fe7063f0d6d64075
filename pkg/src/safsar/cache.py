"""Bit-exact on-disk format for precomputed video features and optional
per-class text-token features.

A cache is a directory holding exactly two files:

``features.bin``
    20-byte header -- magic ``SFSR``, format version (u32 LE), feature
    dimension d (u32 LE), record count (u64 LE) -- followed by
    ``count * d`` little-endian float32 values. Video feature records come
    first, then the text-token rows of each class that has them.

``manifest.json``
    Item table (item id -> class id, record row), class table (class id ->
    description, split tag, optional text row range), format version, and d.

Rows index records: record r occupies bytes ``20 + r*d*4`` onward. The files
are immutable once written; the writer goes through a temp file and rename.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    CacheCorruptionError,
    CacheError,
    CacheVersionError,
    ContractError,
    NotACacheError,
)

MAGIC = b"SFSR"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, record count
BLOB_FILE = "features.bin"
MANIFEST_FILE = "manifest.json"


@dataclass
class CacheClass:
    description: str
    split: str
    text_row_start: int | None = None
    text_row_count: int = 0


@dataclass
class CacheItem:
    class_id: int
    row: int


@dataclass
class CacheManifest:
    format_version: int
    dim: int
    items: dict[int, CacheItem]
    classes: dict[int, CacheClass]

    def to_json_obj(self) -> dict:
        return {
            "format_version": self.format_version,
            "dim": self.dim,
            "items": [
                {"id": i, "class_id": it.class_id, "row": it.row}
                for i, it in sorted(self.items.items())
            ],
            "classes": [
                {
                    "class_id": c,
                    "description": cl.description,
                    "split": cl.split,
                    "text_row_start": cl.text_row_start,
                    "text_row_count": cl.text_row_count,
                }
                for c, cl in sorted(self.classes.items())
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CacheManifest":
        try:
            items: dict[int, CacheItem] = {}
            for rec in obj["items"]:
                item_id = int(rec["id"])
                if item_id in items:
                    raise CacheCorruptionError(f"duplicate item id {item_id} in manifest")
                items[item_id] = CacheItem(class_id=int(rec["class_id"]), row=int(rec["row"]))
            classes: dict[int, CacheClass] = {}
            class_splits: dict[int, set[str]] = {}
            for rec in obj["classes"]:
                cid = int(rec["class_id"])
                class_splits.setdefault(cid, set()).add(rec["split"])
                if len(class_splits[cid]) > 1:
                    raise CacheCorruptionError(
                        f"class {cid} assigned to splits {sorted(class_splits[cid])}: "
                        "split tags must partition classes"
                    )
                if cid in classes:
                    raise CacheCorruptionError(f"duplicate class id {cid} in manifest")
                classes[cid] = CacheClass(
                    description=rec["description"],
                    split=rec["split"],
                    text_row_start=(
                        None if rec["text_row_start"] is None else int(rec["text_row_start"])
                    ),
                    text_row_count=int(rec["text_row_count"]),
                )
            return cls(
                format_version=int(obj["format_version"]),
                dim=int(obj["dim"]),
                items=items,
                classes=classes,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise NotACacheError(f"manifest is malformed: {exc}") from exc


@dataclass
class CacheData:
    manifest: CacheManifest
    features: dict[int, np.ndarray]
    text_features: dict[int, np.ndarray]


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def write_cache(
    features: Mapping[int, np.ndarray],
    text_features: Mapping[int, np.ndarray] | None,
    classes: Mapping[int, tuple[str, str]],
    item_classes: Mapping[int, int],
    path: str | Path,
) -> dict[str, str]:
    """Write a cache directory; byte-identical output for identical inputs.

    ``classes`` maps class id to (description, split tag); ``item_classes``
    maps item id to class id. Text features, when given, are (L, d) matrices
    keyed by class id.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    text_features = dict(text_features or {})

    dims = {np.asarray(v).shape for v in features.values()}
    if len(dims) > 1 or (dims and len(next(iter(dims))) != 1):
        raise ContractError(f"video features must share one (d,) shape, got {dims}")
    if not features and not text_features:
        dim = 0
    elif features:
        dim = next(iter(dims))[0]
    else:
        dim = np.asarray(next(iter(text_features.values()))).shape[1]
    for cid, mat in text_features.items():
        arr = np.asarray(mat)
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ContractError(
                f"text features of class {cid} have shape {arr.shape}, want (L, {dim})"
            )
    for item_id, cid in item_classes.items():
        if cid not in classes:
            raise ContractError(f"item {item_id} references unknown class {cid}")
    missing = sorted(set(item_classes) - set(features))
    if missing:
        raise ContractError(f"items without features: {missing}")

    rows: list[np.ndarray] = []
    items: dict[int, CacheItem] = {}
    for item_id in sorted(features):
        items[item_id] = CacheItem(class_id=item_classes[item_id], row=len(rows))
        rows.append(np.asarray(features[item_id], dtype="<f4"))
    manifest_classes: dict[int, CacheClass] = {}
    for cid in sorted(classes):
        description, split = classes[cid]
        entry = CacheClass(description=description, split=split)
        if cid in text_features:
            mat = np.asarray(text_features[cid], dtype="<f4")
            entry.text_row_start = len(rows)
            entry.text_row_count = mat.shape[0]
            rows.extend(mat)
        manifest_classes[cid] = entry

    payload = np.concatenate(rows).astype("<f4") if rows else np.empty(0, dtype="<f4")
    header = HEADER.pack(MAGIC, FORMAT_VERSION, dim, len(rows))
    _atomic_write(out / BLOB_FILE, header + payload.tobytes())

    manifest = CacheManifest(
        format_version=FORMAT_VERSION, dim=dim, items=items, classes=manifest_classes
    )
    text = json.dumps(manifest.to_json_obj(), sort_keys=True, separators=(",", ":"))
    _atomic_write(out / MANIFEST_FILE, (text + "\n").encode("utf-8"))
    return {"blob": str(out / BLOB_FILE), "manifest": str(out / MANIFEST_FILE)}


def _read_blob(path: Path) -> tuple[int, int, np.ndarray]:
    """Validated payload of a blob file as a (count, dim) float32 array."""
    if not path.exists():
        raise NotACacheError(f"{path} does not exist")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise NotACacheError(f"{path} is shorter than the {HEADER.size}-byte header")
    magic, version, dim, count = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise NotACacheError(f"{path} has magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CacheVersionError(f"{path} has version {version}, supported: {FORMAT_VERSION}")
    expected = HEADER.size + count * dim * 4
    if len(raw) != expected:
        raise CacheCorruptionError(
            f"{path} length {len(raw)} != expected {expected} "
            f"(20 + {count} records * {dim} * 4 bytes)"
        )
    payload = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    if dim == 0:
        if count != 0:
            raise CacheCorruptionError(f"{path} declares {count} records of dim 0")
        return 0, 0, payload.reshape(0, 0)
    return count, dim, payload.reshape(count, dim)


def read_cache(path: str | Path) -> CacheData:
    """Load and fully validate a cache directory."""
    src = Path(path)
    count, dim, records = _read_blob(src / BLOB_FILE)
    manifest_path = src / MANIFEST_FILE
    if not manifest_path.exists():
        raise NotACacheError(f"{manifest_path} does not exist")
    try:
        obj = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise NotACacheError(f"manifest is not valid JSON: {exc}") from exc
    manifest = CacheManifest.from_json_obj(obj)
    if manifest.format_version != FORMAT_VERSION:
        raise CacheVersionError(
            f"manifest version {manifest.format_version}, supported: {FORMAT_VERSION}"
        )
    if manifest.dim != dim:
        raise CacheCorruptionError(f"manifest dim {manifest.dim} != blob dim {dim}")

    features: dict[int, np.ndarray] = {}
    for item_id, item in manifest.items.items():
        if not 0 <= item.row < count:
            raise CacheCorruptionError(
                f"item {item_id} row {item.row} outside [0, {count})"
            )
        if item.class_id not in manifest.classes:
            raise CacheCorruptionError(
                f"item {item_id} references unknown class {item.class_id}"
            )
        features[item_id] = records[item.row].copy()
    text_features: dict[int, np.ndarray] = {}
    for cid, cl in manifest.classes.items():
        if cl.text_row_start is None:
            continue
        stop = cl.text_row_start + cl.text_row_count
        if cl.text_row_count < 1 or cl.text_row_start < 0 or stop > count:
            raise CacheCorruptionError(
                f"class {cid} text rows [{cl.text_row_start}, {stop}) outside [0, {count})"
            )
        text_features[cid] = records[cl.text_row_start:stop].copy()
    return CacheData(manifest=manifest, features=features, text_features=text_features)


@dataclass
class CacheReport:
    """Machine-readable validation report; problems are entries, not exceptions."""

    ok: bool
    violations: list[str] = field(default_factory=list)
    header: dict = field(default_factory=dict)
    record_count: int = 0
    per_class_items: dict[int, int] = field(default_factory=dict)
    nan_items: list[int] = field(default_factory=list)
    inf_items: list[int] = field(default_factory=list)
    splits: dict[str, list[int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": self.violations,
            "header": self.header,
            "record_count": self.record_count,
            "per_class_items": {str(k): v for k, v in sorted(self.per_class_items.items())},
            "nan_items": self.nan_items,
            "inf_items": self.inf_items,
            "splits": {k: v for k, v in sorted(self.splits.items())},
        }


def validate_cache(path: str | Path) -> CacheReport:
    """Scan a cache and report header fields, counts, NaN/Inf, and split issues."""
    report = CacheReport(ok=True)
    try:
        count, dim, _ = _read_blob(Path(path) / BLOB_FILE)
        data = read_cache(path)
    except CacheError as exc:
        report.ok = False
        report.violations.append(f"{type(exc).__name__}: {exc}")
        return report

    manifest = data.manifest
    report.header = {"format_version": manifest.format_version, "dim": dim}
    report.record_count = count
    for item_id, item in sorted(manifest.items.items()):
        report.per_class_items[item.class_id] = report.per_class_items.get(item.class_id, 0) + 1
        vec = data.features[item_id]
        if np.isnan(vec).any():
            report.nan_items.append(item_id)
        if np.isinf(vec).any():
            report.inf_items.append(item_id)
    for cid, mat in sorted(data.text_features.items()):
        if np.isnan(mat).any():
            report.violations.append(f"text features of class {cid} contain NaN")
        if np.isinf(mat).any():
            report.violations.append(f"text features of class {cid} contain Inf")
    for cid, cl in sorted(manifest.classes.items()):
        report.splits.setdefault(cl.split, []).append(cid)
    if report.nan_items:
        report.violations.append(f"items with NaN features: {report.nan_items}")
    if report.inf_items:
        report.violations.append(f"items with Inf features: {report.inf_items}")
    report.ok = not report.violations
    return report


def dataset_from_cache(path: str | Path):
    """Build a feature-mode Dataset from a cache directory."""
    from .episodic import Dataset, DatasetItem  # local import to avoid a cycle

    data = read_cache(path)
    manifest = data.manifest
    descriptions = {cid: cl.description for cid, cl in manifest.classes.items()}
    splits: dict[str, set[int]] = {}
    for cid, cl in manifest.classes.items():
        splits.setdefault(cl.split, set()).add(cid)
    items = [
        DatasetItem(
            item_id=item_id,
            class_id=item.class_id,
            description=descriptions[item.class_id],
            feature=data.features[item_id],
        )
        for item_id, item in sorted(manifest.items.items())
    ]
    num_classes = max(manifest.classes) + 1 if manifest.classes else 0
    return Dataset(
        items=items,
        class_descriptions=descriptions,
        splits={k: frozenset(v) for k, v in splits.items()},
        num_classes=num_classes,
        text_features=data.text_features or None,
    )
