"""The export job: walk per-class video folders, extract features, and write
a cache directory in the safsar wire format (see docs/cache_format.md in the
consumer repository; the layout is reproduced here byte for byte).
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbones import make_text_backbone, make_video_backbone
from .videos import DecodeError, decode_video, list_class_videos, sample_frames

log = logging.getLogger("safsar_exporter")

MAGIC = b"SFSR"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQ")
BLOB_FILE = "features.bin"
MANIFEST_FILE = "manifest.json"


class ExportError(Exception):
    """The job cannot proceed (missing description, dimension clash, ...)."""


@dataclass
class ExportJob:
    video_root: Path
    descriptions: dict[str, str]  # class folder name -> sentence
    out_dir: Path
    video_backbone: str = "toy"
    text_backbone: str = "toy"
    frames: int = 8
    dim: int = 64  # toy backbones only; pretrained ones fix their own width
    seed: int = 0
    split_map: dict[str, str] = field(default_factory=dict)
    default_split: str = "test"
    with_text: bool = True

    def split_of(self, class_name: str) -> str:
        return self.split_map.get(class_name, self.default_split)


@dataclass
class ExportResult:
    blob_path: Path
    manifest_path: Path
    exported: int
    skipped: list[str]
    dim: int


def plan_manifest(job: ExportJob) -> dict:
    """The class/item layout the job would produce, without decoding anything."""
    classes = list_class_videos(job.video_root)
    if not classes:
        raise ExportError(f"{job.video_root} contains no class folders")
    empty = [name for name, files in classes.items() if not files]
    if empty:
        raise ExportError(f"class folders without videos: {empty}")
    missing = [name for name in classes if name not in job.descriptions]
    if missing:
        raise ExportError(f"classes without descriptions: {missing}")
    return {
        "classes": [
            {
                "class_id": cid,
                "name": name,
                "split": job.split_of(name),
                "videos": len(classes[name]),
                "description": job.descriptions[name],
            }
            for cid, name in enumerate(sorted(classes))
        ],
        "frames": job.frames,
        "video_backbone": job.video_backbone,
        "text_backbone": job.text_backbone if job.with_text else None,
    }


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _write_cache_files(
    out_dir: Path,
    dim: int,
    video_rows: list[tuple[int, int, np.ndarray]],  # (item id, class id, vector)
    text_rows: dict[int, np.ndarray],  # class id -> (L, d)
    class_table: dict[int, tuple[str, str]],  # class id -> (description, split)
) -> tuple[Path, Path]:
    """Independent implementation of the consumer's cache wire format."""
    rows: list[np.ndarray] = []
    items = []
    for item_id, class_id, vector in video_rows:
        items.append({"id": item_id, "class_id": class_id, "row": len(rows)})
        rows.append(np.asarray(vector, dtype="<f4"))
    classes = []
    for class_id in sorted(class_table):
        description, split = class_table[class_id]
        entry = {
            "class_id": class_id,
            "description": description,
            "split": split,
            "text_row_start": None,
            "text_row_count": 0,
        }
        if class_id in text_rows:
            matrix = np.asarray(text_rows[class_id], dtype="<f4")
            entry["text_row_start"] = len(rows)
            entry["text_row_count"] = int(matrix.shape[0])
            rows.extend(matrix)
        classes.append(entry)

    payload = np.concatenate(rows).astype("<f4") if rows else np.empty(0, dtype="<f4")
    out_dir.mkdir(parents=True, exist_ok=True)
    blob_path = out_dir / BLOB_FILE
    _atomic_write(blob_path, HEADER.pack(MAGIC, FORMAT_VERSION, dim, len(rows))
                  + payload.tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "dim": dim,
        "items": items,
        "classes": classes,
    }
    manifest_path = out_dir / MANIFEST_FILE
    _atomic_write(manifest_path,
                  (json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")
                  .encode("utf-8"))
    return blob_path, manifest_path


def export_video_features(
    job: ExportJob, video_model, class_ids: dict[str, int]
) -> tuple[list[tuple[int, int, np.ndarray]], list[str]]:
    """One feature vector per decodable video; undecodable files are skipped
    with a logged id. Item ids follow (class, filename) sort order."""
    dim = video_model.dim
    videos = list_class_videos(job.video_root)
    rows: list[tuple[int, int, np.ndarray]] = []
    skipped: list[str] = []
    item_id = 0
    for name in sorted(class_ids, key=class_ids.get):
        for path in videos[name]:
            try:
                frames = sample_frames(decode_video(path), job.frames)
            except DecodeError as exc:
                log.warning("skipping undecodable video %s (%s)", path, exc)
                skipped.append(str(path))
                continue
            vector = video_model.encode(frames)
            if vector.shape != (dim,):
                raise ExportError(
                    f"{path}: backbone returned shape {vector.shape}, expected ({dim},)"
                )
            rows.append((item_id, class_ids[name], vector))
            item_id += 1
    return rows, skipped


def export_text_features(
    job: ExportJob, text_model, class_ids: dict[str, int]
) -> dict[int, np.ndarray]:
    """One (L, d) token matrix per class from the frozen text backbone."""
    missing = [name for name in class_ids if name not in job.descriptions]
    if missing:
        raise ExportError(f"classes without descriptions: {sorted(missing)}")
    out: dict[int, np.ndarray] = {}
    for name, cid in class_ids.items():
        matrix = text_model.encode(job.descriptions[name])
        if not np.all(np.isfinite(matrix)):
            raise ExportError(f"text features for class {name!r} are not finite")
        out[cid] = matrix
    return out


def run_export(job: ExportJob) -> ExportResult:
    """Decode, extract, and write; returns paths and the skipped-video list."""
    plan = plan_manifest(job)  # validates folders and descriptions
    class_names = [c["name"] for c in plan["classes"]]
    class_ids = {name: cid for cid, name in enumerate(class_names)}

    video_model = make_video_backbone(job.video_backbone, dim=job.dim, seed=job.seed)
    text_model = make_text_backbone(job.text_backbone, dim=job.dim) if job.with_text else None
    if text_model is not None and text_model.dim != video_model.dim:
        raise ExportError(
            f"video backbone emits d={video_model.dim} but text backbone emits "
            f"d={text_model.dim}; the cache holds a single feature dimension"
        )
    dim = video_model.dim

    video_rows, skipped = export_video_features(job, video_model, class_ids)
    text_rows = (
        export_text_features(job, text_model, class_ids) if text_model is not None else {}
    )

    class_table = {
        class_ids[name]: (job.descriptions[name], job.split_of(name))
        for name in class_names
    }
    blob_path, manifest_path = _write_cache_files(
        Path(job.out_dir), dim, video_rows, text_rows, class_table
    )
    return ExportResult(
        blob_path=blob_path,
        manifest_path=manifest_path,
        exported=len(video_rows),
        skipped=skipped,
        dim=dim,
    )


def load_descriptions(path: str | Path) -> dict[str, str]:
    """Class descriptions as a JSON object mapping folder name to sentence."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in obj.items()
    ):
        raise ExportError(f"{path} must be a JSON object of class -> sentence")
    return obj


def load_split_map(path: str | Path | None) -> dict[str, str]:
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    bad = {k: v for k, v in obj.items() if v not in ("train", "val", "test")}
    if bad:
        raise ExportError(f"split map entries must be train/val/test, got {bad}")
    return obj
