"""Run manifests and line-delimited artifact files (loss traces, eval
reports, embedding dumps)."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path
from typing import Iterable

from . import __version__
from .episodic import Dataset, Episode, EvalReport, TraceEntry, run_episode
from .model import EpisodeForward
from .pipeline import Pipeline

MANIFEST_NAME = "run_manifest.json"  # distinct from the cache wire manifest


def write_run_manifest(
    out_dir: str | Path,
    command: str,
    config: dict,
    seed: int,
    artifacts: dict[str, str],
    started: float,
) -> Path:
    """One manifest per run: command, resolved config, seed, timestamps, paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "started_unix": started,
        "finished_unix": time.time(),
        "artifacts": artifacts,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def write_jsonl(path: str | Path, records: Iterable[dict]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    return p


def write_loss_trace(path: str | Path, trace: list[TraceEntry]) -> Path:
    return write_jsonl(path, (entry.to_dict() for entry in trace))


def write_eval_report(path: str | Path, report: EvalReport) -> Path:
    """Summary line first, then one record per episode."""
    records = [dict(type="summary", **report.to_dict())]
    records.extend(
        {"type": "episode", "episode": e, "correct": bool(c)}
        for e, c in enumerate(report.bitmap)
    )
    return write_jsonl(path, records)


def embedding_record(episode: Episode, fwd: EpisodeForward) -> dict:
    """One dump line: prototypes, fused and adapted vectors, and the query."""
    return {
        "episode": episode.index,
        "classes": list(episode.class_ids),
        "query_class": episode.query_class,
        "prototypes": {str(c): t.data.tolist() for c, t in sorted(fwd.prototypes.items())},
        "fused": {str(c): t.data.tolist() for c, t in sorted(fwd.fused.items())},
        "adapted": {str(c): t.data.tolist() for c, t in sorted(fwd.adapted.supports.items())},
        "query_adapted": fwd.adapted.query.data.tolist(),
        "query_raw": fwd.query_raw.data.tolist(),
        "predicted": fwd.probs.predicted_class(),
    }


def dump_embeddings(
    path: str | Path,
    dataset: Dataset,
    pipe: Pipeline,
    episodes: list[Episode],
    frames: int = 8,
) -> Path:
    records = []
    for episode in episodes:
        fwd = run_episode(dataset, episode, pipe, frames=frames)
        records.append(embedding_record(episode, fwd))
    return write_jsonl(path, records)
