"""Synthetic motion dataset: each class is a bright blob moving with a
class-specific direction and speed over a noisy background.

Classes enumerate (direction, pace) pairs; descriptions are templated
sentences naming both, so text carries genuine class information that is
shared across splits (a test class reuses direction and pace words seen
in training classes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoders import VideoTensor
from .episodic import Dataset, DatasetItem
from .errors import ConfigError, DomainError

DIRECTIONS = [
    ("north", (-1.0, 0.0)),
    ("northeast", (-1.0, 1.0)),
    ("east", (0.0, 1.0)),
    ("southeast", (1.0, 1.0)),
    ("south", (1.0, 0.0)),
    ("southwest", (1.0, -1.0)),
    ("west", (0.0, -1.0)),
    ("northwest", (-1.0, -1.0)),
]

PACES = [
    ("slow", 0.5),
    ("fast", 1.25),
    ("steady", 0.85),
    ("rapid", 1.55),
]

EDGE_PAD = 2.0


@dataclass
class MotionProgram:
    """The generative recipe of one class."""

    class_id: int
    direction: str
    pace: str
    velocity: tuple[float, float]  # (dy, dx) per frame

    @property
    def description(self) -> str:
        return f"a blob moving {self.direction} at {self.pace} pace"


def motion_programs(num_classes: int) -> list[MotionProgram]:
    limit = len(DIRECTIONS) * len(PACES)
    if num_classes > limit:
        raise ConfigError(f"at most {limit} motion classes available, asked for {num_classes}")
    programs = []
    for c in range(num_classes):
        dname, (dy, dx) = DIRECTIONS[c % len(DIRECTIONS)]
        pname, speed = PACES[c // len(DIRECTIONS)]
        norm = math.hypot(dy, dx)
        programs.append(
            MotionProgram(
                class_id=c,
                direction=dname,
                pace=pname,
                velocity=(speed * dy / norm, speed * dx / norm),
            )
        )
    return programs


def _render_clip(
    program: MotionProgram,
    frames: int,
    height: int,
    width: int,
    rng: np.random.Generator,
    noise: float,
) -> np.ndarray:
    vy, vx = program.velocity
    span_y = vy * (frames - 1)
    span_x = vx * (frames - 1)
    lo_y = EDGE_PAD + max(0.0, -span_y)
    hi_y = height - 1 - EDGE_PAD - max(0.0, span_y)
    lo_x = EDGE_PAD + max(0.0, -span_x)
    hi_x = width - 1 - EDGE_PAD - max(0.0, span_x)
    if hi_y < lo_y or hi_x < lo_x:
        raise ConfigError(
            f"clip {height}x{width} too small for class {program.class_id} "
            f"moving {program.pace} over {frames} frames"
        )
    cy = rng.uniform(lo_y, hi_y)
    cx = rng.uniform(lo_x, hi_x)
    amplitude = rng.uniform(0.65, 0.9)
    sigma = rng.uniform(1.2, 1.5)
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    clip = np.empty((frames, height, width, 1), dtype=np.float32)
    for t in range(frames):
        by = cy + vy * t
        bx = cx + vx * t
        blob = amplitude * np.exp(-((ys - by) ** 2 + (xs - bx) ** 2) / (2.0 * sigma**2))
        frame = rng.uniform(0.0, noise, size=(height, width)) + blob
        clip[t, :, :, 0] = np.clip(frame, 0.0, 1.0)
    return clip


def synth_generate(
    num_classes: int,
    items_per_class: int,
    clip_shape: tuple[int, int, int] = (8, 16, 16),
    seed: int = 0,
    split_counts: tuple[int, int, int] | None = None,
    noise: float = 0.15,
) -> Dataset:
    """Generate a deterministic motion dataset with disjoint class splits.

    ``split_counts`` is (train, val, test) class counts and must sum to
    ``num_classes``; by default roughly 70/10/20 with at least one train and
    one test class.
    """
    if num_classes < 4:
        raise DomainError(f"need at least 4 classes for non-trivial splits, got {num_classes}")
    if items_per_class < 2:
        raise DomainError(f"need at least 2 items per class, got {items_per_class}")
    frames, height, width = clip_shape
    if frames < 2 or height < int(2 * EDGE_PAD + 2) or width < int(2 * EDGE_PAD + 2):
        raise ConfigError(f"degenerate clip shape {clip_shape}")

    if split_counts is None:
        n_test = max(1, round(0.2 * num_classes))
        n_val = max(0, round(0.1 * num_classes))
        split_counts = (num_classes - n_val - n_test, n_val, n_test)
    n_train, n_val, n_test = split_counts
    if n_train < 1 or n_test < 1 or n_val < 0 or n_train + n_val + n_test != num_classes:
        raise ConfigError(
            f"split counts {split_counts} must be positive train/test and sum to {num_classes}"
        )

    programs = motion_programs(num_classes)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E17]))
    # interleave split assignment so each split spans directions and paces
    order = [int(i) for i in rng.permutation(num_classes)]
    split_of: dict[int, str] = {}
    for rank, c in enumerate(order):
        if rank < n_train:
            split_of[c] = "train"
        elif rank < n_train + n_val:
            split_of[c] = "val"
        else:
            split_of[c] = "test"

    items: list[DatasetItem] = []
    for program in programs:
        for _ in range(items_per_class):
            clip = _render_clip(program, frames, height, width, rng, noise)
            items.append(
                DatasetItem(
                    item_id=len(items),
                    class_id=program.class_id,
                    description=program.description,
                    video=VideoTensor(clip),
                )
            )
    splits = {
        name: frozenset(c for c in range(num_classes) if split_of[c] == name)
        for name in ("train", "val", "test")
    }
    return Dataset(
        items=items,
        class_descriptions={p.class_id: p.description for p in programs},
        splits=splits,
        num_classes=num_classes,
    )


def displacement_statistic(video: VideoTensor) -> np.ndarray:
    """Mean frame-to-frame shift of the brightness centroid, a 2-vector (dy, dx).

    Background noise is suppressed by zeroing intensities below the frame
    mean before taking the centroid.
    """
    frames = video.frames[..., 0].astype(np.float64)
    t, h, w = frames.shape
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    centroids = np.empty((t, 2))
    for i in range(t):
        weights = np.clip(frames[i] - frames[i].mean(), 0.0, None)
        total = weights.sum()
        if total <= 0:
            centroids[i] = (0.5 * (h - 1), 0.5 * (w - 1))
        else:
            centroids[i] = ((weights * ys).sum() / total, (weights * xs).sum() / total)
    return np.diff(centroids, axis=0).mean(axis=0)


def nearest_centroid_accuracy(dataset: Dataset) -> float:
    """Classify every item by nearest class-mean displacement statistic."""
    stats = np.stack([displacement_statistic(item.video) for item in dataset.items])
    labels = np.array([item.class_id for item in dataset.items])
    classes = np.unique(labels)
    centroids = np.stack([stats[labels == c].mean(axis=0) for c in classes])
    dists = np.linalg.norm(stats[:, None, :] - centroids[None, :, :], axis=2)
    predicted = classes[np.argmin(dists, axis=1)]
    return float(np.mean(predicted == labels))
