"""Video discovery and decoding.

A "video" is any file cv2 can decode (avi/mp4/mov/mkv/webm) or a ``.npy``
array of shape (T, H, W, C) in [0, 1] floats or uint8. Decoded clips are
float32 RGB in [0, 1].
"""

from __future__ import annotations

import logging
from pathlib import Path

import cv2
import numpy as np

log = logging.getLogger("safsar_exporter")

VIDEO_SUFFIXES = {".avi", ".mp4", ".mov", ".mkv", ".webm", ".npy"}


class DecodeError(Exception):
    """The file could not be decoded into frames."""


def list_class_videos(root: str | Path) -> dict[str, list[Path]]:
    """Map class-folder name to its video files, both sorted for determinism."""
    root = Path(root)
    classes: dict[str, list[Path]] = {}
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(
            f for f in folder.iterdir()
            if f.is_file() and f.suffix.lower() in VIDEO_SUFFIXES
        )
        classes[folder.name] = files
    return classes


def decode_video(path: str | Path) -> np.ndarray:
    """Decode to float32 RGB frames (T, H, W, 3) in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        try:
            arr = np.load(path)
        except Exception as exc:  # ValueError, OSError, pickle errors
            raise DecodeError(f"{path}: {exc}") from exc
        if arr.ndim != 4 or arr.shape[0] < 1:
            raise DecodeError(f"{path}: expected (T, H, W, C) array, got {arr.shape}")
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float32) / 255.0
        arr = arr.astype(np.float32)
        if arr.shape[3] == 1:
            arr = np.repeat(arr, 3, axis=3)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DecodeError(f"{path}: intensities outside [0, 1]")
        return arr

    capture = cv2.VideoCapture(str(path))
    frames = []
    try:
        while True:
            ok, frame = capture.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
    finally:
        capture.release()
    if not frames:
        raise DecodeError(f"{path}: no frames decoded")
    return np.stack(frames).astype(np.float32) / 255.0


def sample_frames(frames: np.ndarray, count: int) -> np.ndarray:
    """Uniform sampling at indices floor(j * T / count), matching the consumer."""
    total = frames.shape[0]
    idx = [j * total // count for j in range(count)]
    return frames[idx]
