"""Backbone registry.

Video backbones map a sampled clip (T, H, W, 3) float32 in [0, 1] to one
d-vector; text backbones map a description sentence to an (L, d) token
matrix. The ``toy-*`` backbones are seeded deterministic stand-ins that need
no downloaded weights; ``torchvision:*`` and ``hf:*`` identifiers load real
pretrained models when their weights are available locally.
"""

from __future__ import annotations

import hashlib
import math
import re

import cv2
import numpy as np

_WORD_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


class BackboneError(Exception):
    """The requested backbone cannot be constructed."""


# ---------------------------------------------------------------------------
# toy backbones: deterministic, dependency-light
# ---------------------------------------------------------------------------


def _token_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    return rng.standard_normal(dim).astype(np.float32) / math.sqrt(dim)


def _sinusoid(positions: int, dim: int) -> np.ndarray:
    pos = np.arange(positions, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = pos * freq[None, :]
    table = np.zeros((positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table.astype(np.float32)


class ToyVideoBackbone:
    """Seeded random tubelet projection with a tanh nonlinearity.

    Not pretrained; exists so the export pipeline and its consumers can be
    exercised end to end without downloaded weights.
    """

    def __init__(self, dim: int = 64, seed: int = 0, frame_size: int = 32,
                 tubelet: tuple[int, int, int] = (2, 8, 8)):
        if dim % 2:
            raise BackboneError(f"toy video backbone needs an even dim, got {dim}")
        self.dim = dim
        self.frame_size = frame_size
        self.tubelet = tubelet
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70F]))
        volume = tubelet[0] * tubelet[1] * tubelet[2] * 3
        hidden = 4 * dim
        self._w1 = (rng.standard_normal((volume, hidden)) / math.sqrt(volume)).astype(np.float32)
        self._w2 = (rng.standard_normal((hidden, dim)) / math.sqrt(hidden)).astype(np.float32)

    def encode(self, frames: np.ndarray) -> np.ndarray:
        t, _, _, c = frames.shape
        tt, th, tw = self.tubelet
        if t % tt:
            raise BackboneError(f"clip length {t} not divisible by tubelet time {tt}")
        size = self.frame_size
        resized = np.stack([
            cv2.resize(frame, (size, size), interpolation=cv2.INTER_AREA)
            for frame in frames
        ])
        grid = resized.reshape(t // tt, tt, size // th, th, size // tw, tw, c)
        tokens = grid.transpose(0, 2, 4, 1, 3, 5, 6).reshape(-1, tt * th * tw * c)
        hidden = np.tanh(tokens @ self._w1)
        return (hidden.mean(axis=0) @ self._w2).astype(np.float32)


class ToyTextBackbone:
    """Hash-seeded token embeddings plus sinusoidal position codes; frozen by
    construction, distinct sentences give distinct stable token matrices."""

    def __init__(self, dim: int = 64):
        if dim % 2:
            raise BackboneError(f"toy text backbone needs an even dim, got {dim}")
        self.dim = dim

    def encode(self, sentence: str) -> np.ndarray:
        tokens = _WORD_RE.findall(sentence.lower())
        if not tokens:
            raise BackboneError(f"description {sentence!r} is empty after normalization")
        rows = np.stack([_token_vector(tok, self.dim) for tok in tokens])
        return (rows + _sinusoid(len(tokens), self.dim)).astype(np.float32)


# ---------------------------------------------------------------------------
# pretrained backbones (loaded lazily; require local weights)
# ---------------------------------------------------------------------------


class TorchvisionVideoBackbone:
    """A torchvision video classifier with its head removed; 512-d features."""

    def __init__(self, name: str = "r3d_18"):
        try:
            import torch
            import torchvision.models.video as video_models
        except ImportError as exc:
            raise BackboneError(f"torch/torchvision unavailable: {exc}") from exc
        try:
            weights = {
                "r3d_18": video_models.R3D_18_Weights.KINETICS400_V1,
                "mc3_18": video_models.MC3_18_Weights.KINETICS400_V1,
            }[name]
            model = getattr(video_models, name)(weights=weights)
        except KeyError as exc:
            raise BackboneError(f"unknown torchvision video model {name!r}") from exc
        except Exception as exc:  # weight download/load failure
            raise BackboneError(f"cannot load weights for {name!r}: {exc}") from exc
        self._torch = torch
        model.fc = torch.nn.Identity()
        model.eval()
        self._model = model
        self._mean = np.array(weights.meta["mean"], dtype=np.float32)
        self._std = np.array(weights.meta["std"], dtype=np.float32)
        self.dim = 512

    def encode(self, frames: np.ndarray) -> np.ndarray:
        torch = self._torch
        size = 112
        resized = np.stack([
            cv2.resize(frame, (size, size), interpolation=cv2.INTER_AREA)
            for frame in frames
        ])
        normed = (resized - self._mean) / self._std
        clip = torch.from_numpy(normed.transpose(3, 0, 1, 2)[None])  # (1, C, T, H, W)
        with torch.no_grad():
            feats = self._model(clip.float())
        return feats[0].numpy().astype(np.float32)


class HFTextBackbone:
    """A frozen Hugging Face encoder; one row per subword token."""

    def __init__(self, name: str = "bert-base-uncased"):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackboneError(f"transformers unavailable: {exc}") from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(name)
            self._model = AutoModel.from_pretrained(name)
        except Exception as exc:
            raise BackboneError(f"cannot load {name!r}: {exc}") from exc
        self._torch = torch
        self._model.eval()
        self.dim = int(self._model.config.hidden_size)

    def encode(self, sentence: str) -> np.ndarray:
        torch = self._torch
        batch = self._tokenizer(sentence, return_tensors="pt")
        with torch.no_grad():
            out = self._model(**batch)
        return out.last_hidden_state[0].numpy().astype(np.float32)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


def make_video_backbone(identifier: str, dim: int = 64, seed: int = 0):
    if identifier == "toy":
        return ToyVideoBackbone(dim=dim, seed=seed)
    if identifier.startswith("torchvision:"):
        return TorchvisionVideoBackbone(identifier.split(":", 1)[1])
    raise BackboneError(f"unknown video backbone {identifier!r} "
                        "(try 'toy' or 'torchvision:r3d_18')")


def make_text_backbone(identifier: str, dim: int = 64):
    if identifier == "toy":
        return ToyTextBackbone(dim=dim)
    if identifier.startswith("hf:"):
        return HFTextBackbone(identifier.split(":", 1)[1])
    raise BackboneError(f"unknown text backbone {identifier!r} "
                        "(try 'toy' or 'hf:bert-base-uncased')")
