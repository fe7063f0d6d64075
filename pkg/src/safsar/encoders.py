"""Toy video and text encoders plus the clip/text preprocessing around them.

The video encoder embeds space-time tubelets, adds fixed sinusoidal position
codes, runs an encoder stack, and mean-pools tokens into one feature vector.
The text encoder embeds word tokens the same way and keeps one output row per
token; all of its parameters are created frozen.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DomainError
from .numerics import ParamStore, Tensor, add, embedding, matmul, mean_rows
from .transformer import (
    DEFAULT_FFN_RATIO,
    DEFAULT_HEADS,
    EncoderStackParams,
    encoder_stack,
    glorot,
    init_encoder_stack,
)

UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"
UNK_ID = 0
PAD_ID = 1

DEFAULT_TUBELET = (2, 4, 4)

_WORD_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


@dataclass
class VideoTensor:
    """A raw clip: frames of shape (T, H, W, C) with intensities in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.frames)
        if arr.ndim != 4 or arr.shape[0] < 1:
            raise DomainError(f"clip must be (T, H, W, C) with T >= 1, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("clip intensities must lie in [0, 1]")
        self.frames = arr

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]


@dataclass
class TokenSequence:
    """Vocabulary indices for one description, in text order."""

    ids: list[int]

    def __post_init__(self):
        if len(self.ids) < 1:
            raise DomainError("token sequence must contain at least one token")

    def __len__(self) -> int:
        return len(self.ids)


class Vocabulary:
    """Dense token-string to id map with reserved UNK (id 0) and PAD (id 1)."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [UNK_TOKEN, PAD_TOKEN]:
            raise ContractError("vocabulary must start with the UNK and PAD tokens")
        self._tokens = list(tokens)
        self._index = {tok: i for i, tok in enumerate(tokens)}
        if len(self._index) != len(tokens):
            raise ContractError("vocabulary contains duplicate tokens")

    @classmethod
    def from_corpus(cls, texts: list[str]) -> "Vocabulary":
        """Build from a description corpus; corpus tokens get ids in sorted order."""
        seen = set()
        for text in texts:
            seen.update(split_words(text))
        return cls([UNK_TOKEN, PAD_TOKEN] + sorted(seen))

    @property
    def size(self) -> int:
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self._tokens[token_id]

    def save(self, path: str | Path) -> None:
        """One token per line; line number equals id."""
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tokens)


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace; punctuation becomes its own token."""
    return _WORD_RE.findall(text.lower())


def tokenize(description: str, vocab: Vocabulary) -> TokenSequence:
    """Map a description to vocabulary ids; unknown words map to UNK."""
    words = split_words(description)
    if not words:
        raise DomainError("description is empty after normalization")
    return TokenSequence([vocab.id_of(w) for w in words])


def sample_frames(video: VideoTensor, count: int) -> VideoTensor:
    """Uniformly pick ``count`` frames at indices floor(j * T_i / count)."""
    if count < 1:
        raise DomainError(f"frame count must be >= 1, got {count}")
    total = video.num_frames
    idx = [j * total // count for j in range(count)]
    return VideoTensor(video.frames[idx].copy())


def frame_indices(total: int, count: int) -> list[int]:
    """The index rule behind sample_frames, exposed for cross-checking."""
    if count < 1:
        raise DomainError(f"frame count must be >= 1, got {count}")
    return [j * total // count for j in range(count)]


def augment(
    video: VideoTensor,
    rng: np.random.Generator,
    crop_hw: tuple[int, int] | None = None,
    flip_prob: float = 0.5,
    jitter: tuple[float, float] = (0.8, 1.2),
) -> VideoTensor:
    """Random crop, then horizontal flip, then per-channel intensity scaling.

    Deterministic given the generator state; output intensities are clamped
    to [0, 1].
    """
    frames = video.frames
    h, w = video.spatial
    ch, cw = crop_hw if crop_hw is not None else (h, w)
    if ch > h or cw > w:
        raise ConfigError(f"crop {ch}x{cw} exceeds frame size {h}x{w}")
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    frames = frames[:, oy:oy + ch, ox:ox + cw, :]
    if rng.random() < flip_prob:
        frames = frames[:, :, ::-1, :]
    scale = rng.uniform(jitter[0], jitter[1], size=video.channels)
    frames = np.clip(frames * scale, 0.0, 1.0)
    return VideoTensor(frames.astype(video.frames.dtype))


# ---------------------------------------------------------------------------
# sinusoidal position codes
# ---------------------------------------------------------------------------


def sinusoid_table(positions: int, dim: int) -> np.ndarray:
    """Classic fixed sin/cos table of shape (positions, dim); dim must be even."""
    if dim % 2 != 0:
        raise ConfigError(f"sinusoid table needs an even dim, got {dim}")
    pos = np.arange(positions, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = pos * freq[None, :]
    table = np.zeros((positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def spacetime_position_codes(nt: int, ny: int, nx: int, dim: int) -> np.ndarray:
    """Per-token codes over a (nt, ny, nx) tubelet grid, one band per axis."""
    bt = 2 * (dim // 6)
    if bt < 2 or dim % 2 != 0:
        raise ConfigError(f"spacetime codes need an even dim >= 6, got {dim}")
    bx = dim - 2 * bt
    tab_t = sinusoid_table(nt, bt)
    tab_y = sinusoid_table(ny, bt)
    tab_x = sinusoid_table(nx, bx)
    codes = np.empty((nt, ny, nx, dim), dtype=np.float64)
    codes[..., :bt] = tab_t[:, None, None, :]
    codes[..., bt:2 * bt] = tab_y[None, :, None, :]
    codes[..., 2 * bt:] = tab_x[None, None, :, :]
    return codes.reshape(nt * ny * nx, dim)


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


@dataclass
class VideoEncoderParams:
    """Tubelet projection plus an encoder stack; features are mean-pooled tokens."""

    tubelet: tuple[int, int, int]
    channels: int
    patch_w: Tensor
    patch_b: Tensor
    stack: EncoderStackParams

    @property
    def dim(self) -> int:
        return self.patch_w.shape[1]

    @property
    def depth(self) -> int:
        return self.stack.depth


@dataclass
class TextEncoderParams:
    """Frozen token-embedding table plus a frozen encoder stack."""

    table: Tensor
    stack: EncoderStackParams

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]


def build_video_encoder(
    store: ParamStore,
    dim: int,
    depth: int,
    rng: np.random.Generator,
    tubelet: tuple[int, int, int] = DEFAULT_TUBELET,
    channels: int = 1,
    heads: int = DEFAULT_HEADS,
    ffn_ratio: int = DEFAULT_FFN_RATIO,
    dtype=np.float64,
    prefix: str = "video",
) -> VideoEncoderParams:
    tt, th, tw = tubelet
    volume = tt * th * tw * channels
    patch_w = store.add(f"{prefix}.patch_embed.w",
                        Tensor(glorot(rng, volume, dim, dtype), requires_grad=True))
    patch_b = store.add(f"{prefix}.patch_embed.b",
                        Tensor(np.zeros(dim, dtype=dtype), requires_grad=True))
    stack = init_encoder_stack(store, prefix, dim, depth, rng,
                               heads=heads, ffn_ratio=ffn_ratio, dtype=dtype)
    return VideoEncoderParams(tubelet=tubelet, channels=channels,
                              patch_w=patch_w, patch_b=patch_b, stack=stack)


def build_text_encoder(
    store: ParamStore,
    vocab_size: int,
    dim: int,
    depth: int,
    rng: np.random.Generator,
    heads: int = DEFAULT_HEADS,
    ffn_ratio: int = DEFAULT_FFN_RATIO,
    dtype=np.float64,
    prefix: str = "text",
) -> TextEncoderParams:
    """Deterministically initialized and frozen; stands in for a pretrained model."""
    table = store.add(f"{prefix}.embed.table",
                      Tensor(glorot(rng, vocab_size, dim, dtype), requires_grad=False))
    stack = init_encoder_stack(store, prefix, dim, depth, rng,
                               heads=heads, ffn_ratio=ffn_ratio, dtype=dtype,
                               trainable=False)
    return TextEncoderParams(table=table, stack=stack)


def tubelet_tokens(video: VideoTensor, tubelet: tuple[int, int, int]) -> np.ndarray:
    """Partition a clip into flattened space-time tubelets, row-major over (t, y, x)."""
    t, h, w, c = video.frames.shape
    tt, th, tw = tubelet
    if t % tt or h % th or w % tw:
        raise ConfigError(
            f"clip extents {t}x{h}x{w} not divisible by tubelet {tt}x{th}x{tw}"
        )
    nt, ny, nx = t // tt, h // th, w // tw
    grid = video.frames.reshape(nt, tt, ny, th, nx, tw, c)
    grid = grid.transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(grid.reshape(nt * ny * nx, tt * th * tw * c))


def video_encode(video: VideoTensor, params: VideoEncoderParams) -> Tensor:
    """Encode a clip into one d-dimensional feature vector."""
    tt, th, tw = params.tubelet
    if video.channels != params.channels:
        raise ConfigError(
            f"clip has {video.channels} channels, encoder expects {params.channels}"
        )
    dtype = params.patch_w.dtype
    tokens = Tensor(tubelet_tokens(video, params.tubelet).astype(dtype))
    x = add(matmul(tokens, params.patch_w), params.patch_b)
    nt = video.num_frames // tt
    ny, nx = video.spatial[0] // th, video.spatial[1] // tw
    codes = Tensor(spacetime_position_codes(nt, ny, nx, params.dim).astype(dtype))
    x = add(x, codes)
    x = encoder_stack(x, params.stack)
    return mean_rows(x)


def text_encode(tokens: TokenSequence, params: TextEncoderParams) -> Tensor:
    """Encode token ids into an (L, d) token-feature matrix."""
    for i in tokens.ids:
        if not 0 <= i < params.vocab_size:
            raise ContractError(f"token id {i} outside vocabulary of {params.vocab_size}")
    dtype = params.table.dtype
    x = embedding(params.table, tokens.ids)
    x = add(x, Tensor(sinusoid_table(len(tokens), params.dim).astype(dtype)))
    return encoder_stack(x, params.stack)
