"""Assembly of the full model: encoders, fusion stack, adaptation layer, and
global head behind one parameter store, plus persistence and freeze policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import (
    DEFAULT_TUBELET,
    TextEncoderParams,
    VideoEncoderParams,
    Vocabulary,
    build_text_encoder,
    build_video_encoder,
    text_encode,
    tokenize,
)
from .errors import ConfigError
from .model import GlobalHead, ModelConfig
from .numerics import DTYPES, ParamStore, Tensor
from .transformer import (
    EncoderLayerParams,
    EncoderStackParams,
    glorot,
    init_encoder_layer,
    init_encoder_stack,
)

PARAMS_FILE = "params.npz"
META_FILE = "pipeline.json"
VOCAB_FILE = "vocab.txt"


@dataclass
class PipelineDims:
    """Structural sizes of the toy pipeline; every piece is configurable."""

    feature_dim: int = 64
    video_depth: int = 4
    text_depth: int = 2
    heads: int = 4
    ffn_ratio: int = 4
    tubelet: tuple[int, int, int] = DEFAULT_TUBELET
    channels: int = 1

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "video_depth": self.video_depth,
            "text_depth": self.text_depth,
            "heads": self.heads,
            "ffn_ratio": self.ffn_ratio,
            "tubelet": list(self.tubelet),
            "channels": self.channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineDims":
        return cls(
            feature_dim=d["feature_dim"],
            video_depth=d["video_depth"],
            text_depth=d["text_depth"],
            heads=d["heads"],
            ffn_ratio=d["ffn_ratio"],
            tubelet=tuple(d["tubelet"]),
            channels=d["channels"],
        )


@dataclass
class Pipeline:
    """All model parameters plus the vocabulary they were built against."""

    dims: PipelineDims
    config: ModelConfig
    video: VideoEncoderParams | None
    text: TextEncoderParams
    fusion: EncoderStackParams
    tlm: EncoderLayerParams
    head: GlobalHead
    store: ParamStore
    vocab: Vocabulary
    seed: int
    precision: str = "double"
    _text_memo: dict[int, Tensor] = field(default_factory=dict, repr=False)

    @property
    def feature_dim(self) -> int:
        return self.dims.feature_dim

    def text_features_for(self, class_id: int, description: str) -> Tensor:
        """Token features of a class description, memoized (the encoder is frozen)."""
        cached = self._text_memo.get(class_id)
        if cached is None:
            cached = text_encode(tokenize(description, self.vocab), self.text)
            self._text_memo[class_id] = cached
        return cached

    def param_counts(self) -> dict[str, int]:
        counts = self.store.size_by_group()
        counts["total"] = self.store.total_size()
        return counts


def build_pipeline(
    dims: PipelineDims,
    num_classes: int,
    vocab: Vocabulary,
    config: ModelConfig,
    seed: int = 0,
    precision: str = "double",
    feature_mode: bool = False,
    freeze_depth: int = 0,
) -> Pipeline:
    """Deterministically initialize every module from one seed.

    ``feature_mode`` skips the video encoder (features come from a cache).
    ``freeze_depth`` freezes that many leading video encoder layers in
    addition to the always-frozen patch embedding and text encoder.
    """
    if precision not in DTYPES:
        raise ConfigError(f"precision must be one of {sorted(DTYPES)}, got {precision!r}")
    dtype = DTYPES[precision]
    d = dims.feature_dim
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5AF5A]))
    store = ParamStore()

    video = None
    if not feature_mode:
        video = build_video_encoder(
            store, d, dims.video_depth, rng,
            tubelet=dims.tubelet, channels=dims.channels,
            heads=dims.heads, ffn_ratio=dims.ffn_ratio, dtype=dtype,
        )
    text = build_text_encoder(
        store, vocab.size, d, dims.text_depth, rng,
        heads=dims.heads, ffn_ratio=dims.ffn_ratio, dtype=dtype,
    )
    # fusion and task adaptation start as exact identities so the full model's
    # metric path begins where the prototype baseline stands
    fusion = init_encoder_stack(
        store, "fusion", d, config.fusion_layers, rng,
        heads=dims.heads, ffn_ratio=dims.ffn_ratio, dtype=dtype,
        identity_start=True,
    )
    tlm = init_encoder_layer(
        store, "tlm", d, rng,
        heads=dims.heads, ffn_ratio=dims.ffn_ratio, dtype=dtype,
        identity_start=True,
    )
    head = GlobalHead(
        w=store.add("head.w", Tensor(glorot(rng, num_classes, d, dtype), requires_grad=True))
    )
    pipe = Pipeline(
        dims=dims, config=config, video=video, text=text, fusion=fusion,
        tlm=tlm, head=head, store=store, vocab=vocab, seed=seed,
        precision=precision,
    )
    apply_freeze_policy(pipe, freeze_depth)
    return pipe


def apply_freeze_policy(pipe: Pipeline, freeze_depth: int) -> None:
    """Freeze the patch embedding and the first ``freeze_depth`` video layers.

    The text encoder is created frozen and stays frozen regardless.
    """
    if pipe.video is None:
        if freeze_depth:
            raise ConfigError("freeze depth is meaningless without a video encoder")
        return
    if freeze_depth < 0 or freeze_depth > pipe.video.depth:
        raise ConfigError(
            f"freeze depth {freeze_depth} outside [0, {pipe.video.depth}]"
        )
    pipe.store.freeze("video.patch_embed")
    for i in range(freeze_depth):
        pipe.store.freeze(f"video.layers.{i}.")


def save_pipeline(pipe: Pipeline, out_dir: str | Path) -> dict[str, str]:
    """Write params.npz, pipeline.json, and vocab.txt into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = pipe.store.state_arrays()
    np.savez(out / PARAMS_FILE, **arrays)
    meta = {
        "dims": pipe.dims.to_dict(),
        "config": pipe.config.to_dict(),
        "num_classes": pipe.head.num_classes,
        "seed": pipe.seed,
        "precision": pipe.precision,
        "feature_mode": pipe.video is None,
        "frozen": sorted(name for name, _ in pipe.store.frozen()),
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    pipe.vocab.save(out / VOCAB_FILE)
    return {
        "params": str(out / PARAMS_FILE),
        "meta": str(out / META_FILE),
        "vocab": str(out / VOCAB_FILE),
    }


def load_pipeline(in_dir: str | Path) -> Pipeline:
    """Rebuild a pipeline from a directory written by save_pipeline."""
    src = Path(in_dir)
    meta = json.loads((src / META_FILE).read_text())
    vocab = Vocabulary.load(src / VOCAB_FILE)
    config = ModelConfig(**meta["config"])
    pipe = build_pipeline(
        PipelineDims.from_dict(meta["dims"]),
        num_classes=meta["num_classes"],
        vocab=vocab,
        config=config,
        seed=meta["seed"],
        precision=meta["precision"],
        feature_mode=meta["feature_mode"],
    )
    with np.load(src / PARAMS_FILE) as bundle:
        pipe.store.load_arrays({k: bundle[k] for k in bundle.files})
    frozen = set(meta["frozen"])
    for name, t in pipe.store.items():
        t.requires_grad = name not in frozen
    return pipe
