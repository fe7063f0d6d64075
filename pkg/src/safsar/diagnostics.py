"""Self-check scenarios: a deterministic full-pipeline loss for gradient
verification, shared by the CLI and the test suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .encoders import VideoTensor, Vocabulary, tokenize, video_encode, text_encode
from .model import (
    ModelConfig,
    forward_episode,
    loss_episode,
    loss_global,
    total_loss,
)
from .numerics import GradCheckReport, ParamStore, Tensor, grad_check
from .pipeline import Pipeline, PipelineDims, build_pipeline

_SCENARIO_WORDS = [
    "a", "blob", "drifting", "gliding", "north", "south", "east", "west",
    "slowly", "quickly", "over", "noise", ".",
]


@dataclass
class GradCheckScenario:
    """A frozen episode plus the parameter store its loss depends on."""

    pipeline: Pipeline
    loss_fn: Callable[[ParamStore], Tensor]

    @property
    def store(self) -> ParamStore:
        return self.pipeline.store


def build_gradcheck_scenario(
    dim: int = 16,
    ways: int = 3,
    shots: int = 2,
    text_len: int = 5,
    fusion_layers: int = 2,
    seed: int = 0,
    video_depth: int = 2,
    freeze_depth: int = 0,
    lambda_weight: float = 1.0,
    temperature: float = 1.0,
) -> GradCheckScenario:
    """A tiny end-to-end episode whose total loss is a pure function of params.

    Clips are fixed random data; no augmentation, so repeated evaluation is
    bit-deterministic as the finite-difference probes require.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1A6]))
    num_classes = ways * 2
    descriptions = {
        c: " ".join(rng.choice(_SCENARIO_WORDS[:-1], size=text_len - 1)) + " ."
        for c in range(num_classes)
    }
    vocab = Vocabulary.from_corpus(list(descriptions.values()))
    config = ModelConfig(
        lambda_weight=lambda_weight,
        fusion_layers=fusion_layers,
        use_fusion=True,
        use_tlm=True,
        temperature=temperature,
    )
    dims = PipelineDims(
        feature_dim=dim,
        video_depth=video_depth,
        text_depth=1,
        heads=4,
        ffn_ratio=2,
        tubelet=(2, 4, 4),
        channels=1,
    )
    pipe = build_pipeline(
        dims, num_classes=num_classes, vocab=vocab, config=config,
        seed=seed, precision="double", freeze_depth=freeze_depth,
    )

    class_ids = list(range(ways))
    clips = {}
    for c in class_ids:
        for k in range(shots):
            clips[(c, k)] = VideoTensor(rng.random((4, 8, 8, 1)))
    query_clip = VideoTensor(rng.random((4, 8, 8, 1)))
    query_class = class_ids[0]
    token_seqs = {
        c: tokenize(descriptions[c], vocab) for c in class_ids
    }

    def loss_fn(store: ParamStore) -> Tensor:
        support = [
            (c, video_encode(clips[(c, k)], pipe.video))
            for c in class_ids
            for k in range(shots)
        ]
        query = video_encode(query_clip, pipe.video)
        text = {c: text_encode(token_seqs[c], pipe.text) for c in class_ids}
        fwd = forward_episode(support, query, text, pipe.fusion, pipe.tlm, config)
        l1 = loss_episode(fwd.probs, query_class)
        l2 = loss_global(
            [(f, c) for c, f in support], (query, query_class), pipe.head
        )
        return total_loss(l1, l2, config.lambda_weight)

    return GradCheckScenario(pipeline=pipe, loss_fn=loss_fn)


def run_pipeline_gradcheck(
    dim: int = 16,
    ways: int = 3,
    shots: int = 2,
    text_len: int = 5,
    fusion_layers: int = 2,
    seed: int = 0,
    epsilon: float = 1e-5,
    max_coords_per_param: int | None = 4,
    **kwargs,
) -> GradCheckReport:
    """Gradient-check the full pipeline loss over every trainable parameter."""
    scenario = build_gradcheck_scenario(
        dim=dim, ways=ways, shots=shots, text_len=text_len,
        fusion_layers=fusion_layers, seed=seed, **kwargs,
    )
    return grad_check(
        scenario.loss_fn, scenario.store, epsilon=epsilon,
        max_coords_per_param=max_coords_per_param, seed=seed,
    )
