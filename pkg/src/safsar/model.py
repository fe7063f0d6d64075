"""The few-shot classification core: prototypes, text-video fusion, task
adaptation across videos, cosine-softmax classification, and the two losses.

Features flow as 1-D tensors of width d. Support classes are always handled
in ascending class-id order so predictions are independent of presentation
order and ties resolve to the lowest class id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DegenerateVectorError
from .numerics import (
    Tensor,
    add,
    concat_rows,
    div,
    dot,
    log,
    matvec,
    mul,
    neg,
    pick,
    row,
    rows,
    softmax,
    sqrt,
    stack_rows,
    stack_scalars,
)
from .transformer import EncoderLayerParams, EncoderStackParams, encoder_layer, encoder_stack

MIN_NORM = 1e-12


@dataclass
class ModelConfig:
    """Runtime switches of the classification head and losses."""

    lambda_weight: float = 1.0
    fusion_layers: int = 2
    use_fusion: bool = True
    use_tlm: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if self.lambda_weight < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_weight}")
        if self.fusion_layers < 0:
            raise ConfigError(f"fusion depth must be >= 0, got {self.fusion_layers}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")

    def to_dict(self) -> dict:
        return {
            "lambda_weight": self.lambda_weight,
            "fusion_layers": self.fusion_layers,
            "use_fusion": self.use_fusion,
            "use_tlm": self.use_tlm,
            "temperature": self.temperature,
        }


@dataclass
class GlobalHead:
    """Bias-free linear layer over all training classes, used by the global loss."""

    w: Tensor

    @property
    def num_classes(self) -> int:
        return self.w.shape[0]


@dataclass
class FusedFeature:
    """Fusion output: the semantic-aware prototype plus the (unused) text rows."""

    fused: Tensor
    text_out: Tensor


@dataclass
class AdaptedFeatures:
    """Per-class support vectors and the query vector after (optional) adaptation."""

    supports: dict[int, Tensor]
    query: Tensor


@dataclass
class ClassProbabilities:
    """Probabilities over the episode classes, ascending by class id."""

    class_ids: tuple[int, ...]
    probs: Tensor

    def prob_of(self, class_id: int) -> Tensor:
        if class_id not in self.class_ids:
            raise ContractError(f"class {class_id} is not among {self.class_ids}")
        return pick(self.probs, self.class_ids.index(class_id))

    def as_dict(self) -> dict[int, float]:
        return {c: float(p) for c, p in zip(self.class_ids, self.probs.data)}

    def predicted_class(self) -> int:
        # argmax picks the first maximum, i.e. the lowest class id on ties
        return self.class_ids[int(np.argmax(self.probs.data))]


@dataclass
class EpisodeForward:
    """All per-episode intermediates, kept for inspection and embedding dumps."""

    probs: ClassProbabilities
    prototypes: dict[int, Tensor]
    fused: dict[int, Tensor]
    adapted: AdaptedFeatures
    query_raw: Tensor


def class_prototypes(
    support: Sequence[tuple[int, Tensor]],
    ways: int | None = None,
    shots: int | None = None,
) -> dict[int, Tensor]:
    """Average the support features of each class into one prototype."""
    groups: dict[int, list[Tensor]] = {}
    for class_id, feat in support:
        groups.setdefault(class_id, []).append(feat)
    counts = {len(feats) for feats in groups.values()}
    if len(counts) != 1:
        sizes = {c: len(v) for c, v in groups.items()}
        raise ContractError(f"uneven class counts: {sizes}")
    k = counts.pop()
    if ways is not None and len(groups) != ways:
        raise ContractError(f"expected {ways} classes, got {len(groups)}")
    if shots is not None and k != shots:
        raise ContractError(f"expected {shots} features per class, got {k}")
    out: dict[int, Tensor] = {}
    for class_id in sorted(groups):
        feats = groups[class_id]
        acc = feats[0]
        for f in feats[1:]:
            acc = add(acc, f)
        out[class_id] = mul(acc, 1.0 / k)
    return out


def mm_fuse(
    prototype: Tensor,
    text_features: Tensor,
    fusion: EncoderStackParams,
) -> FusedFeature:
    """Prepend the prototype as token 0 to the text tokens and run the fusion stack."""
    if prototype.data.ndim != 1 or text_features.data.ndim != 2:
        raise ContractError(
            f"expected (d,) prototype and (L, d) text features, got "
            f"{prototype.shape} and {text_features.shape}"
        )
    if prototype.shape[0] != text_features.shape[1]:
        raise ContractError(
            f"prototype width {prototype.shape[0]} != text width {text_features.shape[1]}"
        )
    tokens = concat_rows(stack_rows([prototype]), text_features)
    out = encoder_stack(tokens, fusion)
    length = text_features.shape[0]
    return FusedFeature(fused=row(out, 0), text_out=rows(out, 1, length + 1))


def task_adapt(
    supports: Mapping[int, Tensor],
    query: Tensor,
    tlm: EncoderLayerParams,
) -> AdaptedFeatures:
    """One encoder layer over [supports ascending by class id, query last]."""
    if not supports:
        raise ContractError("task adaptation needs at least one support vector")
    order = sorted(supports)
    tokens = stack_rows([supports[c] for c in order] + [query])
    out = encoder_layer(tokens, tlm)
    adapted = {c: row(out, i) for i, c in enumerate(order)}
    return AdaptedFeatures(supports=adapted, query=row(out, len(order)))


def cosine(f1: Tensor, f2: Tensor) -> Tensor:
    """Inner product over the product of Euclidean norms."""
    n1 = float(np.linalg.norm(f1.data))
    n2 = float(np.linalg.norm(f2.data))
    if n1 < MIN_NORM or n2 < MIN_NORM:
        raise DegenerateVectorError(
            f"cosine of near-zero vector (norms {n1:.3e}, {n2:.3e})"
        )
    return div(dot(f1, f2), mul(sqrt(dot(f1, f1)), sqrt(dot(f2, f2))))


def classify(adapted: AdaptedFeatures, temperature: float = 1.0) -> ClassProbabilities:
    """Softmax over cosine similarities between the query and each class vector."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    order = tuple(sorted(adapted.supports))
    sims = [cosine(adapted.supports[c], adapted.query) for c in order]
    logits = div(stack_scalars(sims), temperature)
    return ClassProbabilities(class_ids=order, probs=softmax(logits))


def loss_episode(probs: ClassProbabilities, true_class: int) -> Tensor:
    """Cross-entropy of the episode classifier: -log p_true."""
    return neg(log(probs.prob_of(true_class)))


def _cross_entropy(logits: Tensor, label: int) -> Tensor:
    return neg(log(pick(softmax(logits), label)))


def loss_global(
    support: Sequence[tuple[Tensor, int]],
    query: tuple[Tensor, int],
    head: GlobalHead,
) -> Tensor:
    """Global classification loss over all training classes.

    The support term is averaged over the N*K support features; the query
    term is added unaveraged. Inputs are the raw (pre-fusion) features.
    """
    num_classes = head.num_classes
    for _, label in list(support) + [query]:
        if not 0 <= label < num_classes:
            raise ContractError(f"label {label} outside [0, {num_classes})")
    if not support:
        raise ContractError("global loss needs at least one support feature")
    acc = None
    for feat, label in support:
        ce = _cross_entropy(matvec(head.w, feat), label)
        acc = ce if acc is None else add(acc, ce)
    support_term = mul(acc, 1.0 / len(support))
    qf, ql = query
    return add(support_term, _cross_entropy(matvec(head.w, qf), ql))


def total_loss(l1: Tensor, l2: Tensor, lambda_weight) -> Tensor:
    """L = L1 + lambda * L2; lambda may be a float or a scalar tensor."""
    if isinstance(lambda_weight, Tensor):
        return add(l1, mul(lambda_weight, l2))
    if lambda_weight < 0:
        raise ConfigError(f"lambda must be >= 0, got {lambda_weight}")
    return add(l1, mul(l2, float(lambda_weight)))


def forward_episode(
    support: Sequence[tuple[int, Tensor]],
    query: Tensor,
    text_features: Mapping[int, Tensor] | None,
    fusion: EncoderStackParams,
    tlm: EncoderLayerParams,
    config: ModelConfig,
) -> EpisodeForward:
    """Prototypes -> optional fusion -> optional task adaptation -> classify."""
    prototypes = class_prototypes(support)
    if config.use_fusion:
        if text_features is None:
            raise ConfigError("fusion is enabled but no text features were provided")
        missing = [c for c in prototypes if c not in text_features]
        if missing:
            raise ConfigError(f"missing text features for classes {missing}")
        fused = {
            c: mm_fuse(prototypes[c], text_features[c], fusion).fused
            for c in sorted(prototypes)
        }
    else:
        fused = dict(prototypes)
    if config.use_tlm:
        adapted = task_adapt(fused, query, tlm)
    else:
        adapted = AdaptedFeatures(supports=dict(fused), query=query)
    probs = classify(adapted, config.temperature)
    return EpisodeForward(
        probs=probs,
        prototypes=prototypes,
        fused=fused,
        adapted=adapted,
        query_raw=query,
    )
