"""Multi-head self-attention encoder layers and stacks.

The same pre-norm layer backs the fusion transformer, the task-level
adaptation layer, and both toy encoders. No masking, no dropout, and no
positional encoding inside the stack; position information, where needed,
is added by the callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import (
    ParamStore,
    Tensor,
    add,
    cols,
    concat_cols,
    gelu,
    layer_norm_rows,
    matmul,
    softmax_rows,
    transpose,
)

LN_EPS = 1e-5
DEFAULT_HEADS = 4
DEFAULT_FFN_RATIO = 4


@dataclass
class EncoderLayerParams:
    """Parameters of one pre-norm encoder layer of width d."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    heads: int

    def __post_init__(self):
        d = self.wq.shape[0]
        if d % self.heads != 0:
            raise ConfigError(f"width {d} is not divisible by {self.heads} heads")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ConfigError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        hidden = self.w1.shape[1]
        if self.w1.shape != (d, hidden) or self.w2.shape != (hidden, d):
            raise ConfigError(
                f"feed-forward shapes inconsistent: {self.w1.shape} and {self.w2.shape}"
            )
        for name in ("bo", "b1", "b2", "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            want = (hidden,) if name == "b1" else (d,)
            if getattr(self, name).shape != want:
                raise ConfigError(f"{name} must be {want}, got {getattr(self, name).shape}")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    def tensors(self) -> list[Tensor]:
        return [
            self.wq, self.wk, self.wv, self.wo, self.bo,
            self.w1, self.b1, self.w2, self.b2,
            self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias,
        ]


@dataclass
class EncoderStackParams:
    """An ordered list of encoder layers sharing width, heads, and ratio."""

    layers: list[EncoderLayerParams] = field(default_factory=list)

    def __post_init__(self):
        if self.layers:
            d, h = self.layers[0].dim, self.layers[0].heads
            hidden = self.layers[0].w1.shape[1]
            for layer in self.layers:
                if layer.dim != d or layer.heads != h or layer.w1.shape[1] != hidden:
                    raise ConfigError("encoder stack layers disagree on d, heads, or ratio")

    @property
    def depth(self) -> int:
        return len(self.layers)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_encoder_layer(
    store: ParamStore,
    prefix: str,
    dim: int,
    rng: np.random.Generator,
    heads: int = DEFAULT_HEADS,
    ffn_ratio: int = DEFAULT_FFN_RATIO,
    dtype=np.float64,
    trainable: bool = True,
    identity_start: bool = False,
) -> EncoderLayerParams:
    """Create one layer's tensors, register them under prefix, and return the view.

    ``identity_start`` zeroes the two residual-branch output projections so
    the layer begins as an exact identity map and only departs from it under
    training pressure; used for the modules bolted onto the metric path.
    """
    if dim % heads != 0:
        raise ConfigError(f"width {dim} is not divisible by {heads} heads")
    hidden = dim * ffn_ratio

    def w(name, fan_in, fan_out, zero=False):
        data = np.zeros((fan_in, fan_out), dtype=dtype) if zero else glorot(
            rng, fan_in, fan_out, dtype)
        return store.add(f"{prefix}.{name}", Tensor(data, requires_grad=trainable))

    def zeros(name, n):
        return store.add(f"{prefix}.{name}", Tensor(np.zeros(n, dtype=dtype),
                                                    requires_grad=trainable))

    def ones(name, n):
        return store.add(f"{prefix}.{name}", Tensor(np.ones(n, dtype=dtype),
                                                    requires_grad=trainable))

    return EncoderLayerParams(
        wq=w("wq", dim, dim),
        wk=w("wk", dim, dim),
        wv=w("wv", dim, dim),
        wo=w("wo", dim, dim, zero=identity_start),
        bo=zeros("bo", dim),
        w1=w("w1", dim, hidden),
        b1=zeros("b1", hidden),
        w2=w("w2", hidden, dim, zero=identity_start),
        b2=zeros("b2", dim),
        ln1_gain=ones("ln1_gain", dim),
        ln1_bias=zeros("ln1_bias", dim),
        ln2_gain=ones("ln2_gain", dim),
        ln2_bias=zeros("ln2_bias", dim),
        heads=heads,
    )


def init_encoder_stack(
    store: ParamStore,
    prefix: str,
    dim: int,
    depth: int,
    rng: np.random.Generator,
    heads: int = DEFAULT_HEADS,
    ffn_ratio: int = DEFAULT_FFN_RATIO,
    dtype=np.float64,
    trainable: bool = True,
    identity_start: bool = False,
) -> EncoderStackParams:
    layers = [
        init_encoder_layer(store, f"{prefix}.layers.{i}", dim, rng,
                           heads=heads, ffn_ratio=ffn_ratio, dtype=dtype,
                           trainable=trainable, identity_start=identity_start)
        for i in range(depth)
    ]
    return EncoderStackParams(layers=layers)


def multi_head_attention(x: Tensor, params: EncoderLayerParams) -> Tensor:
    """Unmasked self-attention over the rows of x, heads concatenated then projected."""
    if x.data.ndim != 2 or x.shape[1] != params.dim:
        raise ShapeError(f"attention input {x.shape} does not match width {params.dim}")
    d, h = params.dim, params.heads
    dh = d // h
    scale = 1.0 / math.sqrt(dh)

    q = matmul(x, params.wq)
    k = matmul(x, params.wk)
    v = matmul(x, params.wv)
    heads = []
    for i in range(h):
        qi = cols(q, i * dh, (i + 1) * dh)
        ki = cols(k, i * dh, (i + 1) * dh)
        vi = cols(v, i * dh, (i + 1) * dh)
        scores = matmul(qi, transpose(ki)) * scale
        heads.append(matmul(softmax_rows(scores), vi))
    merged = concat_cols(heads)
    return add(matmul(merged, params.wo), params.bo)


def feed_forward(x: Tensor, params: EncoderLayerParams) -> Tensor:
    hidden = gelu(add(matmul(x, params.w1), params.b1))
    return add(matmul(hidden, params.w2), params.b2)


def encoder_layer(x: Tensor, params: EncoderLayerParams) -> Tensor:
    """Pre-norm residual layer: x + MHA(LN(x)), then + FFN(LN(.))."""
    attn_in = layer_norm_rows(x, params.ln1_gain, params.ln1_bias, LN_EPS)
    x1 = add(x, multi_head_attention(attn_in, params))
    ffn_in = layer_norm_rows(x1, params.ln2_gain, params.ln2_bias, LN_EPS)
    return add(x1, feed_forward(ffn_in, params))


def encoder_stack(x: Tensor, params: EncoderStackParams) -> Tensor:
    """Apply the layers in order; an empty stack is the identity."""
    for layer in params.layers:
        x = encoder_layer(x, layer)
    return x
