"""Set Transformer blocks (MAB, SAB, ISAB, PMA) over :mod:`abundset.numerics`.

Blocks are plain functions of ``(inputs, params, prefix)``; parameters are
created lazily in the :class:`~abundset.numerics.ParamStore` under
``prefix``-qualified names, so the same store can be reused across calls.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError
from .numerics import (ParamStore, Tensor, layer_norm, matmul, relu, reshape,
                       softmax_rows, transpose)

_attention_probes: list[list[tuple[int, ...]]] = []


@contextlib.contextmanager
def record_attention_shapes():
    """Collect the (query rows, key rows) shape of every attention matrix built inside."""
    shapes: list[tuple[int, ...]] = []
    _attention_probes.append(shapes)
    try:
        yield shapes
    finally:
        _attention_probes.remove(shapes)


@dataclass
class SetTransformerConfig:
    input_dim: int = 768
    model_dim: int = 256
    heads: int = 4
    inducing_points: int = 16
    pma_seeds: int = 1
    encoder_blocks: int = 2
    ln_eps: float = 1e-5

    def validate(self) -> "SetTransformerConfig":
        for field in ("input_dim", "model_dim", "heads", "inducing_points", "pma_seeds", "encoder_blocks"):
            if getattr(self, field) < 1:
                raise ConfigError(field, "must be >= 1")
        if self.model_dim % self.heads:
            raise ConfigError("heads", f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps", "must be > 0")
        return self

    @property
    def pooled_dim(self) -> int:
        return self.pma_seeds * self.model_dim

    def to_dict(self) -> dict:
        return asdict(self)


def _as_input(x, params: ParamStore) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=params.dtype)


def linear(x: Tensor, params: ParamStore, name: str, d_in: int, d_out: int) -> Tensor:
    w = params.weight(f"{name}.w", (d_in, d_out))
    b = params.bias(f"{name}.b", (d_out,))
    return matmul(x, w) + b


def feed_forward(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Row-wise Linear -> ReLU -> Linear, inner width equal to the model width."""
    d = x.shape[-1]
    return linear(relu(linear(x, params, f"{prefix}.fc1", d, d)), params, f"{prefix}.fc2", d, d)


def multihead(x: Tensor, y: Tensor, params: ParamStore, prefix: str, heads: int) -> Tensor:
    n, d = x.shape
    m = y.shape[0]
    dh = d // heads
    q = linear(x, params, f"{prefix}.q", d, d)
    k = linear(y, params, f"{prefix}.k", d, d)
    v = linear(y, params, f"{prefix}.v", d, d)
    # (rows, d) -> (heads, rows, dh)
    qh = transpose(reshape(q, (n, heads, dh)), (1, 0, 2))
    kh = transpose(reshape(k, (m, heads, dh)), (1, 2, 0))
    vh = transpose(reshape(v, (m, heads, dh)), (1, 0, 2))
    scores = matmul(qh, kh) * (1.0 / np.sqrt(dh))
    for probe in _attention_probes:
        probe.append((n, m))
    attn = softmax_rows(scores)
    o = reshape(transpose(matmul(attn, vh), (1, 0, 2)), (n, d))
    return linear(o, params, f"{prefix}.o", d, d)


def mab(x, y, params: ParamStore, prefix: str = "mab", config: SetTransformerConfig | None = None) -> Tensor:
    """Multihead attention block of ``x`` attending to ``y``; output has x's row count."""
    config = config or SetTransformerConfig()
    x, y = _as_input(x, params), _as_input(y, params)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"mab: incompatible inputs {x.shape} and {y.shape}")
    d = x.shape[1]
    if d % config.heads:
        raise DimensionError(f"mab: width {d} not divisible by {config.heads} heads")
    g0 = params.ones(f"{prefix}.ln0.g", (d,))
    b0 = params.bias(f"{prefix}.ln0.b", (d,))
    g1 = params.ones(f"{prefix}.ln1.g", (d,))
    b1 = params.bias(f"{prefix}.ln1.b", (d,))
    h = layer_norm(x + multihead(x, y, params, f"{prefix}.att", config.heads), g0, b0, config.ln_eps)
    return layer_norm(h + feed_forward(h, params, f"{prefix}.ff"), g1, b1, config.ln_eps)


def sab(x, params: ParamStore, prefix: str = "sab", config: SetTransformerConfig | None = None) -> Tensor:
    return mab(x, x, params, prefix, config)


def isab(x, params: ParamStore, prefix: str = "isab", config: SetTransformerConfig | None = None) -> Tensor:
    """Route attention through ``inducing_points`` learned rows: mab(X, mab(I, X))."""
    config = config or SetTransformerConfig()
    x = _as_input(x, params)
    d = x.shape[-1]
    inducing = params.weight(f"{prefix}.inducing", (config.inducing_points, d), fan_in=d)
    h = mab(inducing, x, params, f"{prefix}.mab0", config)
    return mab(x, h, params, f"{prefix}.mab1", config)


def pma(z, params: ParamStore, prefix: str = "pma", config: SetTransformerConfig | None = None) -> Tensor:
    """Pool any number of rows into ``pma_seeds`` rows via learned seed queries."""
    config = config or SetTransformerConfig()
    z = _as_input(z, params)
    d = z.shape[-1]
    seeds = params.weight(f"{prefix}.seeds", (config.pma_seeds, d), fan_in=d)
    return mab(seeds, feed_forward(z, params, f"{prefix}.ff_in"), params, f"{prefix}.mab", config)


def encode_set(x, config: SetTransformerConfig, params: ParamStore) -> Tensor:
    """Per-element encoder outputs: linear projection then the ISAB stack."""
    x = _as_input(x, params)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("encode_set needs a non-empty set of row vectors")
    if x.shape[1] != config.input_dim:
        raise DimensionError(f"encode_set: expected {config.input_dim} columns, got {x.shape[1]}")
    h = linear(x, params, "enc.in", config.input_dim, config.model_dim)
    for block in range(config.encoder_blocks):
        h = isab(h, params, f"enc.isab{block}", config)
    return h


def pool_set(encoded: Tensor, config: SetTransformerConfig, params: ParamStore) -> Tensor:
    """PMA, then SAB over the pooled rows, flattened to ``pma_seeds * model_dim``."""
    if encoded.shape[0] == 0:
        raise EmptyInputError("pool_set needs at least one encoded row")
    pooled = pma(encoded, params, "dec.pma", config)
    pooled = sab(pooled, params, "dec.sab", config)
    return reshape(pooled, (config.pooled_dim,))
