"""Adapter forward passes over a frozen linear layer.

Three variants, in increasing order of structure:

  plain low-rank update          h = x W0^T + lam * (x A^T) B^T
  weighted mixture of experts    h = x W0^T + lam * sum_i omega_i (x Ai^T) Bi^T
  dual-gated mixture             h = x W0^T + sum_i wt_i * lam * ((Drop(x) Ai^T) * we_i) Bi^T

The dual-gated form multiplies each expert's down-projected activation by a
per-expert era weight and its up-projected output by a per-expert task
weight. Experts partition a total rank budget `rank` into N slices of
rank/N each, so the trainable parameter count is independent of N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

__all__ = [
    "FrozenLinear",
    "ExpertParams",
    "AdapterLayer",
    "init_experts",
    "build_adapter_layer",
    "lora_forward",
    "moe_forward",
    "gated_forward",
    "trainable_param_count",
]


@dataclass
class FrozenLinear:
    """A linear map whose weights never train: W0 [d_out, d_in], optional bias."""

    W0: Tensor
    bias: Tensor | None = None

    def __post_init__(self):
        if self.W0.requires_grad:
            raise ContractError("frozen layer weights must have requires_grad=False")
        if self.bias is not None and self.bias.requires_grad:
            raise ContractError("frozen layer bias must have requires_grad=False")

    @property
    def d_out(self) -> int:
        return self.W0.shape[0]

    @property
    def d_in(self) -> int:
        return self.W0.shape[1]


@dataclass
class ExpertParams:
    """One expert's low-rank pair: A [r_e, d_in] down, B [d_out, r_e] up."""

    A: Tensor
    B: Tensor

    @property
    def rank(self) -> int:
        return self.A.shape[0]


@dataclass
class AdapterLayer:
    """A frozen base plus N rank-partitioned experts and their scaling."""

    base: FrozenLinear
    experts: list[ExpertParams]
    lam: float
    dropout_rate: float = 0.05

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def rank(self) -> int:
        return sum(e.rank for e in self.experts)


def init_experts(
    rng: np.random.Generator,
    d_in: int,
    d_out: int,
    rank: int,
    n_experts: int,
) -> list[ExpertParams]:
    """Split `rank` evenly across experts; A ~ N(0, 1/d_in), B = 0.

    Zero-initialized B makes every adapter variant reproduce the frozen base
    output exactly at step 0.
    """
    if rank < 1 or n_experts < 1:
        raise ConfigError(f"rank and expert count must be positive, got rank={rank}, n={n_experts}")
    if rank % n_experts != 0:
        raise ConfigError(f"rank {rank} is not divisible by expert count {n_experts}")
    r_e = rank // n_experts
    std = 1.0 / np.sqrt(d_in)
    experts = []
    for _ in range(n_experts):
        A = T.gaussian(rng, (r_e, d_in), std=std, requires_grad=True)
        B = Tensor(np.zeros((d_out, r_e)), requires_grad=True)
        experts.append(ExpertParams(A=A, B=B))
    return experts


def build_adapter_layer(
    rng: np.random.Generator,
    base: FrozenLinear,
    rank: int,
    n_experts: int,
    alpha: float | None = None,
    dropout_rate: float = 0.05,
) -> AdapterLayer:
    """Attach freshly initialized experts to a frozen base layer.

    lam = alpha / rank with alpha defaulting to rank, so the default scaling
    is 1 regardless of how the rank is partitioned.
    """
    if alpha is None:
        alpha = float(rank)
    experts = init_experts(rng, base.d_in, base.d_out, rank, n_experts)
    return AdapterLayer(base=base, experts=experts, lam=alpha / rank, dropout_rate=dropout_rate)


def _base_out(layer: AdapterLayer, x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"adapter input must be [batch, d_in], got {x.shape}")
    if x.shape[1] != layer.base.d_in:
        raise ShapeError(f"input width {x.shape[1]} does not match layer d_in {layer.base.d_in}")
    h0 = T.matmul(x, T.transpose(layer.base.W0))
    if layer.base.bias is not None:
        h0 = T.add(h0, layer.base.bias)
    return h0


def lora_forward(layer: AdapterLayer, x: Tensor) -> Tensor:
    """Single-expert low-rank forward: x W0^T + lam * (x A^T) B^T."""
    if layer.n_experts != 1:
        raise ContractError(f"plain low-rank forward needs exactly 1 expert, got {layer.n_experts}")
    h0 = _base_out(layer, x)
    e = layer.experts[0]
    delta = T.matmul(T.matmul(x, T.transpose(e.A)), T.transpose(e.B))
    return T.add(h0, T.scale(delta, layer.lam))


def moe_forward(layer: AdapterLayer, x: Tensor, omega: Tensor) -> Tensor:
    """Mixture forward: x W0^T + lam * sum_i omega_i (x Ai^T) Bi^T."""
    if omega.data.ndim != 1 or omega.shape[0] != layer.n_experts:
        raise ShapeError(f"mixture weights shape {omega.shape} does not match {layer.n_experts} experts")
    h = _base_out(layer, x)
    for i, e in enumerate(layer.experts):
        delta = T.matmul(T.matmul(x, T.transpose(e.A)), T.transpose(e.B))
        h = T.add(h, T.scale(T.mul(delta, T.index(omega, i)), layer.lam))
    return h


def _check_gate(name: str, w: Tensor, n: int) -> None:
    if w.data.ndim != 1 or w.shape[0] != n:
        raise ContractError(f"{name} must be a length-{n} vector, got shape {w.shape}")
    if not np.all(np.isfinite(w.data)):
        raise ContractError(f"{name} contains NaN or Inf")


def gated_forward(
    layer: AdapterLayer,
    x: Tensor,
    w_t: Tensor,
    w_e: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Dual-gated mixture forward.

    Per expert i: down-project the dropped input, multiply the activation by
    the era weight we_i, up-project, then scale by lam and the task weight
    wt_i. The frozen base consumes the raw (undropped) input. One dropout
    mask is drawn per call and shared by all experts.
    """
    _check_gate("task gate", w_t, layer.n_experts)
    _check_gate("era gate", w_e, layer.n_experts)
    h = _base_out(layer, x)
    xd = T.dropout(x, layer.dropout_rate, training, rng)
    for i, e in enumerate(layer.experts):
        a = T.matmul(xd, T.transpose(e.A))
        a = T.mul(a, T.index(w_e, i))
        b = T.matmul(a, T.transpose(e.B))
        h = T.add(h, T.mul(T.scale(b, layer.lam), T.index(w_t, i)))
    return h


def trainable_param_count(layer: AdapterLayer) -> int:
    """Number of trainable adapter scalars: rank * (d_in + d_out), for any N."""
    return sum(e.A.size + e.B.size for e in layer.experts)
