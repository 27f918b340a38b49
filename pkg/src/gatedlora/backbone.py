"""Frozen stand-in network with gated adapters injected at every linear layer.

The backbone is a small MLP whose weights never train: stacked linear
layers with rectifiers between them, one trainable classification head per
task on top. Each linear layer carries a set of rank-partitioned adapter
experts; a metadata router (shared across layers by default) produces the
per-sample gate vectors.

Only experts, router parameters (those active under the routing mode), and
heads receive optimizer updates. `snapshot_frozen` / `freeze_check` verify
the backbone is bit-identical after training.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import adapters as ad
from . import router as rt
from . import tensor as T
from .errors import ConfigError, ContractError, DataError
from .seeding import derive_rng
from .tensor import Tensor

__all__ = [
    "BackboneConfig",
    "Head",
    "AdaptedModel",
    "build_model",
    "forward",
    "named_tensors",
    "trainable_parameters",
    "snapshot_frozen",
    "freeze_check",
    "gradient_check",
]


@dataclass
class BackboneConfig:
    """Architecture of the frozen network and its trainable heads."""

    d_in: int
    head_widths: dict[int, int]  # task id -> number of classes
    d_model: int = 32
    depth: int = 2

    def __post_init__(self):
        if self.d_in < 1 or self.d_model < 1 or self.depth < 1:
            raise ConfigError(
                f"d_in, d_model, depth must be positive, got {self.d_in}, {self.d_model}, {self.depth}"
            )
        if not self.head_widths:
            raise ConfigError("at least one task head is required")
        if any(w < 2 for w in self.head_widths.values()):
            raise ConfigError(f"every head needs at least 2 classes, got {self.head_widths}")


@dataclass
class Head:
    """Trainable linear classifier for one task: W [classes, d_model], b [classes]."""

    W: Tensor
    b: Tensor


@dataclass
class AdaptedModel:
    layers: list[ad.AdapterLayer]
    routers: list[rt.RouterParams]  # length 1 (shared) or depth (per layer)
    mode: rt.RoutingMode
    heads: dict[int, Head]
    config: BackboneConfig
    granularity: rt.GranularityMap | None = None

    @property
    def shared_router(self) -> bool:
        return len(self.routers) == 1

    @property
    def n_experts(self) -> int:
        return self.layers[0].n_experts


def build_model(
    seed: int,
    config: BackboneConfig,
    n_eras: int,
    rank: int,
    n_experts: int,
    mode: rt.RoutingMode,
    granularity: rt.GranularityMap | None = None,
    d_t: int = 16,
    d_e: int = 16,
    d_h: int = 32,
    dropout_rate: float = 0.05,
    alpha: float | None = None,
    per_layer_routers: bool = False,
) -> AdaptedModel:
    """Assemble frozen backbone + experts + router(s) + heads from one seed.

    Every component draws from its own derived generator, so models built
    for different routing modes share identical initial weights wherever
    their shapes agree (the basis of the mode-equivalence checks).
    """
    if mode is rt.RoutingMode.NO_MOE and n_experts != 1:
        raise ConfigError(f"no-moe mode requires exactly 1 expert, got {n_experts}")
    rng_backbone = derive_rng(seed, "backbone")
    layers: list[ad.AdapterLayer] = []
    for L in range(config.depth):
        d_in = config.d_in if L == 0 else config.d_model
        W0 = T.gaussian(
            rng_backbone, (config.d_model, d_in), std=1.0 / np.sqrt(d_in), requires_grad=False
        )
        bias = T.gaussian(rng_backbone, (config.d_model,), std=0.1, requires_grad=False)
        base = ad.FrozenLinear(W0=W0, bias=bias)
        layers.append(
            ad.build_adapter_layer(
                derive_rng(seed, f"experts.layer{L}"),
                base,
                rank,
                n_experts,
                alpha=alpha,
                dropout_rate=dropout_rate,
            )
        )
    n_router_tasks = (
        granularity.n_task_ids if granularity is not None else len(config.head_widths)
    )
    if per_layer_routers:
        routers = [
            rt.init_router(
                derive_rng(seed, f"router{L}"), n_router_tasks, n_eras, n_experts, d_t, d_e, d_h
            )
            for L in range(config.depth)
        ]
    else:
        routers = [
            rt.init_router(derive_rng(seed, "router"), n_router_tasks, n_eras, n_experts, d_t, d_e, d_h)
        ]
    rng_heads = derive_rng(seed, "heads")
    heads = {}
    for task_id in sorted(config.head_widths):
        width = config.head_widths[task_id]
        heads[task_id] = Head(
            W=T.gaussian(rng_heads, (width, config.d_model), std=1.0 / np.sqrt(config.d_model)),
            b=Tensor(np.zeros(width), requires_grad=True),
        )
    return AdaptedModel(
        layers=layers,
        routers=routers,
        mode=mode,
        heads=heads,
        config=config,
        granularity=granularity,
    )


def forward(
    model: AdaptedModel,
    x: Tensor,
    task_id: int,
    era_id: int,
    training: bool = False,
    rng: np.random.Generator | None = None,
    relu_inputs: list[Tensor] | None = None,
) -> Tensor:
    """Logits of the task's head for a metadata-homogeneous batch.

    Routing happens once per call from (task_id, era_id); rectifiers sit
    between adapter layers. `relu_inputs`, when given, collects each
    pre-rectifier tensor (used by the gradient check to keep finite
    differences away from the kink).
    """
    if task_id not in model.heads:
        raise DataError(f"no head configured for task id {task_id}")
    h = x
    for L, layer in enumerate(model.layers):
        router = model.routers[0] if model.shared_router else model.routers[L]
        w_t, w_e = rt.route(router, model.mode, task_id, era_id, granularity=model.granularity)
        h = ad.gated_forward(layer, h, w_t, w_e, training=training, rng=rng)
        if L < len(model.layers) - 1:
            if relu_inputs is not None:
                relu_inputs.append(h)
            h = T.relu(h)
    head = model.heads[task_id]
    return T.add(T.matmul(h, T.transpose(head.W)), head.b)


def named_tensors(model: AdaptedModel) -> dict[str, Tensor]:
    """Stable name -> tensor inventory (frozen and trainable alike)."""
    out: dict[str, Tensor] = {}
    for L, layer in enumerate(model.layers):
        out[f"layer{L}.base.W0"] = layer.base.W0
        if layer.base.bias is not None:
            out[f"layer{L}.base.bias"] = layer.base.bias
        for i, e in enumerate(layer.experts):
            out[f"layer{L}.expert{i}.A"] = e.A
            out[f"layer{L}.expert{i}.B"] = e.B
    for idx, router in enumerate(model.routers):
        prefix = "router" if model.shared_router else f"router{idx}"
        out[f"{prefix}.V_t"] = router.V_t
        out[f"{prefix}.V_e"] = router.V_e
        out[f"{prefix}.W_T"] = router.W_T
        out[f"{prefix}.W_E"] = router.W_E
        out[f"{prefix}.M1"] = router.M1
        out[f"{prefix}.M2"] = router.M2
    for task_id in sorted(model.heads):
        out[f"head{task_id}.W"] = model.heads[task_id].W
        out[f"head{task_id}.b"] = model.heads[task_id].b
    return out


_ROUTER_FIELDS_BY_MODE = {
    rt.RoutingMode.SEPARATE_GATES: ("V_t", "V_e", "W_T", "W_E"),
    rt.RoutingMode.CONCAT_SINGLE_GATE: ("V_t", "V_e", "M1", "M2"),
    rt.RoutingMode.TASK_ONLY: ("V_t", "W_T"),
    rt.RoutingMode.ERA_ONLY: ("V_e", "W_E"),
    rt.RoutingMode.NO_MOE: (),
}


def trainable_parameters(model: AdaptedModel) -> list[tuple[str, Tensor]]:
    """Ordered (name, tensor) pairs the optimizer may touch under the mode."""
    active = _ROUTER_FIELDS_BY_MODE[model.mode]
    pairs = []
    for name, t in named_tensors(model).items():
        if not t.requires_grad:
            continue
        part = name.split(".", 1)
        if part[0].startswith("router"):
            if part[1] in active:
                pairs.append((name, t))
        else:
            pairs.append((name, t))
    return pairs


def snapshot_frozen(model: AdaptedModel) -> dict[str, bytes]:
    """Byte images of every frozen tensor, taken at init."""
    return {
        name: t.data.tobytes() for name, t in named_tensors(model).items() if not t.requires_grad
    }


def freeze_check(model: AdaptedModel, snapshot: dict[str, bytes]) -> bool:
    """True iff every frozen tensor is bit-identical to its snapshot."""
    current = {
        name: t.data.tobytes() for name, t in named_tensors(model).items() if not t.requires_grad
    }
    return current == snapshot


def _tiny_model(seed: int, mode: rt.RoutingMode) -> AdaptedModel:
    config = BackboneConfig(d_in=6, head_widths={0: 2, 1: 3}, d_model=8, depth=2)
    return build_model(
        seed,
        config,
        n_eras=2,
        rank=4,
        n_experts=2,
        mode=mode,
        d_t=4,
        d_e=4,
        d_h=6,
        dropout_rate=0.0,
    )


def _router_relu_margin(model: AdaptedModel, task_id: int, era_id: int) -> float:
    """Smallest |pre-rectifier| inside the concat gate for this id pair."""
    if model.mode is not rt.RoutingMode.CONCAT_SINGLE_GATE:
        return np.inf
    margin = np.inf
    for router in model.routers:
        tid = model.granularity.task_of(task_id) if model.granularity else task_id
        v = np.concatenate([router.V_t.data[tid], router.V_e.data[era_id]])
        margin = min(margin, float(np.min(np.abs(router.M1.data.T @ v))))
    return margin


def gradient_check(
    seeds=range(10),
    batch: int = 4,
    step: float = 1e-5,
    rel_floor: float = 1e-3,
) -> dict:
    """Analytic vs. central-difference gradients on a tiny full model.

    For each seed and for both gate wirings, randomizes every trainable
    tensor (up-projections included, so nothing is stuck at the zero init),
    picks a probe batch whose pre-rectifier activations stay clear of the
    kink, and compares backward() against finite differences for every
    trainable tensor. Returns max relative error, the worst tensor's name,
    and the wall-clock spent.
    """
    start = time.perf_counter()
    worst = 0.0
    worst_name = ""
    checked = 0
    for seed in seeds:
        for mode in (rt.RoutingMode.SEPARATE_GATES, rt.RoutingMode.CONCAT_SINGLE_GATE):
            model = _tiny_model(seed, mode)
            crng = derive_rng(seed, f"gradcheck.{mode.value}")
            params = trainable_parameters(model)
            for _, t in params:
                t.data[:] = crng.normal(0.0, 0.5, size=t.shape)
            task_id = int(crng.integers(0, 2))
            era_id = int(crng.integers(0, 2))
            labels = crng.integers(0, model.config.head_widths[task_id], size=batch)
            # keep every rectifier input at least 100 steps away from zero
            x = None
            for _ in range(50):
                cand = Tensor(crng.normal(size=(batch, model.config.d_in)))
                pre: list[Tensor] = []
                forward(model, cand, task_id, era_id, relu_inputs=pre)
                margin = min(float(np.min(np.abs(p.data))) for p in pre)
                margin = min(margin, _router_relu_margin(model, task_id, era_id))
                if margin > 100 * step:
                    x = cand
                    break
            if x is None:
                raise ContractError("could not find a probe batch clear of rectifier kinks")

            def loss_value() -> T.Tensor:
                logits = forward(model, x, task_id, era_id)
                return T.cross_entropy_with_logits(logits, labels)

            with T.Tape():
                T.backward(loss_value())
            for name, t in params:
                numeric = T.finite_diff_grad(lambda _t: loss_value().item(), t, step=step)
                # a tensor the loss never touched (e.g. the other task's head)
                # has grad None; finite differences must then report zero too
                analytic = t.grad if t.grad is not None else np.zeros(t.shape)
                denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor)
                err = float(np.max(np.abs(analytic - numeric) / denom))
                checked += 1
                if err > worst:
                    worst = err
                    worst_name = f"seed{seed}.{mode.value}.{name}"
                t.zero_grad()
    return {
        "max_rel_err": worst,
        "worst": worst_name,
        "tensors_checked": checked,
        "seconds": time.perf_counter() - start,
    }
