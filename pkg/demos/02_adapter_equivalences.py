"""Structural identities of the rank-partitioned adapter.

Three exact equivalences pin the architecture down: unit gates reduce the
mixture to a plain low-rank adapter, one-hot gates select a single expert,
and splitting rank r across N experts never changes the trainable
parameter count.
"""

import numpy as np

from gatedlora import adapters
from gatedlora.tensor import Tensor

rng = np.random.default_rng(0)
d_in, d_out, rank = 6, 5, 8
x = Tensor(rng.normal(size=(7, d_in)))


def fresh_layer(n_experts):
    base = adapters.FrozenLinear(
        Tensor(rng.normal(size=(d_out, d_in))), Tensor(rng.normal(size=d_out))
    )
    layer = adapters.build_adapter_layer(rng, base, rank=rank, n_experts=n_experts,
                                         dropout_rate=0.0)
    for e in layer.experts:
        e.A.data[...] = rng.normal(size=e.A.shape)
        e.B.data[...] = rng.normal(size=e.B.shape)
    return layer


# --- Unit gates collapse to the plain adapter -----------------------------

layer = fresh_layer(1)
ones = Tensor(np.ones(1))
gated = adapters.gated_forward(layer, x, ones, ones)
plain = adapters.lora_forward(layer, x)
print(f"unit gates vs plain forward:   max |diff| = "
      f"{np.max(np.abs(gated.data - plain.data)):.1e}")

# --- One-hot gates select one expert --------------------------------------

layer = fresh_layer(4)
k = 2
hot = np.zeros(4)
hot[k] = 1.0
gated = adapters.gated_forward(layer, x, Tensor(hot), Tensor(hot))
e = layer.experts[k]
solo = adapters._base_out(layer, x).data + layer.lam * (x.data @ e.A.data.T @ e.B.data.T)
print(f"one-hot gates vs expert {k} alone: max |diff| = "
      f"{np.max(np.abs(gated.data - solo)):.1e}")

# --- Rank partitioning is parameter-neutral -------------------------------
# Each expert holds rank/N rows of A and columns of B, so the total is
# always rank * (d_in + d_out) no matter how many ways it is split.

print(f"\ntrainable adapter parameters at rank {rank}:")
for n in (1, 2, 4, 8):
    count = adapters.trainable_param_count(fresh_layer(n))
    print(f"  N = {n}: {count}  (rank * (d_in + d_out) = {rank * (d_in + d_out)})")

# --- Uniform gates equal an unweighted mixture at 1/N^2 -------------------
# Era weight scales inside the up-projection and task weight outside, so a
# uniform pair contributes (1/N)^2 per expert.

layer = fresh_layer(4)
quarter = Tensor(np.full(4, 0.25))
dual = adapters.gated_forward(layer, x, quarter, quarter)
sixteenth = adapters.moe_forward(layer, x, Tensor(np.full(4, 0.0625)))
print(f"\nuniform dual gates vs single 1/16 mixture: max |diff| = "
      f"{np.max(np.abs(dual.data - sixteenth.data)):.1e}")
