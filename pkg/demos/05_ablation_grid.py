"""The full routing-variant grid on one dataset, as one comparison table.

Every gate wiring crossed with both task-granularity schemes, all trained
from the same initialization on the same conflicted data. This is the same
sweep `gatedlora ablate` writes to ablation.csv.
"""

import numpy as np

from gatedlora.synthdata import SynthSpec, generate
from gatedlora.training import TrainConfig, run_ablation_suite

spec = SynthSpec(n_train=200, n_dev=40, n_test=100, conflict=1.0, seed=0)
dataset = generate(spec)
base = TrainConfig(epochs=12, seed=0)

print("running 8 variants (this is the slow one, a minute or so)...")
rows = run_ablation_suite(base, dataset)

# --- Collapse cells to one line per variant -------------------------------

print(f"\n{'variant':>10} {'granularity':>12} {'mean acc':>9} {'mean loss':>10}")
for row in rows:
    accs = [m.accuracy for m in row.result.test_metrics.values()]
    losses = [m.loss for m in row.result.test_metrics.values()]
    print(f"{row.variant:>10} {row.granularity:>12} "
          f"{np.mean(accs):>9.3f} {np.mean(losses):>10.3f}")

# Expected shape of the result: no-moe sits lowest (joint interference,
# blind to era), era-only already recovers most of it on this data because
# the flipped boundary is the dominant conflict, task-only stays near
# no-moe, and the dual-signal variants land on top. Coarse granularity
# merges task pairs and costs a little accuracy when tasks conflict.
