"""Analytic gradients vs. central finite differences on the full model.

Every trainable tensor in a small two-layer adapted model is checked, for
both gate wirings, across several seeds. A deliberately corrupted backward
rule at the end shows the check actually bites.
"""

import numpy as np

from gatedlora import backbone as bb
from gatedlora import tensor as T

# --- The real check -------------------------------------------------------

report = bb.gradient_check(seeds=range(5))
print(f"checked {report['tensors_checked']} tensors in {report['seconds']:.1f}s")
print(f"max relative error: {report['max_rel_err']:.3e}  (tolerance 1e-5)")
print(f"worst tensor:       {report['worst']}")
assert report["max_rel_err"] <= 1e-5

# --- Negative control: corrupt one backward rule --------------------------
# Scale the rectifier's gradient by 1.01 and the same comparison must fail;
# if it did not, the oracle would be worthless.

true_relu = T.relu


def crooked_relu(a):
    mask = a.data > 0
    return T._emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask * 1.01,))


T.relu = crooked_relu
try:
    bad = bb.gradient_check(seeds=range(1))
finally:
    T.relu = true_relu

print(f"\nwith a corrupted rectifier rule: max relative error {bad['max_rel_err']:.3e}")
assert bad["max_rel_err"] > 1e-5, "corruption went undetected"
print("corruption detected, as it must be")
