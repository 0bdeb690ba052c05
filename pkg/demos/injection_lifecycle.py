"""From retrieved positions to a residual-stream update, step by step.

Shows the injection head's contract: at initialization the fused model is
bit-for-bit the plain windowed model (the injection is identically zero),
and once the head's levels separate, retrieved value symbols become a
decodable additive signal.
"""

import numpy as np

from rosa import ModelConfig, TinyModel

rng = np.random.default_rng(0)
tokens = rng.integers(0, 12, size=(2, 24))

base = dict(dim=16, vocab=12, window=4, route_bits=4, seed=7)
fused = TinyModel(ModelConfig(mode="post_attn", **base), dtype=np.float64)
plain = TinyModel(ModelConfig(mode="window_only", **base), dtype=np.float64)
for name in plain.params:
    plain.params[name][...] = fused.params[name]

diff = np.abs(fused.forward(tokens)[0] - plain.forward(tokens)[0]).max()
print(f"zero-init transparency: max |fused - plain| = {diff:.2e}  (<= 1e-12)")

# Separate the head levels: retrieved bit 0 -> -0.5, bit 1 -> +0.5.
last = fused.config.layers - 1
fused.params[f"b{last}.e0"][...] = -0.5
fused.params[f"b{last}.e1"][...] = +0.5
logits, cache = fused.forward(tokens)
inj = cache["blocks"][last]["inj"]
rosa = cache["blocks"][last]["rosa"]["out"]

resolved = float(rosa.mask.mean())
print(f"fraction of (t, route) slots with a resolved destination: {resolved:.2f}")
print(f"injection RMS after separating the levels: {np.sqrt((inj ** 2).mean()):.3f}")
print()
print("The injection is masked per route: slots whose retrieval failed")
print("contribute exactly zero, so unresolved history never adds noise.")
unresolved_rows = rosa.mask[..., :].sum(-1) == 0
print(f"rows with no resolved route: {int(unresolved_rows.sum())}; "
      f"their injection norm: {np.abs(inj[unresolved_rows]).max():.1f}")
