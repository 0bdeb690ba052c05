"""A hand-sized tour of the retrieval engine.

Builds a single-route symbol stream you can check on paper, then shows the
three ideas the engine composes: run-length folding of the key stream, the
longest-matched-suffix cursor, and the successor-position destination (the
time step right after the most recent occurrence of what just matched).
"""

import numpy as np

from rosa import batch_retrieve

# One batch, one route, M = 2 (alphabet {0, 1, 2, 3}).
# Key stream:   3 3 1 2 1 2 0 ...   folds to runs 3 | 1 | 2 | 1 | 2 | 0
# Query stream: mirrors the keys so the demo matches the "self-addressing"
# regime the model uses at query time.
keys = np.array([[3, 3, 1, 2, 1, 2, 0, 1, 2, 1]])
queries = np.array([[3, 3, 1, 2, 1, 2, 1, 1, 2, 1]])

out = batch_retrieve(queries[..., None], keys[..., None], 2)

print("t   key  query  tau  meaning")
for t in range(keys.shape[1]):
    tau = int(out.tau[0, t, 0])
    if tau < 0:
        note = "no earlier completed match"
    else:
        note = f"successor of the most recent match ends here -> value at t={tau}"
    print(f"{t:<3} {keys[0, t]:<4} {queries[0, t]:<6} {tau:<4} {note}")

print()
print("Runs are folded: repeating a key symbol (t=0,1) extends a run instead")
print("of adding a state, so the match is over run symbols, not raw steps.")
print()

# Counterfactual tables: what tau WOULD be had one query bit been forced.
t = 5
print(f"counterfactual destinations at t={t} (bit j forced to u):")
for j in range(2):
    for u in (0, 1):
        print(f"  bit {j} -> {u}: tau = {int(out.tau_cf[0, t, 0, j, u])}")
print("the entry at the actual bit always reproduces tau itself:",
      int(out.tau[0, t, 0]))
