"""Cross-window recall: retrieval-augmented vs window-only vs global.

Trains the three model variants on the synthetic key-value recall task at
smoke scale (a few minutes on one CPU core) and prints their validation
curves. The interesting shape: the window-only model *cannot* solve the
task (every answer lies outside its attention window), the global model
learns slowly, and the retrieval-augmented window model decodes almost
immediately because its suffix-automaton lookup spans the whole sequence.

Run with --full-scale for the full-size configuration (about an hour).
"""

import argparse

from rosa import ModelConfig, MqarConfig, run_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--full-scale", action="store_true")
parser.add_argument("--epochs", type=int, default=10)
args = parser.parse_args()

if args.full_scale:
    dim, seq_len, window, pairs, vocab = 128, 512, 32, 32, 64
else:
    dim, seq_len, window, pairs, vocab = 64, 128, 16, 8, 24

task = MqarConfig(
    seq_len=seq_len, num_pairs=pairs, key_vocab=vocab, value_vocab=vocab,
    num_sequences=576, seed=0,
)
common = dict(dim=dim, vocab=task.vocab, window=window, route_bits=4, seed=0)

curves = {}
for label, mode in [("retrieval", "post_attn"), ("window-only", "window_only"), ("global", "global")]:
    print(f"--- training {label} ({mode}) ---")
    metrics = run_experiment(
        ModelConfig(mode=mode, **common),
        task,
        epochs=args.epochs,
        log=lambda rec: print(f"  epoch {rec['epoch']}: loss {rec['loss']:.3f} "
                              f"val acc {rec['val_acc']:.1f}%"),
    )
    curves[label] = [m.val_acc for m in metrics]

print()
print("epoch " + "".join(f"{label:>14}" for label in curves))
for e in range(max(len(c) for c in curves.values())):
    row = f"{e + 1:<6}"
    for label in curves:
        c = curves[label]
        row += f"{c[e]:>13.1f}%" if e < len(c) else " " * 14
    print(row)
print()
print("Answers sit outside the attention window by construction, so the")
print("window-only curve is the floor; retrieval turns the same windowed")
print("model into a near-perfect copier.")
