# The whole unsupervised pipeline on a small synthetic task.
#
#   1. two-way adversarial training: W maps source -> target, Z maps back
#   2. mutual nearest neighbours under CSLS give a seed dictionary
#   3. Procrustes on that dictionary, in both directions
#
# No translation pairs are used until the final evaluation. This uses small
# discriminators and a few epochs so it finishes in about a minute; seed 0
# needs three restarts before one lands in the right basin.

import logging

from lexalign import CSLS, InnerProduct, TrainerConfig, generate_synthetic_pair, precision_at_k, refine, refine_inverse, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

pair = generate_synthetic_pair(seed=0, n=2000, d=16, noise_sigma=0.01, clusters=30, cluster_spread=0.1)
gold = pair.ground_truth_dictionary

config = TrainerConfig(hidden_dim=128, epochs=4, steps_per_epoch=1000, criterion_k=2000, restarts=4, seed=0)
state = train(config, pair.source, pair.target)
print("criterion of each restart:", [round(c, 4) for c in state.restart_criteria])
print("picked restart", state.restart, "epoch", state.best_epoch)

for metric in (InnerProduct, CSLS(10)):
    rep = precision_at_k(state.best_w, pair.source, pair.target, gold, metric)
    print(f"adversarial only, {metric.kind:5s} P@1 = {rep.p_at[1]:.2f}")

fwd = refine(state.best_w, pair.source, pair.target, CSLS(10), query_limit=1000)
inv = refine_inverse(state.best_z, pair.source, pair.target, CSLS(10), query_limit=1000)
print("induced dictionary sizes", fwd.dictionary_sizes, inv.dictionary_sizes)
print("refined W  P@1 = %.2f" % precision_at_k(fwd.w, pair.source, pair.target, gold).p_at[1])
print("refined Z  P@1 = %.2f" % precision_at_k(inv.w, pair.target, pair.source, gold.inverted()).p_at[1])
