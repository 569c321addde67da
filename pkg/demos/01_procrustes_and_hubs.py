# Procrustes and hubs on a synthetic pair.
#
# If we already knew which source word goes with which target word, the best
# rotation between the two spaces has a closed form (an SVD). The second half
# looks at retrieval: plain inner product in high dimension produces "hubs",
# targets that are the nearest neighbour of many queries. CSLS penalises them.

import numpy as np

from lexalign import CSLS, InnerProduct, generate_synthetic_pair, hub_count, solve_procrustes

pair = generate_synthetic_pair(seed=3, n=3000, d=64, noise_sigma=0.01)
q = pair.ground_truth_rotation
s, t = pair.source.vectors, pair.target.vectors

# pair.target_index[i] is the target row holding the translation of source word i
aligned_t = t[pair.target_index]
w = solve_procrustes(s, aligned_t)
print("distance to true rotation  ", np.linalg.norm(w - q))
print("orthogonality of solution  ", np.linalg.norm(w.T @ w - np.eye(64)))

# with only 100 known pairs the estimate gets noticeably worse, with 20 it falls apart
w100 = solve_procrustes(s[:100], aligned_t[:100])
print("with 100 pairs             ", np.linalg.norm(w100 - q))
w20 = solve_procrustes(s[:20], aligned_t[:20])
print("with 20 pairs              ", np.linalg.norm(w20 - q))

# now a slightly wrong map and lots of noise, which is where hubs show up
noisy = generate_synthetic_pair(seed=4, n=3000, d=64, noise_sigma=0.3)
w_bad = noisy.ground_truth_rotation + 0.05 * np.random.default_rng(0).standard_normal((64, 64))
mapped = noisy.source.vectors @ w_bad.T
for metric in (InnerProduct, CSLS(10)):
    hubs = hub_count(mapped, noisy.target.vectors, threshold=5, metric=metric)
    print(f"{metric.kind:5s} targets retrieved by more than 5 queries: {hubs}")
