"""Run the full statistics battery on one adversary.

Where does the adversarial representation live?  Distance ratios say how
close to the guide it got; rank percentiles and 3-NN overlap compare its
neighborhood with the guide's; the local PPCA model and angular consistency
test whether it sits on the guide class's representation manifold like a
real neighbor would; the sparsity report shows how little of the source's
active-unit set survives.
"""

import numpy as np

import featadv as fa

net = fa.init_network(fa.refnet32(), seed=7, scheme="orthonormal")
corpus = fa.generate_corpus(0)
source_id, guide_id = fa.sample_pairs(corpus, 1, seed=42)[0]
config = fa.AdvConfig(layer="fc2", delta=10.0, max_iterations=500)
result = fa.feature_opt(net, corpus.images[source_id],
                        corpus.images[guide_id], config)
alpha_rep = fa.representation(net, result.adversarial_image, "fc2")

index = fa.build_index(net, corpus, "fc2", "euclidean")
dist = fa.distance_ratios(index, alpha_rep, source_id, guide_id)
print("distance ratios")
print(f"  d(adv,guide)/d(source,guide) = {dist.r_guide:.4f}")
print(f"  d(adv,guide)/mean-NN-dist(guide class) = {dist.r_guide_nn:.4f}")
print(f"  d(adv,source)/mean-pair-dist(source class) = {dist.r_source:.4f}")

ranks = fa.rank_report(index, alpha_rep, guide_id)
print("\nrank statistics (0 = densest region of the guide's class)")
print(f"  adversary percentile {ranks.rank_alpha:.1f}, "
      f"guide percentile {ranks.rank_guide:.1f}, "
      f"difference {ranks.rank_diff:+.1f}")
print(f"  shared 3-NN ids with guide: {ranks.nn_intersection}/3")

cosine = fa.NeighborIndex("fc2", "cosine", index.reps, index.labels)
sets = fa.neighbor_sets(cosine, guide_id, seed=0)
ref = cosine.reps[list(sets.n_ref)]
guide_rep = cosine.reps[guide_id]
manifold = fa.ppca_delta_loglik(ref, guide_rep, alpha_rep,
                                cosine.reps[list(sets.n_c)],
                                cosine.reps[list(sets.n_f)])
print("\nlocal PPCA log-likelihood relative to the guide (0 = at the guide)")
print(f"  adversary       {manifold.delta_loglik_alpha:12.3f}")
print(f"  close neighbors {np.median(manifold.delta_loglik_nc):12.3f} (median)")
print(f"  far neighbors   {np.median(manifold.delta_loglik_nf):12.3f} (median)")

omega_alpha = fa.angular_consistency(alpha_rep, guide_rep, ref)
omega_far = np.median([fa.angular_consistency(cosine.reps[i], guide_rep, ref)
                       for i in sets.n_f])
print("\nangular consistency with the guide's reference directions")
print(f"  adversary {omega_alpha:.4f}   far neighbors {omega_far:.4f} (median)")

trace_s = fa.forward_trace(net, corpus.images[source_id])
trace_a = fa.forward_trace(net, result.adversarial_image)
sparsity = fa.sparsity_stats(trace_s, trace_a, ["relu2", "fc2"])
print("\nactive-unit overlap with the source")
for layer, (delta_s, iou) in sparsity.per_layer.items():
    print(f"  {layer}: intersection/union {iou:.1f}%  "
          f"active-count change {delta_s:+.1f}%")
