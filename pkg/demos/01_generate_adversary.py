"""Make one feature adversary and watch the optimization converge.

Picks a source and a guide from different corpus classes, then finds an
image within 10 gray levels of the source (per pixel) whose fc2
representation lands almost on the guide's.  Saves the three images as PPM
files next to this script.
"""

import pathlib

import numpy as np

import featadv as fa

here = pathlib.Path(__file__).parent

net = fa.init_network(fa.refnet32(), seed=7, scheme="orthonormal")
corpus = fa.generate_corpus(0)
(source_id, guide_id) = fa.sample_pairs(corpus, 1, seed=42)[0]
source = corpus.images[source_id]
guide = corpus.images[guide_id]
print(f"source #{source_id} (class {corpus.labels[source_id]})  "
      f"guide #{guide_id} (class {corpus.labels[guide_id]})")

config = fa.AdvConfig(layer="fc2", delta=10.0, max_iterations=500)
result = fa.feature_opt(net, source, guide, config)

print(f"\nterminated: {result.termination} "
      f"after {len(result.trajectory) - 1} iterations")
print("iteration   objective      distance ratio")
for it, obj, ratio in result.trajectory[:: max(1, len(result.trajectory) // 12)]:
    print(f"{it:9d}   {obj:12.5g}   {ratio:.6f}")
print(f"\nfinal ratio d(adv, guide) / d(source, guide) = "
      f"{result.final_ratio:.2e}")
print(f"max pixel change: {np.abs(result.perturbation).max():.2f} "
      f"(budget {config.delta})")

for name, img in [("source", source), ("guide", guide),
                  ("adversary", result.adversarial_image)]:
    path = here / f"{name}.ppm"
    fa.save_ppm(img, path)
    print(f"wrote {path}")
