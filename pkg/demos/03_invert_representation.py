"""Reconstruct an image from nothing but its fc2 representation.

Starts from gray noise and runs momentum gradient descent on a normalized
representation-matching objective with range and total-variation
regularizers.  The reconstruction matches the 64-dimensional code, not the
3072-pixel image, so it shows what information the layer keeps.
"""

import pathlib

import numpy as np

import featadv as fa

here = pathlib.Path(__file__).parent

net = fa.init_network(fa.refnet32(), seed=7, scheme="orthonormal")
corpus = fa.generate_corpus(0)
image = corpus.images[0]
target = fa.representation(net, image, "fc2")

config = fa.InversionConfig(layer="fc2", iterations=600, seed=1)
trajectory = []
recon = fa.invert_representation(net, target, config, trajectory=trajectory)

print("iteration   normalized objective")
for it, obj in trajectory[:: max(1, len(trajectory) // 10)]:
    print(f"{it:9d}   {obj:.6f}")

recon_rep = fa.representation(net, recon, "fc2")
rel = np.linalg.norm(recon_rep - target) / np.linalg.norm(target)
pix = np.abs(recon - image).mean()
print(f"\nrepresentation relative error: {rel:.4f}")
print(f"mean absolute pixel difference from the original: {pix:.1f} "
      "(large is expected: the map is many-to-one)")

fa.save_ppm(image, here / "original.ppm")
fa.save_ppm(recon, here / "reconstruction.ppm")
print(f"wrote {here / 'original.ppm'} and {here / 'reconstruction.ppm'}")
