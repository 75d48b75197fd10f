"""
Scoring detections across domains
=================================

AP on a hand-made case, mean over unseen domains, and the distance
between embedding sets.
"""

import numpy as np

from pseudodomain.dataset import BoundingBox
from pseudodomain.metrics import Detection, average_precision, mmd2, mpc

# %%
# A hit at 0.9, a miss at 0.8, two objects to find.
gts = {"img": [BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)]}
dets = [
    Detection(BoundingBox(0, 0, 10, 10), "car", 0.9, "img"),
    Detection(BoundingBox(50, 50, 60, 60), "car", 0.8, "img"),
]
print("AP", average_precision(dets, gts))

# %%
# Mean over target domains, source left out.
per_domain = {"daytime-sunny": 0.62, "night-sunny": 0.35, "night-rainy": 0.15, "dusk-rainy": 0.32}
print("mPC", mpc(per_domain, exclude="daytime-sunny"))

# %%
# Squared MMD grows as one set drifts away from the other.
rng = np.random.default_rng(0)
S = rng.normal(size=(50, 4))
for shift in (0.0, 0.25, 0.5, 1.0):
    print(f"shift {shift:.2f}: {mmd2(S, S + shift, 0.5):.4f}")
