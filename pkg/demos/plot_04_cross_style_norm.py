"""
Swapping feature statistics
===========================

Exchange per-channel mean and std between two feature maps, then measure
how far apart their channel covariances are.
"""

import numpy as np

from pseudodomain.csn import CsnPolicy, channel_stats, cml_loss, cross_style_swap, finite_diff_check, toy_backbone_forward

rng = np.random.default_rng(0)
F_day = rng.normal(0.8, 0.3, size=(4, 8, 8))
F_night = rng.normal(0.1, 0.05, size=(4, 8, 8))

# %%
# After the swap each map carries the other's statistics.
a, b = cross_style_swap(F_day, F_night)
print("night mu  ", np.round(channel_stats(F_night).mu, 3))
print("swapped mu", np.round(channel_stats(a).mu, 3))

# %%
# Covariance matching loss and a gradient check.
print("loss before swap", cml_loss(F_day, F_night).loss)
print("loss after swap ", cml_loss(a, b).loss)
print("max rel grad err", finite_diff_check(F_day[:, :3, :3], F_night[:, :3, :3]))

# %%
# The toy backbone with every site switched on.
batch = list(rng.random((4, 3, 32, 32)))
out = toy_backbone_forward(batch, weights_seed=0, policy=CsnPolicy(1.0, 2), pairing_seed=0)
for layer, losses in out.losses.items():
    print(f"layer {layer}: pairs {out.pairs[layer]}  losses {np.round(losses, 4)}")
