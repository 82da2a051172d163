# %% [markdown]
# # Compressed-sensing baseline: proximal gradient with temporal TV
#
# The classical comparison method reconstructs the whole frame sequence at
# once by minimizing data fidelity plus an l1 penalty on temporal
# differences (single-coil GRASP-style).  Backtracking keeps the objective
# monotone, and the temporal regularization pools the rotating spokes of
# neighbouring frames.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from imrilab import baseline, kspace, metrics, simdata

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# %%
size = 64
seq = simdata.generate_sequence(seed=23, size=size, n_frames=5)
y_frames = []
for t, frame in enumerate(seq.frames):
    traj = kspace.golden_angle_trajectory(8, 2 * size, start_index=t * 8)
    y_frames.append(kspace.nudft_forward(frame, traj))

# %% [markdown]
# Reconstruct with and without the temporal term.  Regridding of 8 spokes is
# heavily streaked; lam=0 is per-frame least squares; the tuned lam couples
# the frames and recovers most of the anatomy.

# %%
regrid = [kspace.regrid_reconstruct(y, shape=(size, size)) for y in y_frames]
recs_l0, _ = baseline.grasp_reconstruct(y_frames, baseline.GraspConfig(lam=0.0, n_iter=40), shape=(size, size))
recs, trace = baseline.grasp_reconstruct(y_frames, baseline.GraspConfig(lam=100.0, n_iter=40), shape=(size, size))

t = 2
rows = {
    "ground truth": seq.frames[t],
    "regridding": regrid[t],
    "lam = 0": recs_l0[t],
    "temporal TV": recs[t],
}
fig, axes = plt.subplots(1, 4, figsize=(13, 3.4))
for ax, (title, img) in zip(axes, rows.items()):
    err = metrics.nmse(*metrics.magnitude_pair(img, seq.frames[t]))
    ax.imshow(np.abs(img), cmap="gray", vmin=0, vmax=1)
    ax.set_title(f"{title}\nNMSE {err:.3f}" if title != "ground truth" else title)
    ax.axis("off")
fig.tight_layout()
fig.savefig(out_dir / "03_grasp.png", dpi=120)
print("wrote", out_dir / "03_grasp.png")

# %% [markdown]
# The objective trace never increases: every step is accepted only if the
# backtracking line search found a descent step.

# %%
fig, ax = plt.subplots(figsize=(5, 3))
ax.semilogy(trace)
ax.set_xlabel("accepted step")
ax.set_ylabel("objective")
ax.set_title("monotone objective trace")
fig.tight_layout()
fig.savefig(out_dir / "03_trace.png", dpi=120)
print("wrote", out_dir / "03_trace.png")
print("non-increasing:", all(b <= a + 1e-12 for a, b in zip(trace, trace[1:])))
