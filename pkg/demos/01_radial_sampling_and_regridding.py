# %% [markdown]
# # Golden-angle radial sampling and regridding reconstruction
#
# This walk-through builds radial k-space trajectories, encodes a phantom
# with the exact non-uniform DFT, and reconstructs it by density-compensated
# adjoint regridding at several spoke counts.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from imrilab import kspace, metrics, simdata

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# %% [markdown]
# Consecutive spokes advance by the golden angle (about 111.25 degrees),
# which spreads any prefix of the sequence almost uniformly over the half
# circle.  A full Nyquist acquisition for an N-pixel image needs roughly
# pi/2 * N spokes.

# %%
size = 64
nyquist = kspace.nyquist_spokes(size)
print(f"golden angle increment: {kspace.GOLDEN_ANGLE_DEG:.4f} deg")
print(f"Nyquist spoke count for {size}px: {nyquist}")

traj = kspace.golden_angle_trajectory(16, n_readout=2 * size)
fig, ax = plt.subplots(figsize=(4, 4))
pts = traj.coords.reshape(16, -1, 2)
for s in range(16):
    ax.plot(pts[s, :, 0], pts[s, :, 1], lw=0.8)
ax.set_aspect("equal")
ax.set_title("16 golden-angle spokes")
ax.set_xlabel("kx (cycles/px)")
ax.set_ylabel("ky (cycles/px)")
fig.savefig(out_dir / "01_trajectory.png", dpi=120)
print("wrote", out_dir / "01_trajectory.png")

# %% [markdown]
# Encode a reference head phantom and regrid it back.  The ramp density
# compensation corrects the center-heavy radial sampling; with full Nyquist
# sampling the reconstruction error drops below a few percent.

# %%
phantom = simdata.generate_reference_phantom(seed=3, size=size)
fig, axes = plt.subplots(1, 5, figsize=(15, 3.2))
axes[0].imshow(np.abs(phantom), cmap="gray", vmin=0, vmax=1)
axes[0].set_title("ground truth")
for ax, n_spokes in zip(axes[1:], (4, 8, 32, nyquist)):
    t = kspace.golden_angle_trajectory(n_spokes, 2 * size)
    data = kspace.nudft_forward(phantom, t)
    recon = kspace.regrid_reconstruct(data, shape=(size, size))
    err = metrics.nmse(np.abs(recon), np.abs(phantom))
    ax.imshow(np.abs(recon), cmap="gray", vmin=0, vmax=1)
    ax.set_title(f"{n_spokes} spokes\nNMSE {err:.3f}")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(out_dir / "01_regridding.png", dpi=120)
print("wrote", out_dir / "01_regridding.png")

# %% [markdown]
# The operator pair is an exact adjoint, which the iterative methods and the
# network's data-consistency layer both rely on.

# %%
rng = np.random.default_rng(0)
t = kspace.golden_angle_trajectory(8, 32)
x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
y = rng.standard_normal(t.n_samples) + 1j * rng.standard_normal(t.n_samples)
lhs = np.vdot(y, kspace.nudft_forward(x, t).samples)
rhs = np.vdot(kspace.nudft_adjoint(y, t, shape=(16, 16)), x)
print(f"adjoint identity error: {abs(lhs - rhs):.3e}")
