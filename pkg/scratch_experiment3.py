"""Scratch: validate the exact acceptance recipe end to end."""
import time
from pathlib import Path

import numpy as np

from imrilab import baseline, kspace, metrics, simdata, training
from imrilab.network import ModelConfig

root = Path("/tmp/exp3")
root.mkdir(exist_ok=True)

t0 = time.perf_counter()
ds_cfg = simdata.DatasetConfig(
    size=32, n_frames=5, counts={"train": 200, "val": 8, "test": 16},
    seed=42000, spoke_counts=(4, 8, 32),
)
if not (root / "ds" / "manifest.json").exists():
    simdata.build_dataset(ds_cfg, root / "ds")
print(f"dataset: {time.perf_counter()-t0:.1f}s", flush=True)

model_cfg = ModelConfig(channels=16, n_blocks=2, cnn_per_block=2, lstm_per_cnn=1)

def mk(steps, spokes, **kw):
    return training.TrainConfig(
        steps=steps, seed=11, n_frames=5, spoke_counts=(spokes,), model=model_cfg,
        early_stop_window=0, lr_generator=5e-4, lr_discriminator=2e-4, **kw)

runs = {
    "s4": mk(500, 4),
    "s8": mk(700, 8),
    "s32": mk(500, 32),
    "masked8": mk(700, 8, mask_lstm=True),
    "noinit8": mk(700, 8, use_initializer=False),
}
for name, cfg in runs.items():
    if (root / name / "final.ckpt").exists():
        continue
    t0 = time.perf_counter()
    s = training.train(root / "ds", cfg, root / name)
    print(f"{name}: {s['steps_run']} steps in {time.perf_counter()-t0:.1f}s", flush=True)

man = simdata.load_manifest(root / "ds")
entries = list(simdata.sequence_entries(man, "test"))

def eval_run(name, spokes, mask=False, use_init=True):
    model, _ = training.load_model(root / name / "final.ckpt")
    nm, ss = [], []
    for e in entries:
        ref, frames = simdata.load_sequence_images(root / "ds", e, 5)
        ys = simdata.load_sequence_kspace(root / "ds", e, spokes, 5)
        recs = model.reconstruct(ys, ref, mask_lstm=mask, use_initializer=use_init)
        for rec, gt in zip(recs, frames):
            rm, gm = metrics.magnitude_pair(rec, gt)
            nm.append(metrics.nmse(rm, gm))
            ss.append(metrics.ssim(rm, gm))
    return float(np.mean(nm)), float(np.mean(ss))

res = {}
for name, spokes, kw in (
    ("s4", 4, {}), ("s8", 8, {}), ("s32", 32, {}),
    ("masked8", 8, {"mask": True}), ("noinit8", 8, {"use_init": False}),
):
    res[name] = eval_run(name, spokes, **kw)
    print(f"{name}: NMSE={res[name][0]:.4f} SSIM={res[name][1]:.4f}", flush=True)

print("trend ok:", res["s32"][0] < res["s8"][0] < res["s4"][0], flush=True)
print("mask ok:", res["s8"][0] < res["masked8"][0], flush=True)
print("init ok:", res["s8"][1] >= res["noinit8"][1], flush=True)

# criterion 5: GRASP at lambda=0 full Nyquist + CG oracle
import oracles_path_setup  # noqa: F401  (adds tests/ to path)
t0 = time.perf_counter()
size = 32
ph = simdata.generate_reference_phantom(77, size)
ny = kspace.nyquist_spokes(size)
frames = []
for t in range(3):
    traj = kspace.golden_angle_trajectory(ny, 2 * size, start_index=t * ny)
    frames.append(kspace.nudft_forward(ph, traj))
cfg0 = baseline.GraspConfig(lam=0.0, n_iter=200)
recs, trace = baseline.grasp_reconstruct(frames, cfg0, shape=(size, size))
import sys
sys.path.insert(0, "tests")
import oracles
nm_ista = [metrics.nmse(np.abs(r), np.abs(ph)) for r in recs]
nm_cg = []
for d in frames:
    op = kspace.get_operator(d.trajectory, (size, size))
    xcg = oracles.cg_least_squares(op, d.samples, 200)
    nm_cg.append(metrics.nmse(np.abs(xcg), np.abs(ph)))
print(f"grasp lam=0: ista NMSE={nm_ista} cg NMSE={nm_cg} ({time.perf_counter()-t0:.1f}s)", flush=True)
print("monotone trace:", all(b <= a + 1e-12 for a, b in zip(trace, trace[1:])), flush=True)
