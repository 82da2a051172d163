"""Scratch: size the desk-scale recipe for the trend/ablation criteria."""
import json
import time
from pathlib import Path

import numpy as np

from imrilab import kspace, metrics, simdata, training
from imrilab.network import ModelConfig

root = Path("/tmp/exp1")
root.mkdir(exist_ok=True)
t0 = time.perf_counter()
ds = simdata.DatasetConfig(
    size=32, n_frames=5, counts={"train": 200, "val": 10, "test": 16},
    seed=1000, spoke_counts=(4, 8, 32),
)
if not (root / "ds" / "manifest.json").exists():
    simdata.build_dataset(ds, root / "ds")
print(f"dataset: {time.perf_counter()-t0:.1f}s", flush=True)

model_cfg = ModelConfig(channels=16, n_blocks=2, cnn_per_block=2, lstm_per_cnn=1)
base = dict(steps=600, seed=7, n_frames=5, spoke_counts=(8, 4, 32), model=model_cfg,
            early_stop_window=0)

runs = {
    "full": training.TrainConfig(**base),
    "masked": training.TrainConfig(**{**base, "mask_lstm": True}),
    "noinit": training.TrainConfig(**{**base, "use_initializer": False}),
}
for name, cfg in runs.items():
    t0 = time.perf_counter()
    s = training.train(root / "ds", cfg, root / name)
    print(f"{name}: {s['steps_run']} steps in {time.perf_counter()-t0:.1f}s final={s['final_loss']:.3f}", flush=True)

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

for spokes in (4, 8, 32):
    nm, ss = eval_run("full", spokes)
    print(f"full @ {spokes} spokes: NMSE={nm:.4f} SSIM={ss:.4f}", flush=True)
nm_m, ss_m = eval_run("masked", 8, mask=True)
print(f"masked @ 8: NMSE={nm_m:.4f} SSIM={ss_m:.4f}", flush=True)
nm_n, ss_n = eval_run("noinit", 8, use_init=False)
print(f"noinit @ 8: NMSE={nm_n:.4f} SSIM={ss_n:.4f}", flush=True)
