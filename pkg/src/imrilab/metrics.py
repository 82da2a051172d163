"""Image quality metrics (SSIM, PSNR, NMSE), ROI-local variants, reporting.

All metrics operate on magnitude images.  Reconstruction/ground-truth pairs
are jointly normalized by the ground-truth maximum (the same scale factor is
applied to both images) before evaluation; the normalization is recorded in
every report header.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

NORMALIZATION_NOTE = (
    "magnitude images, jointly scaled so the ground-truth maximum is 1; "
    "SSIM uses global image statistics with C1=0.01^2, C2=0.03^2; NMSE is the "
    "unsquared l2 ratio"
)


class MetricsError(ValueError):
    pass


def magnitude_pair(rec, gt):
    """Magnitudes of a reconstruction/ground-truth pair, jointly normalized."""
    rec_m = np.abs(np.asarray(rec))
    gt_m = np.abs(np.asarray(gt))
    if rec_m.shape != gt_m.shape:
        raise MetricsError(f"shape mismatch {rec_m.shape} vs {gt_m.shape}")
    peak = gt_m.max()
    if peak <= 0:
        raise MetricsError("ground truth is identically zero")
    return rec_m / peak, gt_m / peak


def ssim(rec, gt, c1=0.01**2, c2=0.03**2):
    """Structural similarity from global image statistics.

    Uses the whole-image mean, variance, and covariance (no sliding window):

        (2*mu_r*mu_g + C1)(2*cov + C2) / ((mu_r^2 + mu_g^2 + C1)(var_r + var_g + C2))
    """
    rec = np.asarray(rec, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rec.shape != gt.shape:
        raise MetricsError(f"shape mismatch {rec.shape} vs {gt.shape}")
    mu_r = rec.mean()
    mu_g = gt.mean()
    var_r = rec.var()
    var_g = gt.var()
    cov = ((rec - mu_r) * (gt - mu_g)).mean()
    num = (2.0 * mu_r * mu_g + c1) * (2.0 * cov + c2)
    den = (mu_r**2 + mu_g**2 + c1) * (var_r + var_g + c2)
    return float(num / den)


def ssim_windowed(rec, gt, window=8, c1=0.01**2, c2=0.03**2):
    """Mean of SSIM over non-overlapping square windows (off by default)."""
    rec = np.asarray(rec, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rec.shape != gt.shape:
        raise MetricsError(f"shape mismatch {rec.shape} vs {gt.shape}")
    h, w = rec.shape
    vals = []
    for r0 in range(0, h - window + 1, window):
        for c0 in range(0, w - window + 1, window):
            vals.append(
                ssim(rec[r0 : r0 + window, c0 : c0 + window], gt[r0 : r0 + window, c0 : c0 + window], c1, c2)
            )
    if not vals:
        return ssim(rec, gt, c1, c2)
    return float(np.mean(vals))


def psnr(rec, gt):
    """Peak signal-to-noise ratio in dB; ``inf`` marks a zero-error pair."""
    rec = np.asarray(rec, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rec.shape != gt.shape:
        raise MetricsError(f"shape mismatch {rec.shape} vs {gt.shape}")
    mse = float(np.mean((rec - gt) ** 2))
    if mse == 0.0:
        return math.inf
    peak = float(gt.max())
    return 10.0 * math.log10(peak**2 / mse)


def nmse(rec, gt, squared=False):
    """Normalized error ``||rec - gt||_2 / ||gt||_2`` (unsquared ratio).

    ``squared=True`` selects the squared variant some of the literature uses.
    """
    rec = np.asarray(rec, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rec.shape != gt.shape:
        raise MetricsError(f"shape mismatch {rec.shape} vs {gt.shape}")
    denom = float(np.linalg.norm(gt))
    if denom == 0.0:
        raise MetricsError("ground truth has zero norm")
    ratio = float(np.linalg.norm(rec - gt)) / denom
    return ratio**2 if squared else ratio


def crop_roi(image, roi):
    """Crop ``(row0, col0, row1, col1)`` (half-open) from an image."""
    r0, c0, r1, c1 = roi
    h, w = np.asarray(image).shape[-2:]
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise MetricsError(f"roi {roi} outside image {h}x{w}")
    return np.asarray(image)[..., r0:r1, c0:c1]


def local_metrics(rec, gt, roi):
    """(SSIM, NMSE) evaluated on the ROI crop only."""
    return ssim(crop_roi(rec, roi), crop_roi(gt, roi)), nmse(crop_roi(rec, roi), crop_roi(gt, roi))


def frame_metrics(rec, gt, roi=None):
    """All per-frame metrics for one complex reconstruction/ground-truth pair."""
    rec_m, gt_m = magnitude_pair(rec, gt)
    rec_out = {
        "ssim": ssim(rec_m, gt_m),
        "psnr": psnr(rec_m, gt_m),
        "nmse": nmse(rec_m, gt_m),
    }
    if roi is not None:
        rec_out["local_ssim"], rec_out["local_nmse"] = local_metrics(rec_m, gt_m, roi)
    return rec_out


METRIC_KEYS = ("ssim", "psnr", "nmse", "local_ssim", "local_nmse")


@dataclass
class ReportCell:
    method: str
    spokes: int
    frames: int
    metric: str
    mean: float
    std: float
    count: int


class MetricReport:
    """Mean +/- population std per (method, spoke count, frame count) cell."""

    def __init__(self, cells):
        self.cells = sorted(cells, key=lambda c: (c.spokes, c.method, c.frames, c.metric))

    def lookup(self, method, spokes, metric, frames=None):
        for c in self.cells:
            if c.method == method and c.spokes == spokes and c.metric == metric:
                if frames is None or c.frames == frames:
                    return c
        raise KeyError((method, spokes, metric, frames))

    def to_json(self):
        return {
            "normalization": NORMALIZATION_NOTE,
            "cells": [c.__dict__ for c in self.cells],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# normalization: {NORMALIZATION_NOTE}\n")
            writer = csv.writer(fh)
            writer.writerow(["method", "spokes", "frames", "metric", "mean", "std", "count"])
            for c in self.cells:
                writer.writerow(
                    [c.method, c.spokes, c.frames, c.metric, repr(c.mean), repr(c.std), c.count]
                )


def aggregate_report(records):
    """Aggregate per-frame metric records into a :class:`MetricReport`.

    Each record is a dict with keys ``method``, ``spokes``, ``frames`` and one
    or more metric values.  Aggregation uses the population mean/std.
    """
    records = list(records)
    if not records:
        raise MetricsError("no metric records to aggregate")
    groups = {}
    for rec in records:
        key = (rec["method"], int(rec["spokes"]), int(rec["frames"]))
        groups.setdefault(key, []).append(rec)
    cells = []
    for (method, spokes, frames), recs in groups.items():
        for metric in METRIC_KEYS:
            vals = [r[metric] for r in recs if metric in r]
            if not vals:
                continue
            arr = np.asarray(vals, dtype=np.float64)
            finite = arr[np.isfinite(arr)]
            if finite.size == 0:
                mean, std = math.inf, 0.0
            else:
                mean, std = float(np.mean(finite)), float(np.std(finite))
                if finite.size < arr.size:
                    mean = math.inf  # infinite PSNR dominates the cell mean
            cells.append(ReportCell(method, spokes, frames, metric, mean, std, len(vals)))
    return MetricReport(cells)


def save_pgm(path, image):
    """8-bit binary PGM export of a magnitude image for visual inspection."""
    mag = np.abs(np.asarray(image)).astype(np.float64)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    pixels = np.clip(np.round(mag * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
