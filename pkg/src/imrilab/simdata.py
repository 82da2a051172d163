"""Synthetic interventional image sequences and dataset packaging.

A sequence is a fully sampled reference head phantom plus T frames in which a
hypointense needle-like feature advances along a fixed direction.  Sequences
are augmented with a shared rigid transform, encoded into undersampled radial
k-space, and written to a dataset directory with a JSON manifest.

Everything is a pure function of the configuration (seeds included): building
the same dataset twice produces bitwise-identical files.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kspace

_IMG_MAGIC = b"IMG1"


class SimDataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# image file format


def save_image(path, image):
    """Write a complex image as magic ``IMG1``, u32 w, u32 h, u32 pad, f64 re/im."""
    image = np.asarray(image, dtype=np.complex128)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(_IMG_MAGIC)
        fh.write(struct.pack("<III", w, h, 0))
        inter = np.empty(2 * image.size, dtype="<f8")
        inter[0::2] = image.real.ravel()
        inter[1::2] = image.imag.ravel()
        fh.write(inter.tobytes())


def load_image(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _IMG_MAGIC:
        raise SimDataError(f"{path}: bad magic {blob[:4]!r}")
    w, h, _ = struct.unpack_from("<III", blob, 4)
    inter = np.frombuffer(blob, dtype="<f8", offset=16)
    if inter.size != 2 * w * h:
        raise SimDataError(f"{path}: payload size mismatch")
    return (inter[0::2] + 1j * inter[1::2]).reshape(h, w)


# ---------------------------------------------------------------------------
# phantom


def _smooth3(image):
    # separable [1 2 1]/4 blur, edge-clamped; softens ellipse boundaries
    p = np.pad(image, 1, mode="edge")
    image = 0.25 * p[:-2, 1:-1] + 0.5 * p[1:-1, 1:-1] + 0.25 * p[2:, 1:-1]
    p = np.pad(image, ((0, 0), (1, 1)), mode="edge")
    return 0.25 * p[:, :-2] + 0.5 * p[:, 1:-1] + 0.25 * p[:, 2:]


def generate_reference_phantom(seed, size):
    """Deterministic ellipse-based head phantom with randomized structures.

    Magnitudes lie in [0, 1]; phase is zero.  Even sizes only.
    """
    if size % 2 != 0 or size < 8:
        raise SimDataError(f"phantom size must be even and >= 8, got {size}")
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size]
    # normalized [-1, 1] coordinates
    y = (ys - (size - 1) / 2.0) / (size / 2.0)
    x = (xs - (size - 1) / 2.0) / (size / 2.0)

    img = np.zeros((size, size))
    skull = (x / 0.92) ** 2 + (y / 0.95) ** 2 <= 1.0
    brain = (x / 0.82) ** 2 + (y / 0.86) ** 2 <= 1.0
    img[skull] = 0.9
    img[brain] = 0.42

    n_struct = int(rng.integers(4, 9))
    for _ in range(n_struct):
        cx = rng.uniform(-0.5, 0.5)
        cy = rng.uniform(-0.55, 0.55)
        ax = rng.uniform(0.08, 0.3)
        ay = rng.uniform(0.08, 0.3)
        theta = rng.uniform(0.0, np.pi)
        value = rng.uniform(0.1, 0.85)
        xr = (x - cx) * np.cos(theta) + (y - cy) * np.sin(theta)
        yr = -(x - cx) * np.sin(theta) + (y - cy) * np.cos(theta)
        inside = (xr / ax) ** 2 + (yr / ay) ** 2 <= 1.0
        img[inside & brain] = value

    img = np.clip(_smooth3(img), 0.0, 1.0)
    return img.astype(np.complex128)


# ---------------------------------------------------------------------------
# intervention rendering


@dataclass(frozen=True)
class InterventionParams:
    """Geometry of the inserted feature.

    ``entry`` is (row, col); ``direction`` a unit (drow, dcol) vector;
    ``tip_depth`` the per-frame insertion depth in pixels (non-decreasing);
    the feature multiplies covered pixels by ``intensity_scale``.
    """

    entry: tuple
    direction: tuple
    tip_depth: tuple
    width: float = 2.0
    intensity_scale: float = 0.15

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if not math.isclose(float(np.linalg.norm(d)), 1.0, rel_tol=1e-9, abs_tol=1e-9):
            raise SimDataError("direction must be a unit vector")
        depths = np.asarray(self.tip_depth, dtype=np.float64)
        if depths.size < 1 or np.any(np.diff(depths) < 0) or np.any(depths < 0):
            raise SimDataError("tip_depth must be non-negative and non-decreasing")
        if self.width < 1.0:
            raise SimDataError("feature width must be >= 1 pixel")
        if not (0.0 <= self.intensity_scale < 1.0):
            raise SimDataError("intensity_scale must lie in [0, 1)")

    @property
    def n_frames(self):
        return len(self.tip_depth)


def _segment_distance(shape, a, b):
    """Per-pixel distance to the segment from point ``a`` to ``b`` (row, col)."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ab = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    denom = float(ab @ ab)
    py = ys - a[0]
    px = xs - a[1]
    if denom == 0.0:
        t = np.zeros(shape)
    else:
        t = np.clip((py * ab[0] + px * ab[1]) / denom, 0.0, 1.0)
    dy = py - t * ab[0]
    dx = px - t * ab[1]
    return np.hypot(dy, dx)


def _feature_coverage(shape, params, depth):
    tip = (params.entry[0] + depth * params.direction[0], params.entry[1] + depth * params.direction[1])
    h, w = shape
    for point in (params.entry, tip):
        if not (0.0 <= point[0] <= h - 1 and 0.0 <= point[1] <= w - 1):
            raise SimDataError(f"feature segment exits image bounds at {point}")
    dist = _segment_distance(shape, params.entry, tip)
    return np.clip(params.width / 2.0 + 0.5 - dist, 0.0, 1.0)


def render_intervention_frame(ref, params, t):
    """Frame ``t``: the reference with the feature inserted to ``tip_depth[t]``.

    Covered pixels are scaled toward ``intensity_scale`` with a linearly
    anti-aliased 1-pixel edge; zero depth reproduces the reference exactly.
    Successive frames are causally nested (deeper tip covers a superset).
    """
    ref = np.asarray(ref, dtype=np.complex128)
    if t < 0 or t >= params.n_frames:
        raise SimDataError(f"frame index {t} outside 0..{params.n_frames - 1}")
    depth = float(params.tip_depth[t])
    if depth == 0.0:
        return ref.copy()
    alpha = _feature_coverage(ref.shape, params, depth)
    return ref * (1.0 - alpha * (1.0 - params.intensity_scale))


def feature_roi(shape, params, dilation=4):
    """Tight bounding box of the deepest feature footprint, dilated and clipped."""
    alpha = _feature_coverage(shape, params, float(params.tip_depth[-1]))
    rows, cols = np.nonzero(alpha > 0)
    if rows.size == 0:
        raise SimDataError("feature footprint is empty")
    h, w = shape
    r0 = max(int(rows.min()) - dilation, 0)
    c0 = max(int(cols.min()) - dilation, 0)
    r1 = min(int(rows.max()) + dilation + 1, h)
    c1 = min(int(cols.max()) + dilation + 1, w)
    return (r0, c0, r1, c1)


# ---------------------------------------------------------------------------
# sequences


@dataclass
class FrameSequence:
    """Reference image, T ground-truth frames, ROI box, and provenance."""

    reference: np.ndarray
    frames: list
    roi: tuple
    params: InterventionParams
    seed: int

    def __post_init__(self):
        for f in self.frames:
            if f.shape != self.reference.shape:
                raise SimDataError("all frames must share the reference dimensions")
        if len(self.frames) < 1:
            raise SimDataError("a sequence needs at least one frame")
        r0, c0, r1, c1 = self.roi
        h, w = self.reference.shape
        if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
            raise SimDataError(f"roi {self.roi} outside image bounds")

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.reference.shape


def generate_sequence(seed, size, n_frames, width_range=(1.5, 3.0), intensity_scale=0.15,
                      advance_range=(1.0, 3.0), roi_dilation=4):
    """Random phantom sequence: reference plus ``n_frames`` insertion frames.

    The per-frame tip advance is drawn uniformly from ``advance_range`` and
    accumulated, so the insertion depth is strictly increasing.
    """
    rng = np.random.default_rng([int(seed), 0])
    ref = generate_reference_phantom(int(rng.integers(0, 2**63 - 1)), size)
    increments = rng.uniform(advance_range[0], advance_range[1], size=n_frames)
    depths = np.cumsum(increments)
    width = float(rng.uniform(*width_range))
    margin = width / 2.0 + 2.0

    params = None
    for scale in (1.0, 0.75, 0.5, 0.35):
        d = depths * scale
        for _ in range(64):
            angle = rng.uniform(0.0, 2.0 * np.pi)
            direction = (math.cos(angle), math.sin(angle))
            # start the path so that its midpoint is near the head center
            center = (size - 1) / 2.0
            mid_jitter = rng.uniform(-size * 0.12, size * 0.12, size=2)
            half = d[-1] / 2.0
            entry = (
                center + mid_jitter[0] - half * direction[0],
                center + mid_jitter[1] - half * direction[1],
            )
            tip = (entry[0] + d[-1] * direction[0], entry[1] + d[-1] * direction[1])
            ok = all(
                margin <= p <= size - 1 - margin for point in (entry, tip) for p in point
            )
            if ok:
                params = InterventionParams(
                    entry=tuple(entry),
                    direction=direction,
                    tip_depth=tuple(float(v) for v in d),
                    width=width,
                    intensity_scale=intensity_scale,
                )
                break
        if params is not None:
            break
    if params is None:
        raise SimDataError(f"could not place a feature path inside a {size}px image")

    frames = [render_intervention_frame(ref, params, t) for t in range(n_frames)]
    roi = feature_roi(ref.shape, params, roi_dilation)
    return FrameSequence(ref, frames, roi, params, int(seed))


# ---------------------------------------------------------------------------
# augmentation


def _bilinear_sample(image, sy, sx):
    h, w = image.shape
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    wy = sy - y0
    wx = sx - x0
    out = np.zeros(sy.shape, dtype=np.complex128)
    for dy, dx, wgt in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.zeros(sy.shape, dtype=np.complex128)
        vals[valid] = image[yy[valid], xx[valid]]
        out += wgt * vals
    return out


def _rigid_warp(image, angle_deg, shift):
    """Rotate about the image center by ``angle_deg`` then shift; zero fill."""
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(angle_deg)
    ct, st = math.cos(th), math.sin(th)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    qy = ys - shift[0] - cy
    qx = xs - shift[1] - cx
    sy = ct * qy + st * qx + cy
    sx = -st * qy + ct * qx + cx
    return _bilinear_sample(image, sy, sx)


def _transformed_roi(reference_w, last_frame_w, shape, dilation=4):
    """ROI from the warped feature footprint, or None if it leaks off-frame.

    The warped difference image is single-signed (the feature only darkens
    tissue), so bilinear warping preserves footprint nesting across frames:
    the last frame's footprint bounds every earlier one.
    """
    diff = np.abs(last_frame_w - reference_w)
    rows, cols = np.nonzero(diff > 0)
    if rows.size == 0:
        return None
    h, w = shape
    if rows.min() == 0 or cols.min() == 0 or rows.max() == h - 1 or cols.max() == w - 1:
        return None  # feature content reaches the border: part of it left the frame
    return (
        max(int(rows.min()) - dilation, 0),
        max(int(cols.min()) - dilation, 0),
        min(int(rows.max()) + dilation + 1, h),
        min(int(cols.max()) + dilation + 1, w),
    )


def augment_sequence(seq, seed, rotation_deg=10.0, shift_px=4, max_retries=16):
    """Apply one shared rigid transform to reference, frames, and ROI box.

    The rotation is uniform in ``+/-rotation_deg`` and the shift an integer
    uniform in ``+/-shift_px`` per axis.  Transforms that push feature
    content off-frame are redrawn; after ``max_retries`` failures an error is
    raised.  Zero ranges reproduce the sequence exactly.
    """
    if rotation_deg == 0.0 and shift_px == 0:
        return FrameSequence(
            seq.reference.copy(), [f.copy() for f in seq.frames], seq.roi, seq.params, seq.seed
        )
    rng = np.random.default_rng([int(seed), 1])
    for _ in range(max_retries):
        angle = float(rng.uniform(-rotation_deg, rotation_deg))
        shift = (int(rng.integers(-shift_px, shift_px + 1)), int(rng.integers(-shift_px, shift_px + 1)))
        reference = _rigid_warp(seq.reference, angle, shift)
        last = _rigid_warp(seq.frames[-1], angle, shift)
        roi = _transformed_roi(reference, last, seq.shape)
        if roi is not None:
            break
    else:
        raise SimDataError(f"no valid augmentation found in {max_retries} draws")
    frames = [_rigid_warp(f, angle, shift) for f in seq.frames[:-1]] + [last]
    return FrameSequence(reference, frames, roi, seq.params, seq.seed)


# ---------------------------------------------------------------------------
# dataset construction


@dataclass
class DatasetConfig:
    size: int = 32
    n_frames: int = 5
    counts: dict = field(default_factory=lambda: {"train": 10, "val": 2, "test": 2})
    seed: int = 1000
    spoke_counts: tuple = (8,)
    n_readout: int = 0  # 0 -> 2 * size
    noise_std: float = 0.0
    augment: bool = True
    rotation_deg: float = 10.0
    shift_px: int = 4
    intensity_scale: float = 0.15
    spoke_continuation: bool = True
    split_seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.size % 2 != 0 or self.size < 8:
            raise SimDataError(f"image size must be even and >= 8, got {self.size}")
        if self.n_frames < 1:
            raise SimDataError("n_frames must be >= 1")
        if self.n_readout == 0:
            self.n_readout = 2 * self.size
        if self.n_readout % 2 != 0 or self.n_readout < 2:
            raise SimDataError("n_readout must be even and >= 2")
        for split in ("train", "val", "test"):
            if split not in self.counts:
                raise SimDataError(f"counts missing split {split!r}")
            if int(self.counts[split]) < 0:
                raise SimDataError("split counts must be >= 0")
        if not self.spoke_counts:
            raise SimDataError("need at least one spoke count")
        if any(int(s) < 1 for s in self.spoke_counts):
            raise SimDataError("spoke counts must be >= 1")
        if self.noise_std < 0:
            raise SimDataError("noise_std must be >= 0")
        self.spoke_counts = tuple(int(s) for s in self.spoke_counts)
        ranges = self.split_seed_ranges()
        spans = sorted(ranges.values())
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise SimDataError(f"overlapping split seed ranges {spans}")

    def split_seed_ranges(self):
        ranges = {}
        cursor = int(self.seed)
        for split in ("train", "val", "test"):
            count = int(self.counts[split])
            start = int(self.split_seeds.get(split, cursor))
            ranges[split] = (start, start + count)
            cursor = max(cursor, start + count)
        return ranges


def frame_trajectory(cfg_or_spokes, n_readout=None, t=0, continuation=True):
    """Trajectory of frame ``t``: continues the golden-angle counter when asked."""
    if isinstance(cfg_or_spokes, DatasetConfig):
        raise TypeError("pass the spoke count, not the config")
    n_spokes = int(cfg_or_spokes)
    start = t * n_spokes if continuation else 0
    return kspace.golden_angle_trajectory(n_spokes, int(n_readout), start_index=start)


def build_dataset(cfg, out_dir):
    """Generate and write the full dataset; returns the manifest dict.

    Layout: ``manifest.json`` plus one subdirectory per sequence holding the
    reference image, per-frame ground truth, and per-frame k-space at every
    configured spoke count.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ranges = cfg.split_seed_ranges()
    entries = []
    for split in ("train", "val", "test"):
        start, stop = ranges[split]
        for i, seq_seed in enumerate(range(start, stop)):
            seq = generate_sequence(
                seq_seed, cfg.size, cfg.n_frames, intensity_scale=cfg.intensity_scale
            )
            if cfg.augment:
                seq = augment_sequence(seq, seq_seed, cfg.rotation_deg, cfg.shift_px)
            name = f"seq_{split}_{i:04d}"
            seq_dir = out / name
            seq_dir.mkdir(exist_ok=True)
            save_image(seq_dir / "reference.img", seq.reference)
            for t, frame in enumerate(seq.frames):
                save_image(seq_dir / f"frame_{t:03d}.img", frame)
                for n_spokes in cfg.spoke_counts:
                    traj = frame_trajectory(
                        n_spokes, cfg.n_readout, t, cfg.spoke_continuation
                    )
                    data = kspace.nudft_forward(frame, traj)
                    if cfg.noise_std > 0:
                        noise_rng = np.random.default_rng([seq_seed, 2, t, n_spokes])
                        noisy = data.samples + kspace.complex_gaussian_noise(
                            noise_rng, data.samples.size, cfg.noise_std
                        )
                        data = kspace.KSpaceData(noisy, traj)
                    kspace.save_kspace(seq_dir / f"frame_{t:03d}_spokes{n_spokes:03d}.ksp", data)
            entries.append(
                {
                    "name": name,
                    "split": split,
                    "seed": seq_seed,
                    "roi": list(seq.roi),
                    "entry": list(seq.params.entry),
                    "direction": list(seq.params.direction),
                    "tip_depth": list(seq.params.tip_depth),
                    "width": seq.params.width,
                    "intensity_scale": seq.params.intensity_scale,
                }
            )
    manifest = {
        "format_version": 1,
        "config": _config_echo(cfg),
        "counts": {k: int(v) for k, v in cfg.counts.items()},
        "splits": {
            split: {"seed_start": ranges[split][0], "count": int(cfg.counts[split])}
            for split in ("train", "val", "test")
        },
        "sequences": entries,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _config_echo(cfg):
    echo = asdict(cfg)
    echo["spoke_counts"] = list(cfg.spoke_counts)
    return echo


def load_manifest(dataset_dir):
    with open(Path(dataset_dir) / "manifest.json") as fh:
        return json.load(fh)


def sequence_entries(manifest, split=None):
    for entry in manifest["sequences"]:
        if split is None or entry["split"] == split:
            yield entry


def load_sequence_images(dataset_dir, entry, n_frames=None):
    """Reference + ground-truth frames for one manifest entry."""
    seq_dir = Path(dataset_dir) / entry["name"]
    reference = load_image(seq_dir / "reference.img")
    total = len(entry["tip_depth"])
    n = total if n_frames is None else min(int(n_frames), total)
    frames = [load_image(seq_dir / f"frame_{t:03d}.img") for t in range(n)]
    return reference, frames


def load_sequence_kspace(dataset_dir, entry, n_spokes, n_frames=None):
    """Per-frame k-space for one manifest entry at one spoke count."""
    seq_dir = Path(dataset_dir) / entry["name"]
    total = len(entry["tip_depth"])
    n = total if n_frames is None else min(int(n_frames), total)
    return [
        kspace.load_kspace(seq_dir / f"frame_{t:03d}_spokes{int(n_spokes):03d}.ksp")
        for t in range(n)
    ]
