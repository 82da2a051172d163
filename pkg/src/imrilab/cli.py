"""Command-line surface: simulate | train | reconstruct | evaluate | gradcheck.

Every command validates its whole configuration before doing any work and is
deterministic given config + seed.  Exit codes: 0 success, 1 validation
error, 2 runtime failure.  A copy of the resolved configuration is written
into every output directory for provenance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baseline, checks, kspace, metrics, simdata, training
from .network import ModelConfig
from .simdata import DatasetConfig, SimDataError
from .training import LossWeights, TrainConfig, TrainingError

THREADS_ENV = "IMRILAB_THREADS"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    methods: tuple = ("convlr",)
    spoke_counts: tuple = (8,)
    frame_counts: tuple = (5,)
    split: str = "test"
    grasp: baseline.GraspConfig = field(default_factory=baseline.GraspConfig)

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {self.split!r}")
        self.methods = tuple(self.methods)
        self.spoke_counts = tuple(int(s) for s in self.spoke_counts)
        self.frame_counts = tuple(int(f) for f in self.frame_counts)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    model: ModelConfig
    training: TrainConfig
    evaluation: EvalConfig
    format_version: int = 1

    def resolved(self):
        return {
            "format_version": self.format_version,
            "dataset": simdata._config_echo(self.dataset),
            "model": self.model.to_json(),
            "training": self.training.to_json(),
            "evaluation": {
                "methods": list(self.evaluation.methods),
                "spoke_counts": list(self.evaluation.spoke_counts),
                "frame_counts": list(self.evaluation.frame_counts),
                "split": self.evaluation.split,
                "grasp": self.evaluation.grasp.__dict__,
            },
        }


def _take(section, obj, known):
    unknown = set(obj) - set(known)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    return {k: obj[k] for k in obj}


def load_config(path, seed_override=None):
    """Parse and fully validate an experiment configuration file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be an object")
    version = raw.get("format_version", 1)
    if version != 1:
        raise ConfigError(f"unsupported format_version {version}")
    known = {"format_version", "dataset", "model", "training", "evaluation"}
    _take("config", raw, known)

    try:
        ds_kwargs = _take("dataset", raw.get("dataset", {}), DatasetConfig.__dataclass_fields__)
        if seed_override is not None:
            ds_kwargs["seed"] = int(seed_override)
        dataset = DatasetConfig(**ds_kwargs)

        model = ModelConfig(**_take("model", raw.get("model", {}), ModelConfig.__dataclass_fields__))

        tr_raw = dict(raw.get("training", {}))
        weights = LossWeights(**_take("training.weights", tr_raw.pop("weights", {}), LossWeights.__dataclass_fields__))
        tr_kwargs = _take("training", tr_raw, set(TrainConfig.__dataclass_fields__) - {"weights", "model"})
        if seed_override is not None:
            tr_kwargs["seed"] = int(seed_override)
        train_cfg = TrainConfig(weights=weights, model=model, **tr_kwargs)

        ev_raw = dict(raw.get("evaluation", {}))
        grasp = baseline.GraspConfig(
            **_take("evaluation.grasp", ev_raw.pop("grasp", {}), baseline.GraspConfig.__dataclass_fields__)
        )
        ev_kwargs = _take("evaluation", ev_raw, set(EvalConfig.__dataclass_fields__) - {"grasp"})
        evaluation = EvalConfig(grasp=grasp, **ev_kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc))

    # cross-references must resolve before any work starts
    for s in train_cfg.spoke_counts:
        if s not in dataset.spoke_counts:
            raise ConfigError(f"training spoke count {s} absent from dataset {dataset.spoke_counts}")
    if train_cfg.n_frames > dataset.n_frames:
        raise ConfigError(f"training n_frames {train_cfg.n_frames} > dataset n_frames {dataset.n_frames}")
    for s in evaluation.spoke_counts:
        if s not in dataset.spoke_counts:
            raise ConfigError(f"evaluation spoke count {s} absent from dataset {dataset.spoke_counts}")
    for f in evaluation.frame_counts:
        if f < 1 or f > dataset.n_frames:
            raise ConfigError(f"evaluation frame count {f} outside 1..{dataset.n_frames}")
    for m in evaluation.methods:
        if m not in ("convlr", "grasp", "regrid"):
            raise ConfigError(f"unknown evaluation method {m!r}")
    return ExperimentConfig(dataset, model, train_cfg, evaluation, version)


def _write_resolved(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config_resolved.json", "w") as fh:
        json.dump(cfg.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_threads(value):
    if value is not None:
        n = int(value)
    else:
        n = int(os.environ.get(THREADS_ENV, "1"))
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    cfg = load_config(args.config, args.seed)
    _write_resolved(cfg, args.out)
    manifest = simdata.build_dataset(cfg.dataset, args.out)
    counts = manifest["counts"]
    print(
        f"dataset written to {args.out}: "
        f"{counts['train']} train / {counts['val']} val / {counts['test']} test sequences, "
        f"{cfg.dataset.n_frames} frames at {cfg.dataset.size}px, "
        f"spoke counts {list(cfg.dataset.spoke_counts)}"
    )
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config, args.seed)
    train_cfg = cfg.training
    if args.mask_lstm:
        train_cfg.mask_lstm = True
    if args.no_discriminator:
        train_cfg.use_discriminator = False
    if args.no_initializer:
        train_cfg.use_initializer = False
    if not Path(args.dataset, "manifest.json").exists():
        raise ConfigError(f"no dataset manifest under {args.dataset}")
    _write_resolved(cfg, args.out)
    summary = training.train(args.dataset, train_cfg, args.out)
    print(
        f"trained {summary['steps_run']} steps"
        + (f" (early stop at {summary['early_stopped_at']})" if summary["early_stopped_at"] is not None else "")
        + f"; final loss {summary['final_loss']:.4f}; checkpoint {summary['checkpoint']}"
    )
    return EXIT_OK


def _reconstruct_sequence(method, entry, dataset_dir, out_dir, n_spokes, n_frames, model, grasp_cfg):
    ref, _frames = simdata.load_sequence_images(dataset_dir, entry, n_frames)
    y_frames = simdata.load_sequence_kspace(dataset_dir, entry, n_spokes, n_frames)
    shape = ref.shape
    t0 = time.perf_counter()
    if method == "convlr":
        recs = model.reconstruct(y_frames, ref)
    elif method == "grasp":
        frames, _trace = baseline.grasp_reconstruct(y_frames, grasp_cfg, shape=shape)
        recs = list(frames)
    elif method == "regrid":
        recs = [kspace.regrid_reconstruct(y, shape=shape) for y in y_frames]
    else:
        raise ConfigError(f"unknown method {method!r}")
    elapsed = time.perf_counter() - t0
    seq_out = Path(out_dir) / entry["name"]
    seq_out.mkdir(parents=True, exist_ok=True)
    for t, rec in enumerate(recs):
        simdata.save_image(seq_out / f"frame_{t:03d}.img", rec)
    return {
        "sequence": entry["name"],
        "seconds_total": elapsed,
        "seconds_per_frame": elapsed / max(len(recs), 1),
    }


def cmd_reconstruct(args):
    cfg = load_config(args.config, args.seed)
    method = args.method
    model = None
    if method == "convlr":
        if not args.checkpoint:
            raise ConfigError("--method convlr needs --checkpoint")
        if not Path(args.checkpoint).exists():
            raise ConfigError(f"checkpoint not found: {args.checkpoint}")
        model, _sidecar = training.load_model(args.checkpoint)
    manifest_path = Path(args.dataset, "manifest.json")
    if not manifest_path.exists():
        raise ConfigError(f"no dataset manifest under {args.dataset}")
    manifest = simdata.load_manifest(args.dataset)
    ds_spokes = tuple(manifest["config"]["spoke_counts"])
    n_spokes = args.spokes if args.spokes else cfg.evaluation.spoke_counts[0]
    if n_spokes not in ds_spokes:
        raise ConfigError(f"spoke count {n_spokes} absent from dataset {ds_spokes}")
    n_frames = args.frames if args.frames else cfg.training.n_frames
    if n_frames > int(manifest["config"]["n_frames"]):
        raise ConfigError(f"frame count {n_frames} exceeds dataset frames")
    split = args.split
    entries = list(simdata.sequence_entries(manifest, split))
    if not entries:
        raise ConfigError(f"split {split!r} is empty")

    _write_resolved(cfg, args.out)
    threads = _resolve_threads(args.threads)
    grasp_cfg = cfg.evaluation.grasp
    work = [
        (method, e, args.dataset, args.out, n_spokes, n_frames, model, grasp_cfg) for e in entries
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            timings = list(pool.map(lambda a: _reconstruct_sequence(*a), work))
    else:
        timings = [_reconstruct_sequence(*a) for a in work]

    meta = {
        "method": method,
        "spokes": int(n_spokes),
        "frames": int(n_frames),
        "split": split,
        "checkpoint": args.checkpoint,
        "dataset": str(args.dataset),
    }
    with open(Path(args.out) / "recon_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(Path(args.out) / "timing.jsonl", "w") as fh:
        for record in sorted(timings, key=lambda r: r["sequence"]):
            fh.write(json.dumps(record) + "\n")
    per_frame = float(np.mean([t["seconds_per_frame"] for t in timings]))
    print(
        f"{method} reconstructions for {len(entries)} sequences ({split}) at {n_spokes} spokes, "
        f"{n_frames} frames -> {args.out} ({per_frame * 1e3:.1f} ms/frame)"
    )
    return EXIT_OK


def cmd_evaluate(args):
    if not Path(args.dataset, "manifest.json").exists():
        raise ConfigError(f"no dataset manifest under {args.dataset}")
    manifest = simdata.load_manifest(args.dataset)
    by_name = {e["name"]: e for e in manifest["sequences"]}
    records = []
    for recon_dir in args.recon_dirs:
        meta_path = Path(recon_dir) / "recon_meta.json"
        if not meta_path.exists():
            raise ConfigError(f"{recon_dir}: missing recon_meta.json")
        with open(meta_path) as fh:
            meta = json.load(fh)
        n_frames = int(meta["frames"])
        seq_dirs = sorted(p for p in Path(recon_dir).iterdir() if p.is_dir())
        if not seq_dirs:
            raise ConfigError(f"{recon_dir}: no reconstructed sequences")
        for seq_dir in seq_dirs:
            entry = by_name.get(seq_dir.name)
            if entry is None:
                raise ConfigError(f"{seq_dir.name}: not present in the dataset manifest")
            _ref, gts = simdata.load_sequence_images(args.dataset, entry, n_frames)
            roi = tuple(entry["roi"])
            for t in range(n_frames):
                rec = simdata.load_image(seq_dir / f"frame_{t:03d}.img")
                row = metrics.frame_metrics(rec, gts[t], roi)
                row.update(
                    {
                        "method": meta["method"],
                        "spokes": int(meta["spokes"]),
                        "frames": n_frames,
                        "sequence": seq_dir.name,
                        "frame": t,
                    }
                )
                records.append(row)
    report = metrics.aggregate_report(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")
    with open(out / "frames.json", "w") as fh:
        json.dump(sorted(records, key=lambda r: (r["method"], r["spokes"], r["sequence"], r["frame"])),
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"evaluated {len(records)} frames -> {out / 'report.csv'}")
    for cell in report.cells:
        if cell.metric in ("nmse", "ssim"):
            print(
                f"  {cell.method:8s} spokes={cell.spokes:3d} frames={cell.frames} "
                f"{cell.metric}: {cell.mean:.4f} +/- {cell.std:.4f}"
            )
    return EXIT_OK


def cmd_gradcheck(args):
    ok, results = checks.run_suite(corrupt=args.self_test_corrupt)
    for name, passed, res in results:
        status = "PASS" if passed else "FAIL"
        print(
            f"{status} {name:28s} max_rel={res.max_rel_error:.3e} "
            f"worst={res.worst_leaf}[{res.worst_index}] "
            f"analytic={res.worst_analytic:.6e} numeric={res.worst_numeric:.6e}"
        )
    if not ok:
        print("gradient checks FAILED")
        return EXIT_RUNTIME
    print(f"all {len(results)} gradient checks passed (tolerance {checks.TOLERANCE:g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="imrilab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, out=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config JSON")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the recurrent reconstructor")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--mask-lstm", action="store_true", help="zero the conv-LSTM outputs (ablation)")
    p.add_argument("--no-discriminator", action="store_true", help="drop the adversarial term")
    p.add_argument("--no-initializer", action="store_true", help="start from all-zero states")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct a dataset split")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--method", default="convlr", choices=("convlr", "grasp", "regrid"))
    p.add_argument("--checkpoint", default=None, help="model checkpoint (convlr)")
    p.add_argument("--spokes", type=int, default=None, help="spoke count to reconstruct from")
    p.add_argument("--frames", type=int, default=None, help="frames per sequence")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    p.add_argument("recon_dirs", nargs="+", help="reconstruction directories")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference verification of every op")
    p.add_argument("--self-test-corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, SimDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, baseline.BaselineError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
