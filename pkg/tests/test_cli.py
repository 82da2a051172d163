import json
import os

import numpy as np
import pytest

from imrilab import cli, simdata
from imrilab.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, load_config, main


def write_config(path, **overrides):
    cfg = {
        "format_version": 1,
        "dataset": {
            "size": 16,
            "n_frames": 3,
            "counts": {"train": 2, "val": 1, "test": 2},
            "seed": 300,
            "spoke_counts": [4, 8],
            "rotation_deg": 5.0,
            "shift_px": 1,
        },
        "model": {"channels": 4, "n_blocks": 1, "cnn_per_block": 1, "lstm_per_cnn": 1},
        "training": {
            "steps": 4,
            "seed": 2,
            "n_frames": 3,
            "spoke_counts": [4],
            "early_stop_window": 0,
        },
        "evaluation": {"methods": ["convlr", "grasp"], "spoke_counts": [4], "frame_counts": [3],
                       "grasp": {"lam": 1.0, "n_iter": 5}},
    }
    for key, value in overrides.items():
        section, _, field = key.partition(".")
        if field:
            cfg[section][field] = value
        else:
            cfg[section] = value
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


@pytest.fixture()
def config_path(tmp_path):
    return write_config(tmp_path / "config.json")


class TestConfigValidation:
    def test_valid_config_loads(self, config_path):
        cfg = load_config(config_path)
        assert cfg.dataset.size == 16
        assert cfg.training.spoke_counts == (4,)

    def test_unknown_keys_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.json")
        raw = json.loads(path.read_text())
        raw["dataset"]["bogus"] = 1
        path.write_text(json.dumps(raw))
        with pytest.raises(cli.ConfigError):
            load_config(path)

    def test_training_spokes_must_exist_in_dataset(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"training.spoke_counts": [16]})
        with pytest.raises(cli.ConfigError):
            load_config(path)

    def test_eval_frames_bounded_by_dataset(self, tmp_path):
        path = write_config(tmp_path / "c.json", **{"evaluation.frame_counts": [9]})
        with pytest.raises(cli.ConfigError):
            load_config(path)

    def test_missing_file_and_bad_json(self, tmp_path):
        with pytest.raises(cli.ConfigError):
            load_config(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(cli.ConfigError):
            load_config(bad)

    def test_seed_override(self, config_path):
        cfg = load_config(config_path, seed_override=777)
        assert cfg.dataset.seed == 777
        assert cfg.training.seed == 777

    def test_validation_exit_code(self, tmp_path, capsys):
        rc = main(["simulate", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "o")])
        assert rc == EXIT_VALIDATION
        assert "error:" in capsys.readouterr().err


class TestSimulate:
    def test_manifest_counts_match_config(self, tmp_path, config_path):
        out = tmp_path / "ds"
        assert main(["simulate", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
        manifest = simdata.load_manifest(out)
        assert manifest["counts"] == {"train": 2, "val": 1, "test": 2}
        assert (out / "config_resolved.json").exists()

    def test_rerun_is_bitwise_identical(self, tmp_path, config_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(config_path), "--out", str(out_a)])
        main(["simulate", "--config", str(config_path), "--out", str(out_b)])
        files = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
        for rel in files:
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel

    def test_spoke_counts_produce_one_file_each(self, tmp_path):
        config = write_config(tmp_path / "c.json", **{"dataset.spoke_counts": [4, 8, 16, 32],
                                                      "training.spoke_counts": [4],
                                                      "evaluation.spoke_counts": [4]})
        out = tmp_path / "ds"
        main(["simulate", "--config", str(config), "--out", str(out)])
        frame_files = list((out / "seq_train_0000").glob("frame_000_spokes*.ksp"))
        assert len(frame_files) == 4


def simulate_and_train(tmp_path, config_path, extra_train=()):
    ds = tmp_path / "ds"
    run = tmp_path / "run"
    assert main(["simulate", "--config", str(config_path), "--out", str(ds)]) == EXIT_OK
    rc = main(["train", "--config", str(config_path), "--dataset", str(ds), "--out", str(run), *extra_train])
    assert rc == EXIT_OK
    return ds, run


class TestTrainCommand:
    def test_writes_checkpoint_and_log(self, tmp_path, config_path):
        _ds, run = simulate_and_train(tmp_path, config_path)
        assert (run / "final.ckpt").exists()
        assert (run / "final.json").exists()
        assert (run / "metrics.jsonl").exists()

    def test_ablation_flags_accepted(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        rc = main([
            "train", "--config", str(config_path), "--dataset", str(ds),
            "--out", str(tmp_path / "ablate"), "--mask-lstm", "--no-discriminator", "--no-initializer",
        ])
        assert rc == EXIT_OK
        sidecar = json.loads((tmp_path / "ablate" / "final.json").read_text())
        assert sidecar["training"]["mask_lstm"] is True
        assert sidecar["training"]["use_discriminator"] is False
        assert sidecar["training"]["use_initializer"] is False

    def test_missing_dataset_is_validation_error(self, tmp_path, config_path):
        rc = main(["train", "--config", str(config_path), "--dataset", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "run")])
        assert rc == EXIT_VALIDATION


class TestReconstructCommand:
    def test_convlr_outputs_per_sequence_frames(self, tmp_path, config_path):
        ds, run = simulate_and_train(tmp_path, config_path)
        out = tmp_path / "recon"
        rc = main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
                   "--out", str(out), "--checkpoint", str(run / "final.ckpt"), "--spokes", "4"])
        assert rc == EXIT_OK
        seq_dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
        assert seq_dirs == ["seq_test_0000", "seq_test_0001"]
        frames = sorted(p.name for p in (out / "seq_test_0000").glob("frame_*.img"))
        assert frames == ["frame_000.img", "frame_001.img", "frame_002.img"]
        img = simdata.load_image(out / "seq_test_0000" / "frame_000.img")
        assert img.shape == (16, 16)
        meta = json.loads((out / "recon_meta.json").read_text())
        assert meta["method"] == "convlr"
        assert meta["spokes"] == 4
        assert (out / "timing.jsonl").exists()

    def test_grasp_method_dispatch(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        out = tmp_path / "recon_grasp"
        rc = main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
                   "--out", str(out), "--method", "grasp", "--spokes", "4"])
        assert rc == EXIT_OK
        assert (out / "seq_test_0001" / "frame_002.img").exists()

    def test_frames_option_truncates(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        out = tmp_path / "recon2"
        rc = main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
                   "--out", str(out), "--method", "regrid", "--spokes", "4", "--frames", "2"])
        assert rc == EXIT_OK
        frames = list((out / "seq_test_0000").glob("frame_*.img"))
        assert len(frames) == 2

    def test_threads_do_not_change_outputs(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        a, b = tmp_path / "r1", tmp_path / "r2"
        main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
              "--out", str(a), "--method", "regrid", "--spokes", "4"])
        main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
              "--out", str(b), "--method", "regrid", "--spokes", "4", "--threads", "4"])
        for rel in sorted(p.relative_to(a) for p in a.rglob("frame_*.img")):
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_unknown_spoke_count_rejected(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        rc = main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
                   "--out", str(tmp_path / "x"), "--method", "regrid", "--spokes", "64"])
        assert rc == EXIT_VALIDATION

    def test_convlr_requires_checkpoint(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        rc = main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
                   "--out", str(tmp_path / "x")])
        assert rc == EXIT_VALIDATION


class TestEvaluateCommand:
    def build_ground_truth_recon(self, ds, out, frames=3):
        out.mkdir(parents=True)
        manifest = simdata.load_manifest(ds)
        for entry in simdata.sequence_entries(manifest, "test"):
            seq_dir = out / entry["name"]
            seq_dir.mkdir()
            _, gts = simdata.load_sequence_images(ds, entry, frames)
            for t, img in enumerate(gts):
                simdata.save_image(seq_dir / f"frame_{t:03d}.img", img)
        with open(out / "recon_meta.json", "w") as fh:
            json.dump({"method": "oracle", "spokes": 4, "frames": frames, "split": "test"}, fh)

    def test_ground_truth_scores_perfectly(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        recon = tmp_path / "gt_recon"
        self.build_ground_truth_recon(ds, recon)
        out = tmp_path / "report"
        rc = main(["evaluate", str(recon), "--dataset", str(ds), "--out", str(out)])
        assert rc == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        cells = {c["metric"]: c for c in report["cells"] if c["method"] == "oracle"}
        assert cells["nmse"]["mean"] == 0.0
        assert cells["ssim"]["mean"] == pytest.approx(1.0, abs=1e-12)
        assert cells["local_nmse"]["mean"] == 0.0
        assert (out / "report.csv").exists()

    def test_multiple_methods_group_rows(self, tmp_path, config_path):
        ds, run = simulate_and_train(tmp_path, config_path)
        r1 = tmp_path / "m1"
        main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
              "--out", str(r1), "--method", "regrid", "--spokes", "4"])
        r2 = tmp_path / "m2"
        main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
              "--out", str(r2), "--method", "grasp", "--spokes", "8"])
        out = tmp_path / "report"
        rc = main(["evaluate", str(r1), str(r2), "--dataset", str(ds), "--out", str(out)])
        assert rc == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        methods = {(c["method"], c["spokes"]) for c in report["cells"]}
        assert ("regrid", 4) in methods
        assert ("grasp", 8) in methods

    def test_frame_sweep_report_shape(self, tmp_path, config_path):
        # frame-count sweep: separate reconstructions at 1/2/3 frames all
        # aggregate into distinct frame-count rows
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        recon_dirs = []
        for t in (1, 2, 3):
            out = tmp_path / f"sweep{t}"
            main(["reconstruct", "--config", str(config_path), "--dataset", str(ds),
                  "--out", str(out), "--method", "regrid", "--spokes", "4", "--frames", str(t)])
            recon_dirs.append(str(out))
        report_dir = tmp_path / "sweep_report"
        rc = main(["evaluate", *recon_dirs, "--dataset", str(ds), "--out", str(report_dir)])
        assert rc == EXIT_OK
        report = json.loads((report_dir / "report.json").read_text())
        frame_counts = {c["frames"] for c in report["cells"]}
        assert frame_counts == {1, 2, 3}

    def test_rerun_reports_bitwise_identical(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        recon = tmp_path / "rgt"
        self.build_ground_truth_recon(ds, recon)
        out_a, out_b = tmp_path / "ra", tmp_path / "rb"
        main(["evaluate", str(recon), "--dataset", str(ds), "--out", str(out_a)])
        main(["evaluate", str(recon), "--dataset", str(ds), "--out", str(out_b)])
        assert (out_a / "report.csv").read_bytes() == (out_b / "report.csv").read_bytes()
        assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()

    def test_missing_meta_is_validation_error(self, tmp_path, config_path):
        ds = tmp_path / "ds"
        main(["simulate", "--config", str(config_path), "--out", str(ds)])
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = main(["evaluate", str(empty), "--dataset", str(ds), "--out", str(tmp_path / "rep")])
        assert rc == EXIT_VALIDATION


class TestGradcheckCommand:
    def test_clean_build_passes(self, capsys):
        assert main(["gradcheck"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "PASS" in out
        assert "FAIL" not in out
        assert "worst=" in out  # worst-offender coordinates reported

    def test_sabotage_fixture_detected(self, capsys):
        assert main(["gradcheck", "--self-test-corrupt"]) == EXIT_RUNTIME
        out = capsys.readouterr().out
        assert "FAIL corrupted_backward_fixture" in out


class TestThreadsEnv:
    def test_env_var_default(self, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "3")
        assert cli._resolve_threads(None) == 3
        monkeypatch.delenv(cli.THREADS_ENV)
        assert cli._resolve_threads(None) == 1
        assert cli._resolve_threads(2) == 2
        with pytest.raises(cli.ConfigError):
            cli._resolve_threads(0)
