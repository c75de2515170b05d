import json

import numpy as np
import pytest

from irseg import cli
from irseg.errors import ChannelMismatchError, ConfigError, MissingTruthError, TooFewFramesError
from irseg.features import FeatureConfig
from irseg.image import BACKGROUND, FIRE, SMOKE
from irseg.io import load_labelmap
from irseg.pipeline import (
    PipelineConfig,
    cmd_eval,
    cmd_overlay,
    cmd_segment,
    cmd_synth,
    cmd_train,
    config_from_dict,
    load_config,
)
from irseg.synthetic import BlobSpec, PlumeSpec, SceneSpec, write_scene


def tiny_scene(tmp_path, frames=8, seed=5):
    spec = SceneSpec(
        width=24,
        height=24,
        frames=frames,
        seed=seed,
        fire=BlobSpec(center=(7.0, 16.0), velocity=(0.05, 0.04), radius=5.0, intensity=0.8, texture_amp=0.04),
        smoke=PlumeSpec(
            source=(16.0, 8.0), drift=(0.05, 0.04), radius0=6.0, growth=0.25,
            intensity=0.35, texture_amp=0.08, texture_scale=2.0, clump_gain=0.15, clump_fraction=0.1,
        ),
        background=0.1,
        background_texture_amp=0.06,
        noise_std=0.01,
    )
    scene_dir = tmp_path / "scene"
    write_scene(spec, scene_dir)
    return scene_dir


def tiny_config(scene_dir, out_dir, method="gmm", **overrides):
    features = FeatureConfig(training_frames=4)
    cfg = PipelineConfig(
        input_dir=str(scene_dir),
        pattern="frame_*.pgm",
        output_dir=str(out_dir),
        method=method,
        features=features,
        gmm_max_iters=30,
    )
    if overrides:
        cfg = config_from_dict(overrides, base=cfg)
    return cfg


class TestTrain:
    def test_writes_model_with_expected_channels(self, tmp_path):
        scene = tiny_scene(tmp_path)
        cfg = tiny_config(scene, tmp_path / "run")
        path = cmd_train(cfg)
        doc = json.loads(path.read_text())
        assert doc["model"]["kind"] == "gmm"
        assert doc["model"]["k"] == 3
        assert doc["stats"]["channel_names"] == ["intensity", "flow_mag", "divergence"]
        assert len(doc["fit_history"]) >= 1

    def test_too_few_frames(self, tmp_path):
        scene = tiny_scene(tmp_path, frames=4)
        cfg = tiny_config(scene, tmp_path / "run")  # needs 4 + 1
        with pytest.raises(TooFewFramesError):
            cmd_train(cfg)

    def test_deterministic_model_file(self, tmp_path):
        scene = tiny_scene(tmp_path)
        p1 = cmd_train(tiny_config(scene, tmp_path / "a"))
        p2 = cmd_train(tiny_config(scene, tmp_path / "b"))
        assert p1.read_bytes() == p2.read_bytes()

    def test_kmeans_model_kind(self, tmp_path):
        scene = tiny_scene(tmp_path)
        path = cmd_train(tiny_config(scene, tmp_path / "run", method="kmeans"))
        assert json.loads(path.read_text())["model"]["kind"] == "kmeans"


class TestSegment:
    def test_outputs_for_every_test_frame(self, tmp_path):
        scene = tiny_scene(tmp_path)
        cfg = tiny_config(scene, tmp_path / "run", method="kmeans")
        model = cmd_train(cfg)
        written = cmd_segment(cfg, model)
        assert len(written) == 4  # 8 frames, 4 training
        for p in written:
            labels = load_labelmap(p, k=3)
            assert set(np.unique(labels.labels)) <= {BACKGROUND, SMOKE, FIRE}
        assert len(list((tmp_path / "run").glob("overlay_*.png"))) == 4

    def test_mrf_beta_zero_matches_gmm(self, tmp_path):
        scene = tiny_scene(tmp_path)
        gmm_cfg = tiny_config(scene, tmp_path / "gmm", method="gmm")
        model = cmd_train(gmm_cfg)
        cmd_segment(gmm_cfg, model)
        mrf_cfg = tiny_config(scene, tmp_path / "mrf", method="mrf", mrf_beta=0.0)
        cmd_segment(mrf_cfg, model)
        for p in sorted((tmp_path / "gmm").glob("label_*.png")):
            q = tmp_path / "mrf" / p.name
            assert p.read_bytes() == q.read_bytes()

    def test_gmrf_lambda_zero_matches_gmm(self, tmp_path):
        scene = tiny_scene(tmp_path)
        gmm_cfg = tiny_config(scene, tmp_path / "gmm2", method="gmm")
        model = cmd_train(gmm_cfg)
        cmd_segment(gmm_cfg, model)
        gmrf_cfg = tiny_config(scene, tmp_path / "gmrf", method="gmrf", gmrf_lambda=0.0)
        cmd_segment(gmrf_cfg, model)
        for p in sorted((tmp_path / "gmm2").glob("label_*.png")):
            q = tmp_path / "gmrf" / p.name
            assert p.read_bytes() == q.read_bytes()

    def test_mrf_writes_energy_history(self, tmp_path):
        scene = tiny_scene(tmp_path)
        cfg = tiny_config(scene, tmp_path / "run", method="mrf")
        model = cmd_train(cfg)
        cmd_segment(cfg, model)
        energies = sorted((tmp_path / "run").glob("energy_*.csv"))
        assert len(energies) == 4
        lines = energies[0].read_text().strip().splitlines()
        assert lines[0] == "sweep,likelihood_energy,prior_energy,total"
        totals = [float(l.split(",")[3]) for l in lines[1:]]
        assert all(b <= a + 1e-9 * max(1, abs(a)) for a, b in zip(totals, totals[1:]))

    def test_channel_mismatch_rejected(self, tmp_path):
        scene = tiny_scene(tmp_path)
        cfg = tiny_config(scene, tmp_path / "run")
        model = cmd_train(cfg)
        intens = config_from_dict(
            {"use_flow_mag": False, "use_divergence": False}, base=cfg
        )
        with pytest.raises(ChannelMismatchError):
            cmd_segment(intens, model)

    def test_method_model_mismatch(self, tmp_path):
        scene = tiny_scene(tmp_path)
        kcfg = tiny_config(scene, tmp_path / "run", method="kmeans")
        model = cmd_train(kcfg)
        mcfg = tiny_config(scene, tmp_path / "run2", method="mrf")
        with pytest.raises(ConfigError):
            cmd_segment(mcfg, model)

    def test_parallel_jobs_match_serial(self, tmp_path):
        scene = tiny_scene(tmp_path)
        cfg1 = tiny_config(scene, tmp_path / "serial", method="kmeans")
        model = cmd_train(cfg1)
        cmd_segment(cfg1, model)
        cfg2 = tiny_config(scene, tmp_path / "par", method="kmeans", jobs=2)
        cmd_segment(cfg2, model)
        for p in sorted((tmp_path / "serial").glob("label_*.png")):
            assert p.read_bytes() == (tmp_path / "par" / p.name).read_bytes()


class TestEval:
    def test_perfect_predictions(self, tmp_path):
        scene = tiny_scene(tmp_path)
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        for p in sorted(scene.glob("truth_*.png")):
            idx = int(p.stem.split("_")[1])
            (pred_dir / f"label_{idx:04d}.png").write_bytes(p.read_bytes())
        report = cmd_eval(pred_dir, scene, tmp_path / "eval")
        assert report["pooled"]["accuracy"] == 1.0
        assert (tmp_path / "eval" / "report.json").exists()
        assert (tmp_path / "eval" / "confusion.csv").exists()

    def test_pooled_totals(self, tmp_path):
        scene = tiny_scene(tmp_path)
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        n = 0
        for p in sorted(scene.glob("truth_*.png")):
            idx = int(p.stem.split("_")[1])
            (pred_dir / f"label_{idx:04d}.png").write_bytes(p.read_bytes())
            n += 1
        report = cmd_eval(pred_dir, scene, None)
        total = sum(sum(row) for row in report["pooled"]["counts"])
        assert total == n * 24 * 24

    def test_missing_truth_named(self, tmp_path):
        scene = tiny_scene(tmp_path)
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        (pred_dir / "label_0099.png").write_bytes(next(scene.glob("truth_*.png")).read_bytes())
        with pytest.raises(MissingTruthError, match="99"):
            cmd_eval(pred_dir, scene, None)

    def test_fire_detection_flags(self, tmp_path):
        scene = tiny_scene(tmp_path)
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        src = next(iter(sorted(scene.glob("truth_*.png"))))
        (pred_dir / "label_0000.png").write_bytes(src.read_bytes())
        report = cmd_eval(pred_dir, scene, None)
        frame = report["frames"]["0"]
        assert frame["fire_detected_truth"] is True
        assert frame["fire_detected_pred"] is True


class TestSynthCommand:
    def test_writes_suite_scene(self, tmp_path):
        manifest = cmd_synth("fire_smoke_basic", tmp_path)
        doc = json.loads(manifest.read_text())
        assert doc["scene"] == "fire_smoke_basic"
        assert len(list(tmp_path.glob("frame_*.pgm"))) == 20
        assert len(list(tmp_path.glob("truth_*.png"))) == 20

    def test_unknown_scene(self, tmp_path):
        from irseg.errors import UnknownSceneError

        with pytest.raises(UnknownSceneError):
            cmd_synth("volcano", tmp_path)

    def test_byte_identical_regeneration(self, tmp_path):
        cmd_synth("fire_small", tmp_path / "a")
        cmd_synth("fire_small", tmp_path / "b")
        for p in sorted((tmp_path / "a").iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


class TestConfigHandling:
    def test_version_required_in_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"method": "gmm"}))
        with pytest.raises(ConfigError):
            load_config(p)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"no_such_option": 1})

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"version": 1, "method": "gmm", "mrf_beta": 0.5}))
        cfg = load_config(p, {"mrf_beta": 1.5})
        assert cfg.method == "gmm"
        assert cfg.mrf_beta == 1.5

    def test_bad_method(self):
        with pytest.raises(ConfigError):
            config_from_dict({"method": "svm"})

    def test_k_must_be_three(self):
        with pytest.raises(ConfigError):
            config_from_dict({"k": 4})


class TestCli:
    def test_full_cli_flow(self, tmp_path):
        scene = tiny_scene(tmp_path)
        run = tmp_path / "run"
        common = [
            "--input-dir", str(scene),
            "--pattern", "frame_*.pgm",
            "--output-dir", str(run),
            "--method", "kmeans",
            "--training-frames", "4",
        ]
        assert cli.main(["train", *common]) == 0
        assert cli.main(["segment", *common]) == 0
        assert cli.main([
            "eval", "--pred-dir", str(run), "--truth-dir", str(scene), "--output-dir", str(tmp_path / "eval"),
        ]) == 0

    def test_cli_overlay(self, tmp_path):
        scene = tiny_scene(tmp_path)
        out = tmp_path / "ovl"
        labels_dir = tmp_path / "labels"
        labels_dir.mkdir()
        for p in scene.glob("truth_*.png"):
            idx = int(p.stem.split("_")[1])
            (labels_dir / f"label_{idx:04d}.png").write_bytes(p.read_bytes())
        code = cli.main([
            "overlay", "--input-dir", str(scene), "--pattern", "frame_*.pgm",
            "--labels-dir", str(labels_dir), "--output-dir", str(out),
        ])
        assert code == 0
        assert len(list(out.glob("overlay_*.png"))) == 8

    def test_exit_code_config_error(self, tmp_path):
        assert cli.main(["synth", "volcano", "--output-dir", str(tmp_path)]) == 2

    def test_exit_code_data_error(self, tmp_path):
        code = cli.main([
            "train", "--input-dir", str(tmp_path / "nothing"), "--output-dir", str(tmp_path / "out"),
        ])
        assert code == 3

    def test_cli_mrf_beta_zero_equals_gmm(self, tmp_path):
        scene = tiny_scene(tmp_path)
        gmm_run = tmp_path / "gmm"
        mrf_run = tmp_path / "mrf"
        base = ["--input-dir", str(scene), "--pattern", "frame_*.pgm", "--training-frames", "4"]
        assert cli.main(["train", *base, "--output-dir", str(gmm_run), "--method", "gmm"]) == 0
        assert cli.main(["segment", *base, "--output-dir", str(gmm_run), "--method", "gmm"]) == 0
        assert cli.main([
            "segment", *base, "--output-dir", str(mrf_run), "--method", "mrf", "--mrf-beta", "0",
            "--model", str(gmm_run / "model.json"),
        ]) == 0
        for p in sorted(gmm_run.glob("label_*.png")):
            assert p.read_bytes() == (mrf_run / p.name).read_bytes()

    def test_cli_gmrf_lambda_zero_equals_gmm(self, tmp_path):
        scene = tiny_scene(tmp_path)
        gmm_run = tmp_path / "gmmL"
        gmrf_run = tmp_path / "gmrfL"
        base = ["--input-dir", str(scene), "--pattern", "frame_*.pgm", "--training-frames", "4"]
        assert cli.main(["train", *base, "--output-dir", str(gmm_run), "--method", "gmm"]) == 0
        assert cli.main(["segment", *base, "--output-dir", str(gmm_run), "--method", "gmm"]) == 0
        assert cli.main([
            "segment", *base, "--output-dir", str(gmrf_run), "--method", "gmrf", "--gmrf-lambda", "0",
            "--model", str(gmm_run / "model.json"),
        ]) == 0
        for p in sorted(gmm_run.glob("label_*.png")):
            assert p.read_bytes() == (gmrf_run / p.name).read_bytes()
