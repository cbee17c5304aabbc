"""End-to-end command-line tests on a miniature experiment.

Every invocation goes through ``wavemodl.cli.main`` in process so the tests
can assert on the returned exit codes and on the files each stage writes.
"""

import json
import os

import numpy as np
import pytest

from wavemodl.cli import main
from wavemodl.config import config_digest
from wavemodl.fileio import read_volume, write_volume

TINY = {
    "seed": 3,
    "grid": [8, 8, 6],
    "fov_mm": [128.0, 96.0, 64.0],
    "coils": {"count": 3, "width": 0.9, "phase_cycles": 0.5},
    "wave": {"gmax_mt_per_m": 6.0, "cycles": 3, "bw_per_pixel_hz": 600.0, "osx": 2},
    "accel": {"ry": 2, "rz": 2, "caipi_shift": 1},
    "sampling": {"mode": "fixed"},
    "phantom": {"contrast_mode": "pd"},
    "noise_sigma": 0.001,
    "recon": {"method": "cg", "lambda_total": 0.01, "cg_iters": 15},
    "train": {
        "steps": 3, "learning_rate": 0.01, "slab_size": 4, "n_outer": 2,
        "hidden_channels": 2, "hidden_layers": 1, "cg_iters": 4,
    },
    "gfactor": {"n_replicas": 8, "noise_sigma": 1.0, "seed": 1},
}

QALAS = {
    "seed": 5,
    "grid": [8, 8, 6],
    "fov_mm": [128.0, 96.0, 64.0],
    "coils": {"count": 3, "width": 0.9, "phase_cycles": 0.5},
    "wave": {"gmax_mt_per_m": 6.0, "cycles": 3, "bw_per_pixel_hz": 600.0, "osx": 2},
    "accel": {"ry": 2, "rz": 3, "caipi_shift": 1},
    "sampling": {"mode": "staggered"},
    "phantom": {"contrast_mode": "qalas"},
    "qalas": {
        "t1_grid": [500.0, 830.0, 1100.0, 1400.0, 4000.0],
        "t2_grid": [50.0, 70.0, 110.0, 500.0, 2000.0],
    },
    "noise_sigma": 0.0005,
    "recon": {"method": "cg", "lambda_total": 0.01, "cg_iters": 15},
}


def write_config(tmp_path_factory, doc, name):
    path = tmp_path_factory.mktemp("cfg") / name
    path.write_text(json.dumps(doc, indent=1))
    return str(path)


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    return write_config(tmp_path_factory, TINY, "tiny.json")


@pytest.fixture(scope="module")
def qalas_cfg(tmp_path_factory):
    return write_config(tmp_path_factory, QALAS, "qalas.json")


@pytest.fixture(scope="module")
def flow(tmp_path_factory, tiny_cfg):
    """Shared run directory after phantom, acquire, train and CG recon."""
    work = str(tmp_path_factory.mktemp("flow"))
    for argv in (
        ["phantom", "--config", tiny_cfg, "--output-dir", work],
        ["acquire", "--config", tiny_cfg, "--output-dir", work],
        ["train", "--config", tiny_cfg, "--output-dir", work, "--steps", "2"],
        ["recon", "--config", tiny_cfg, "--output-dir", work],
    ):
        assert main(argv) == 0, f"stage {argv[0]} failed"
    with open(os.path.join(work, "metrics.txt")) as fh:
        cg_metrics = fh.read()
    return {"cfg": tiny_cfg, "work": work, "cg_metrics": cg_metrics}


@pytest.fixture(scope="module")
def qalas_fit(tmp_path_factory, qalas_cfg):
    """Parameter maps fitted straight from the config (recon done in memory)."""
    outdir = str(tmp_path_factory.mktemp("qfit"))
    assert main(["fit-qalas", "--config", qalas_cfg, "--output-dir", outdir]) == 0
    return outdir


class TestPipelineFlow:
    def test_phantom_outputs(self, flow):
        for fname in (
            "labels.wmv", "t1_truth.wmv", "t2_truth.wmv", "pd_truth.wmv",
            "truth_m00.wmv", "truth_m00.pgm", "sens.wmv", "manifest.json",
        ):
            assert os.path.exists(os.path.join(flow["work"], fname)), fname

    def test_manifest_contents(self, flow):
        with open(os.path.join(flow["work"], "manifest.json")) as fh:
            manifest = json.load(fh)
        with open(flow["cfg"]) as fh:
            text = fh.read()
        assert manifest["config_sha256"] == config_digest(text)
        assert manifest["seed"] == 3
        for key in ("package_version", "numpy_version",
                    "volume_format_version", "checkpoint_format_version"):
            assert key in manifest

    def test_acquire_outputs(self, flow):
        assert os.path.exists(os.path.join(flow["work"], "kspace_m00.wmv"))
        assert os.path.exists(os.path.join(flow["work"], "mask_m00.pgm"))
        # pd mode is single-contrast
        assert not os.path.exists(os.path.join(flow["work"], "kspace_m01.wmv"))

    def test_acquire_rerun_is_byte_identical(self, flow, tmp_path):
        other = str(tmp_path / "again")
        assert main(["acquire", "--config", flow["cfg"], "--output-dir", other]) == 0
        with open(os.path.join(flow["work"], "kspace_m00.wmv"), "rb") as fh:
            first = fh.read()
        with open(os.path.join(other, "kspace_m00.wmv"), "rb") as fh:
            second = fh.read()
        assert first == second

    def test_train_outputs(self, flow):
        assert os.path.exists(os.path.join(flow["work"], "checkpoint.wmck"))
        with open(os.path.join(flow["work"], "loss_log.txt")) as fh:
            lines = fh.read().strip().splitlines()
        assert len(lines) >= 2
        assert lines[0].split("\t")[0] == "0"
        losses = [float(line.split("\t")[1]) for line in lines]
        assert all(np.isfinite(losses))

    def test_recon_outputs(self, flow):
        assert os.path.exists(os.path.join(flow["work"], "recon_m00.wmv"))
        assert os.path.exists(os.path.join(flow["work"], "recon_m00.pgm"))
        line = flow["cg_metrics"].strip()
        parts = line.split()
        assert parts[:3] == ["contrast", "00", "nrmse_percent"]
        err = float(parts[3])
        assert 0.0 < err < 100.0

    def test_recon_volume_matches_grid(self, flow):
        rec = read_volume(os.path.join(flow["work"], "recon_m00.wmv"))
        assert rec.data.shape == tuple(TINY["grid"])
        assert rec.data.dtype == np.complex64

    def test_recon_modl_with_explicit_checkpoint(self, flow, tmp_path):
        outdir = str(tmp_path / "modl")
        ckpt = os.path.join(flow["work"], "checkpoint.wmck")
        rc = main([
            "recon", "--config", flow["cfg"], "--output-dir", outdir,
            "--method", "modl", "--checkpoint", ckpt,
        ])
        assert rc == 0
        assert os.path.exists(os.path.join(outdir, "recon_m00.wmv"))
        assert os.path.exists(os.path.join(outdir, "metrics.txt"))

    def test_recon_modl_finds_checkpoint_in_output_dir(self, flow):
        # checkpoint.wmck sits in the run directory from the train stage
        rc = main([
            "recon", "--config", flow["cfg"], "--output-dir", flow["work"],
            "--method", "modl",
        ])
        assert rc == 0

    def test_recon_lambda_override(self, flow, tmp_path):
        outdir = str(tmp_path / "lam")
        rc = main([
            "recon", "--config", flow["cfg"], "--output-dir", outdir,
            "--lambda", "0.5",
        ])
        assert rc == 0
        heavy = read_volume(os.path.join(outdir, "recon_m00.wmv")).data
        light = read_volume(os.path.join(flow["work"], "recon_m00.wmv")).data
        assert not np.array_equal(heavy, light)
        # strong Tikhonov damping shrinks the solution
        assert np.linalg.norm(heavy) < np.linalg.norm(light)

    def test_gfactor_outputs(self, flow):
        rc = main(["gfactor", "--config", flow["cfg"], "--output-dir", flow["work"]])
        assert rc == 0
        for fname in ("gfactor.wmv", "gfactor.pgm", "gfactor.txt"):
            assert os.path.exists(os.path.join(flow["work"], fname)), fname
        with open(os.path.join(flow["work"], "gfactor.txt")) as fh:
            text = fh.read()
        assert "accel 4" in text
        assert "replicas 8" in text
        mean_line = [l for l in text.splitlines() if l.startswith("mean_foreground_g")]
        assert np.isfinite(float(mean_line[0].split()[1]))

    def test_metrics_stdout_and_file(self, flow, tmp_path, capsys):
        out = str(tmp_path / "m.txt")
        rc = main([
            "metrics",
            "--volume", os.path.join(flow["work"], "recon_m00.wmv"),
            "--reference", os.path.join(flow["work"], "truth_m00.wmv"),
            "--roi", os.path.join(flow["work"], "labels.wmv"),
            "--out", out,
        ])
        assert rc == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert printed[0].startswith("nrmse_percent ")
        assert printed[1].startswith("nrmse_magnitude_percent ")
        with open(out) as fh:
            assert fh.read().strip().splitlines() == printed

    def test_metrics_identical_volumes_give_zero(self, flow, capsys):
        path = os.path.join(flow["work"], "truth_m00.wmv")
        rc = main(["metrics", "--volume", path, "--reference", path])
        assert rc == 0
        printed = capsys.readouterr().out.strip().splitlines()
        assert float(printed[0].split()[1]) == 0.0


class TestQalasFlow:
    def test_fit_outputs(self, qalas_fit):
        for fname in (
            "t1_fit.wmv", "t2_fit.wmv", "pd_fit.wmv", "residual.wmv",
            "degenerate.wmv", "t1_fit.pgm", "t2_fit.pgm", "pd_fit.pgm",
            "regression.txt", "manifest.json",
        ):
            assert os.path.exists(os.path.join(qalas_fit, fname)), fname

    def test_fitted_values_lie_on_the_grid(self, qalas_fit):
        t1 = read_volume(os.path.join(qalas_fit, "t1_fit.wmv")).data
        t2 = read_volume(os.path.join(qalas_fit, "t2_fit.wmv")).data
        pd = read_volume(os.path.join(qalas_fit, "pd_fit.wmv")).data
        grid_t1 = np.asarray(QALAS["qalas"]["t1_grid"], dtype=np.float32)
        grid_t2 = np.asarray(QALAS["qalas"]["t2_grid"], dtype=np.float32)
        assert np.all(np.isin(t1, grid_t1))
        assert np.all(np.isin(t2, grid_t2))
        assert np.all(pd >= 0)

    def test_regression_skipped_on_tiny_grid(self, qalas_fit):
        # an 8x8x6 grid cannot supply the default number of ROI boxes
        with open(os.path.join(qalas_fit, "regression.txt")) as fh:
            text = fh.read().strip()
        assert text.startswith("regression skipped:")

    def test_fit_reuses_stored_recon(self, qalas_fit, qalas_cfg):
        before = os.path.getmtime(os.path.join(qalas_fit, "recon_m00.wmv")) \
            if os.path.exists(os.path.join(qalas_fit, "recon_m00.wmv")) else None
        t1_first = read_volume(os.path.join(qalas_fit, "t1_fit.wmv")).data.copy()
        rc = main(["fit-qalas", "--config", qalas_cfg, "--output-dir", qalas_fit])
        assert rc == 0
        t1_second = read_volume(os.path.join(qalas_fit, "t1_fit.wmv")).data
        assert np.array_equal(t1_first, t1_second)
        del before

    def test_synth_from_fitted_maps(self, qalas_fit, tmp_path):
        outdir = str(tmp_path / "synth")
        rc = main([
            "synth", "--maps-dir", qalas_fit, "--kind", "t1w",
            "--output-dir", outdir,
        ])
        assert rc == 0
        img = read_volume(os.path.join(outdir, "synth_t1w.wmv")).data
        assert img.shape == tuple(QALAS["grid"])
        assert np.all(np.isfinite(img))
        assert os.path.exists(os.path.join(outdir, "synth_t1w.pgm"))

    def test_synth_sequence_override_changes_image(self, qalas_fit, tmp_path):
        base = str(tmp_path / "base")
        long_te = str(tmp_path / "long")
        assert main(["synth", "--maps-dir", qalas_fit, "--kind", "t2w",
                     "--output-dir", base]) == 0
        assert main(["synth", "--maps-dir", qalas_fit, "--kind", "t2w",
                     "--output-dir", long_te, "--te", "250.0"]) == 0
        a = read_volume(os.path.join(base, "synth_t2w.wmv")).data
        b = read_volume(os.path.join(long_te, "synth_t2w.wmv")).data
        assert not np.array_equal(a, b)

    def test_fit_qalas_rejects_non_qalas_mode(self, tiny_cfg, tmp_path, capsys):
        rc = main(["fit-qalas", "--config", tiny_cfg,
                   "--output-dir", str(tmp_path / "bad")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_checkpoint_contrast_mismatch(self, flow, qalas_cfg, tmp_path, capsys):
        # a single-contrast checkpoint cannot reconstruct five contrasts
        rc = main([
            "fit-qalas", "--config", qalas_cfg,
            "--output-dir", str(tmp_path / "mix"),
            "--method", "modl",
            "--checkpoint", os.path.join(flow["work"], "checkpoint.wmck"),
        ])
        assert rc == 2
        assert "contrasts" in capsys.readouterr().err


class TestExitCodes:
    def test_invalid_json_config(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        rc = main(["phantom", "--config", str(path),
                   "--output-dir", str(tmp_path / "o")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_config_key(self, tmp_path):
        doc = dict(TINY)
        doc["sead"] = 1
        path = tmp_path / "typo.json"
        path.write_text(json.dumps(doc))
        rc = main(["phantom", "--config", str(path),
                   "--output-dir", str(tmp_path / "o")])
        assert rc == 2

    def test_missing_config_file(self, tmp_path):
        rc = main(["phantom", "--config", str(tmp_path / "absent.json"),
                   "--output-dir", str(tmp_path / "o")])
        assert rc == 2

    def test_metrics_missing_volume(self, tmp_path):
        rc = main(["metrics", "--volume", str(tmp_path / "nope.wmv"),
                   "--reference", str(tmp_path / "nope.wmv")])
        assert rc == 4

    def test_metrics_corrupt_volume(self, flow, tmp_path):
        bad = tmp_path / "bad.wmv"
        bad.write_bytes(b"JUNKJUNKJUNKJUNK")
        rc = main(["metrics", "--volume", str(bad),
                   "--reference", os.path.join(flow["work"], "truth_m00.wmv")])
        assert rc == 4

    def test_synth_with_empty_maps_dir(self, tmp_path):
        rc = main(["synth", "--maps-dir", str(tmp_path), "--kind", "t1w",
                   "--output-dir", str(tmp_path / "o")])
        assert rc == 4

    def test_modl_without_checkpoint(self, tiny_cfg, tmp_path):
        rc = main(["recon", "--config", tiny_cfg,
                   "--output-dir", str(tmp_path / "fresh"), "--method", "modl"])
        assert rc == 2

    def test_modl_with_missing_checkpoint_file(self, tiny_cfg, tmp_path):
        rc = main(["recon", "--config", tiny_cfg,
                   "--output-dir", str(tmp_path / "fresh"), "--method", "modl",
                   "--checkpoint", str(tmp_path / "absent.wmck")])
        assert rc == 4

    def test_train_slab_exceeding_readout(self, tmp_path):
        doc = json.loads(json.dumps(TINY))
        doc["train"]["slab_size"] = 16
        path = tmp_path / "slab.json"
        path.write_text(json.dumps(doc))
        rc = main(["train", "--config", str(path),
                   "--output-dir", str(tmp_path / "o"), "--steps", "1"])
        assert rc == 2

    def test_non_finite_kspace_is_rejected_as_input(self, flow, tiny_cfg, tmp_path):
        outdir = tmp_path / "nan"
        outdir.mkdir()
        rec = read_volume(os.path.join(flow["work"], "kspace_m00.wmv"))
        data = np.array(rec.data)
        data.flat[0] = np.nan
        write_volume(str(outdir / "kspace_m00.wmv"), data)
        rc = main(["recon", "--config", tiny_cfg, "--output-dir", str(outdir)])
        assert rc == 2

    def test_training_overflow_fails_numerically(self, tmp_path, capsys):
        # exp(log(1e308)) ~ 8e307, so the lambda terms in the data-consistency
        # solve overflow during the very first forward pass
        doc = json.loads(json.dumps(TINY))
        doc["train"]["lambda_init"] = 1e308
        path = tmp_path / "hot.json"
        path.write_text(json.dumps(doc))
        with np.errstate(over="ignore", invalid="ignore"):
            rc = main(["train", "--config", str(path),
                       "--output-dir", str(tmp_path / "o"), "--steps", "2"])
        assert rc == 3
        assert "error:" in capsys.readouterr().err

    def test_missing_subcommand_is_a_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_config_and_preset_are_exclusive(self, tiny_cfg, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["phantom", "--config", tiny_cfg, "--preset", "mprage-r4x4",
                  "--output-dir", str(tmp_path / "o")])
        assert exc.value.code == 2

    def test_unknown_method_choice(self, tiny_cfg, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["recon", "--config", tiny_cfg,
                  "--output-dir", str(tmp_path / "o"), "--method", "unet"])
        assert exc.value.code == 2

    def test_unknown_preset_name(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["phantom", "--preset", "does-not-exist",
                  "--output-dir", str(tmp_path / "o")])
        assert exc.value.code == 2


class TestPresets:
    @pytest.mark.parametrize("name", ["mprage-r4x4", "mempr-r3x2", "qalas-r4x3"])
    def test_phantom_stage_runs_from_preset(self, name, tmp_path):
        outdir = str(tmp_path / name)
        rc = main(["phantom", "--preset", name, "--output-dir", outdir])
        assert rc == 0
        assert os.path.exists(os.path.join(outdir, "labels.wmv"))
        assert os.path.exists(os.path.join(outdir, "manifest.json"))
