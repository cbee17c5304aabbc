"""End-to-end experiment stages shared by the command-line interface.

Every stage derives its inputs deterministically from the experiment config
(regenerating upstream products in memory when their files are absent), so
rerunning a stage with the same config writes byte-identical outputs.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import config_digest
from .errors import InvalidInputError, PipelineError
from .fileio import (
    CHECKPOINT_VERSION,
    VOLUME_VERSION,
    read_checkpoint,
    read_volume,
    write_checkpoint,
    write_pgm,
    write_slice_preview,
    write_volume,
)
from .metrics import gfactor_map, nrmse, roi_box_regression
from .modl import TrainSample, init_modl_params, modl_reconstruct, train
from .phantom import make_coil_sensitivities, make_phantom, simulate_acquisition
from .qalas import (
    ParameterMaps,
    build_dictionary,
    fit_parameter_maps,
    synthesize_contrast,
)
from .sampling import make_multicontrast_pattern
from .solvers import CgConfig, wave_caipi_recon
from .volume import (
    FREQUENCY,
    IMAGE,
    CoilSensitivities,
    ComplexVolume,
    MultiCoilData,
)
from .wave import WaveOperator, make_wave_psf


@dataclass
class Scene:
    """Deterministic in-memory experiment state derived from one config."""

    tissue_map: object
    truth: np.ndarray
    sens: object
    psf: object
    pattern: object
    ops: tuple


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def build_scene(cfg):
    """Phantom, coil maps, phase table, sampling pattern and operators."""
    tissue_map, truth = make_phantom(cfg.phantom)
    sens = make_coil_sensitivities(
        cfg.n_coils, cfg.grid, width=cfg.coil_width,
        phase_cycles=cfg.coil_phase_cycles,
    )
    psf = make_wave_psf(cfg.wave, *cfg.grid)
    pattern = make_multicontrast_pattern(
        cfg.grid[1], cfg.grid[2], cfg.accel, truth.shape[0],
        mode=cfg.sampling_mode, stagger=cfg.stagger,
    )
    ops = tuple(WaveOperator(sens, psf, m) for m in pattern.masks)
    return Scene(tissue_map, truth, sens, psf, pattern, ops)


def write_manifest(outdir, cfg_text, cfg):
    import json

    manifest = {
        "config_sha256": config_digest(cfg_text),
        "seed": cfg.seed,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "volume_format_version": VOLUME_VERSION,
        "checkpoint_format_version": CHECKPOINT_VERSION,
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _ensure_dir(outdir):
    os.makedirs(outdir, exist_ok=True)


def stage_phantom(cfg, cfg_text, outdir):
    """Write the label volume, ground-truth contrasts, maps and previews."""

    def run():
        _ensure_dir(outdir)
        scene = build_scene(cfg)
        write_volume(os.path.join(outdir, "labels.wmv"), scene.tissue_map.labels)
        for key, fname in (("t1_ms", "t1_truth.wmv"), ("t2_ms", "t2_truth.wmv"),
                           ("pd", "pd_truth.wmv")):
            write_volume(
                os.path.join(outdir, fname),
                scene.tissue_map.property_volume(key),
            )
        for m in range(scene.truth.shape[0]):
            vol = ComplexVolume(scene.truth[m], (IMAGE, IMAGE, IMAGE))
            write_volume(os.path.join(outdir, f"truth_m{m:02d}.wmv"), vol)
            write_slice_preview(os.path.join(outdir, f"truth_m{m:02d}.pgm"), vol)
        write_volume(os.path.join(outdir, "sens.wmv"), scene.sens.maps)
        write_manifest(outdir, cfg_text, cfg)
        return scene

    return _stage("phantom", run)


def stage_acquire(cfg, cfg_text, outdir):
    """Simulate the wave-encoded acquisition and write k-space plus masks."""

    def run():
        _ensure_dir(outdir)
        scene = build_scene(cfg)
        data = simulate_acquisition(
            scene.truth, scene.sens, scene.psf, scene.pattern,
            noise_sigma=cfg.noise_sigma, seed=cfg.seed,
        )
        for m, d in enumerate(data):
            write_volume(os.path.join(outdir, f"kspace_m{m:02d}.wmv"), d.data)
            write_pgm(
                os.path.join(outdir, f"mask_m{m:02d}.pgm"),
                scene.pattern.masks[m].astype(np.float64),
            )
        write_manifest(outdir, cfg_text, cfg)
        return data

    return _stage("acquire", run)


def _load_or_simulate_kspace(cfg, outdir, scene):
    first = os.path.join(outdir, "kspace_m00.wmv")
    if os.path.exists(first):
        data = []
        for m in range(scene.truth.shape[0]):
            rec = read_volume(os.path.join(outdir, f"kspace_m{m:02d}.wmv"))
            data.append(MultiCoilData(
                rec.data.astype(np.complex128), (FREQUENCY, FREQUENCY, FREQUENCY)
            ))
        return data
    return simulate_acquisition(
        scene.truth, scene.sens, scene.psf, scene.pattern,
        noise_sigma=cfg.noise_sigma, seed=cfg.seed,
    )


def make_training_samples(cfg, scene):
    """Cut the phantom into readout slabs and simulate each one's acquisition.

    The networks are convolutional over (y, z) slices, so models trained on
    slabs apply unchanged to full volumes.
    """
    slab = cfg.train.optimizer.slab_size
    nx = cfg.grid[0]
    if slab > nx:
        raise InvalidInputError(
            f"slab_size {slab} exceeds the readout extent {nx}"
        )
    n_slabs = nx // slab
    sens_slabs = scene.sens.maps[:, : n_slabs * slab].reshape(
        scene.sens.maps.shape[0], n_slabs, slab, *cfg.grid[1:]
    )
    psf_slab = make_wave_psf(cfg.wave, slab, cfg.grid[1], cfg.grid[2])
    samples = []
    for s in range(n_slabs):
        sens_s = CoilSensitivities(np.ascontiguousarray(sens_slabs[:, s]))
        truth_s = scene.truth[:, s * slab:(s + 1) * slab]
        pattern = scene.pattern
        data = simulate_acquisition(
            truth_s, sens_s, psf_slab, pattern,
            noise_sigma=cfg.noise_sigma, seed=cfg.seed + 7919 * (s + 1),
        )
        ops = tuple(WaveOperator(sens_s, psf_slab, m) for m in pattern.masks)
        samples.append(TrainSample(tuple(d.data for d in data), ops, truth_s))
    return samples


def stage_train(cfg, cfg_text, outdir, steps=None):
    """Train the unrolled model on phantom slabs; write checkpoint and log."""

    def run():
        _ensure_dir(outdir)
        scene = build_scene(cfg)
        samples = make_training_samples(cfg, scene)
        tcfg = cfg.train.optimizer
        if steps is not None:
            from dataclasses import replace

            tcfg = replace(tcfg, steps=steps)
        params = init_modl_params(
            cfg.n_contrasts, seed=tcfg.seed, n_outer=cfg.train.n_outer,
            hidden_channels=cfg.train.hidden_channels,
            hidden_layers=cfg.train.hidden_layers,
            kernel_size=cfg.train.kernel_size,
            lambda_init=cfg.train.lambda_init,
        )
        params, history = train(params, samples, tcfg)
        write_checkpoint(
            os.path.join(outdir, "checkpoint.wmck"), params,
            metadata={
                "config_sha256": config_digest(cfg_text),
                "steps": tcfg.steps,
                "final_loss": history[-1],
            },
        )
        with open(os.path.join(outdir, "loss_log.txt"), "w") as fh:
            for i, loss in enumerate(history):
                fh.write(f"{i}\t{loss:.10e}\n")
        write_manifest(outdir, cfg_text, cfg)
        return params, history

    return _stage("train", run)


def _recon_volumes(cfg, outdir, scene, method=None, lambda_total=None,
                   checkpoint=None):
    data = _load_or_simulate_kspace(cfg, outdir, scene)
    method = method or cfg.recon.method
    lam = cfg.recon.lambda_total if lambda_total is None else lambda_total
    if method == "cg":
        cg = CgConfig(max_iters=cfg.recon.cg_iters, lambda_total=lam)
        recon = np.stack(
            [wave_caipi_recon(d, op, cg).data for d, op in zip(data, scene.ops)],
            axis=0,
        )
        return recon
    ckpt_path = checkpoint or cfg.recon.checkpoint
    if ckpt_path is None:
        candidate = os.path.join(outdir, "checkpoint.wmck")
        if not os.path.exists(candidate):
            raise InvalidInputError(
                "modl reconstruction needs a checkpoint: none configured and "
                f"{candidate} not found"
            )
        ckpt_path = candidate
    params, _ = read_checkpoint(ckpt_path)
    if params.n_contrasts != cfg.n_contrasts:
        raise InvalidInputError(
            f"checkpoint handles {params.n_contrasts} contrasts, config needs "
            f"{cfg.n_contrasts}"
        )
    return modl_reconstruct(params, data, scene.ops, cg_iters=cfg.recon.cg_iters)


def stage_recon(cfg, cfg_text, outdir, method=None, lambda_total=None,
                checkpoint=None):
    """Reconstruct, write per-contrast volumes, previews, and error metrics."""

    def run():
        _ensure_dir(outdir)
        scene = build_scene(cfg)
        recon = _recon_volumes(cfg, outdir, scene, method, lambda_total, checkpoint)
        lines = []
        for m in range(recon.shape[0]):
            vol = ComplexVolume(recon[m], (IMAGE, IMAGE, IMAGE))
            write_volume(os.path.join(outdir, f"recon_m{m:02d}.wmv"), vol)
            write_slice_preview(os.path.join(outdir, f"recon_m{m:02d}.pgm"), vol)
            err = nrmse(recon[m], scene.truth[m])
            lines.append(f"contrast {m:02d} nrmse_percent {err:.6f}")
        with open(os.path.join(outdir, "metrics.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        write_manifest(outdir, cfg_text, cfg)
        return recon

    return _stage("recon", run)


def stage_fit_qalas(cfg, cfg_text, outdir, method=None, checkpoint=None):
    """Reconstruct (if needed), fit parameter maps, and regress against truth."""

    def run():
        if cfg.phantom.contrast_mode != "qalas":
            raise InvalidInputError(
                "fit-qalas needs phantom.contrast_mode == 'qalas', got "
                f"{cfg.phantom.contrast_mode!r}"
            )
        _ensure_dir(outdir)
        scene = build_scene(cfg)
        first = os.path.join(outdir, "recon_m00.wmv")
        if os.path.exists(first):
            recon = np.stack(
                [
                    read_volume(os.path.join(outdir, f"recon_m{m:02d}.wmv"))
                    .data.astype(np.complex128)
                    for m in range(cfg.n_contrasts)
                ],
                axis=0,
            )
        else:
            recon = _recon_volumes(cfg, outdir, scene, method, None, checkpoint)
        dictionary = build_dictionary(cfg.t1_grid, cfg.t2_grid, cfg.qalas_timing)
        maps = fit_parameter_maps(
            np.abs(recon), dictionary, mask=scene.tissue_map.foreground()
        )
        for name, arr in (
            ("t1_fit", maps.t1_ms), ("t2_fit", maps.t2_ms), ("pd_fit", maps.pd),
            ("residual", maps.residual), ("degenerate", maps.degenerate),
        ):
            write_volume(os.path.join(outdir, f"{name}.wmv"), arr)
        for name in ("t1_fit", "t2_fit", "pd_fit"):
            rec = read_volume(os.path.join(outdir, f"{name}.wmv"))
            write_pgm(
                os.path.join(outdir, f"{name}.pgm"),
                np.asarray(rec.data[rec.data.shape[0] // 2], dtype=np.float64),
            )
        truth_maps = ParameterMaps(
            scene.tissue_map.property_volume("t1_ms"),
            scene.tissue_map.property_volume("t2_ms"),
            scene.tissue_map.property_volume("pd"),
            np.zeros(cfg.grid),
            ~scene.tissue_map.foreground(),
        )
        lines = []
        try:
            result = roi_box_regression(truth_maps, maps, scene.tissue_map)
            for key, line in result.pooled.items():
                lines.append(
                    f"{key} slope {line.slope:.6f} intercept {line.intercept:.6f} "
                    f"r {line.r:.6f}"
                )
        except InvalidInputError as exc:
            lines.append(f"regression skipped: {exc}")
        with open(os.path.join(outdir, "regression.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        write_manifest(outdir, cfg_text, cfg)
        return maps

    return _stage("fit-qalas", run)


def stage_synth(maps_dir, kind, outdir, sequence=None):
    """Synthesize a weighted contrast from previously fitted maps."""

    def run():
        _ensure_dir(outdir)
        arrays = {}
        for name, fname in (
            ("t1_ms", "t1_fit.wmv"), ("t2_ms", "t2_fit.wmv"), ("pd", "pd_fit.wmv"),
        ):
            rec = read_volume(os.path.join(maps_dir, fname))
            arrays[name] = rec.data.astype(np.float64)
        maps = ParameterMaps(
            arrays["t1_ms"], arrays["t2_ms"], arrays["pd"],
            np.zeros_like(arrays["pd"]),
            np.zeros(arrays["pd"].shape, dtype=bool),
        )
        img = synthesize_contrast(maps, kind, sequence)
        write_volume(os.path.join(outdir, f"synth_{kind}.wmv"), img)
        write_pgm(
            os.path.join(outdir, f"synth_{kind}.pgm"), img[img.shape[0] // 2]
        )
        return img

    return _stage("synth", run)


def stage_gfactor(cfg, cfg_text, outdir):
    """Monte-Carlo noise-amplification map for the configured CG recon."""

    def run():
        _ensure_dir(outdir)
        scene = build_scene(cfg)
        cg = CgConfig(max_iters=cfg.recon.cg_iters,
                      lambda_total=cfg.recon.lambda_total)

        def recon_fn(noise, op):
            return wave_caipi_recon(noise, op, cg).data

        result = gfactor_map(recon_fn, scene.ops[0], scene.pattern, cfg.gfactor)
        write_volume(os.path.join(outdir, "gfactor.wmv"), result.g)
        write_pgm(
            os.path.join(outdir, "gfactor.pgm"),
            result.g[result.g.shape[0] // 2],
        )
        fg = scene.tissue_map.foreground() & ~result.undefined
        mean_g = float(result.g[fg].mean()) if fg.any() else float("nan")
        max_g = float(result.g[fg].max()) if fg.any() else float("nan")
        with open(os.path.join(outdir, "gfactor.txt"), "w") as fh:
            fh.write(
                f"accel {result.accel}\nreplicas {cfg.gfactor.n_replicas}\n"
                f"mean_foreground_g {mean_g:.6f}\nmax_foreground_g {max_g:.6f}\n"
            )
        write_manifest(outdir, cfg_text, cfg)
        return result

    return _stage("gfactor", run)


def stage_metrics(volume_path, reference_path, roi_path=None, out_path=None):
    """NRMSE between two stored volumes, optionally within a label ROI."""

    def run():
        a = read_volume(volume_path).data.astype(np.complex128)
        b = read_volume(reference_path).data.astype(np.complex128)
        roi = None
        if roi_path is not None:
            roi = read_volume(roi_path).data > 0
        complex_err = nrmse(a, b, roi=roi)
        mag_err = nrmse(a, b, roi=roi, magnitude=True)
        lines = [
            f"nrmse_percent {complex_err:.6f}",
            f"nrmse_magnitude_percent {mag_err:.6f}",
        ]
        if out_path is not None:
            with open(out_path, "w") as fh:
                fh.write("\n".join(lines) + "\n")
        return lines

    return _stage("metrics", run)
