"""Experiment configuration: a strict JSON schema mapped onto the library types.

Unknown keys anywhere in the document are rejected so that typos fail loudly
instead of silently falling back to defaults.

Units are fixed by the schema: lengths in millimeters (``fov_mm``), gradient
amplitude in mT/m, bandwidth in Hz per pixel, times in milliseconds, angles
in degrees.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError
from .metrics import GFactorConfig
from .modl import (
    DEFAULT_HIDDEN_CHANNELS,
    DEFAULT_HIDDEN_LAYERS,
    DEFAULT_KERNEL_SIZE,
    DEFAULT_LAMBDA_INIT,
    TrainConfig,
)
from .phantom import PhantomSpec
from .qalas import QalasTiming
from .sampling import AccelSpec
from .solvers import CgConfig
from .wave import WaveGradientSpec


@dataclass(frozen=True)
class ReconSettings:
    """Reconstruction method selection: plain CG or the unrolled model."""

    method: str = "cg"
    lambda_total: float = 0.0
    cg_iters: int = 10
    checkpoint: str = None

    def __post_init__(self):
        if self.method not in ("cg", "modl"):
            raise InvalidInputError(f"recon method must be cg or modl, got {self.method!r}")
        CgConfig(max_iters=self.cg_iters, lambda_total=self.lambda_total)


@dataclass(frozen=True)
class TrainSettings:
    """Training hyperparameters plus the network architecture to initialize."""

    optimizer: TrainConfig = field(default_factory=TrainConfig)
    n_outer: int = 10
    hidden_channels: int = DEFAULT_HIDDEN_CHANNELS
    hidden_layers: int = DEFAULT_HIDDEN_LAYERS
    kernel_size: int = DEFAULT_KERNEL_SIZE
    lambda_init: float = DEFAULT_LAMBDA_INIT


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run needs, fully determined by the JSON document."""

    seed: int
    grid: tuple
    fov_mm: tuple
    n_coils: int
    coil_width: float
    coil_phase_cycles: float
    wave: WaveGradientSpec
    accel: AccelSpec
    sampling_mode: str
    stagger: tuple
    phantom: PhantomSpec
    noise_sigma: float
    recon: ReconSettings
    train: TrainSettings
    qalas_timing: QalasTiming
    t1_grid: tuple
    t2_grid: tuple
    gfactor: GFactorConfig

    @property
    def n_contrasts(self):
        if self.phantom.contrast_mode == "pd":
            return 1
        if self.phantom.contrast_mode == "qalas":
            return 5
        return len(self.phantom.echo_times_ms)


class _Section:
    """Dict wrapper that tracks consumed keys and rejects leftovers."""

    def __init__(self, raw, name):
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be an object, got {type(raw).__name__}")
        self.raw = raw
        self.name = name
        self.seen = set()

    def take(self, key, default=None, required=False):
        self.seen.add(key)
        if key not in self.raw:
            if required:
                raise ConfigError(f"missing required key {self.name}.{key}")
            return default
        return self.raw[key]

    def subsection(self, key):
        self.seen.add(key)
        raw = self.raw.get(key, {})
        return _Section(raw, f"{self.name}.{key}" if self.name else key)

    def finish(self):
        unknown = set(self.raw) - self.seen
        if unknown:
            raise ConfigError(
                f"unknown keys in {self.name or 'config'}: {sorted(unknown)}"
            )


def _number(value, name, cast=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return cast(value)


def _int(value, name):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def _triple(value, name, cast=float):
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(f"{name} must be a list of three numbers, got {value!r}")
    return tuple(_number(v, f"{name}[{i}]", cast) for i, v in enumerate(value))


def parse_config(doc):
    """Validate a parsed JSON document into an ExperimentConfig."""
    root = _Section(doc, "")
    try:
        seed = _int(root.take("seed", 0), "seed")
        grid = _triple(root.take("grid", [64, 48, 32]), "grid", cast=int)
        fov_mm = _triple(root.take("fov_mm", [256.0, 192.0, 128.0]), "fov_mm")

        coils = root.subsection("coils")
        n_coils = _int(coils.take("count", 8), "coils.count")
        coil_width = _number(coils.take("width", 0.9), "coils.width")
        coil_phase = _number(coils.take("phase_cycles", 0.5), "coils.phase_cycles")
        coils.finish()

        wave_sec = root.subsection("wave")
        wave = WaveGradientSpec(
            gmax_mt_per_m=_number(wave_sec.take("gmax_mt_per_m", 0.0), "wave.gmax_mt_per_m"),
            cycles=_int(wave_sec.take("cycles", 5), "wave.cycles"),
            bw_per_pixel_hz=_number(wave_sec.take("bw_per_pixel_hz", 200.0), "wave.bw_per_pixel_hz"),
            fov_m=tuple(v / 1000.0 for v in fov_mm),
            osx=_int(wave_sec.take("osx", 2), "wave.osx"),
        )
        wave_sec.finish()

        accel_sec = root.subsection("accel")
        accel = AccelSpec(
            ry=_int(accel_sec.take("ry", 1), "accel.ry"),
            rz=_int(accel_sec.take("rz", 1), "accel.rz"),
            caipi_shift=_int(accel_sec.take("caipi_shift", 0), "accel.caipi_shift"),
        )
        accel_sec.finish()

        sampling = root.subsection("sampling")
        mode = sampling.take("mode", "staggered")
        if mode not in ("staggered", "fixed"):
            raise ConfigError(f"sampling.mode must be staggered or fixed, got {mode!r}")
        stagger_raw = sampling.take("stagger", None)
        stagger = None
        if stagger_raw is not None:
            if not isinstance(stagger_raw, list):
                raise ConfigError("sampling.stagger must be a list of [dy, dz] pairs")
            stagger = tuple(
                tuple(_int(v, "sampling.stagger entry") for v in pair)
                for pair in stagger_raw
            )
        sampling.finish()

        qalas_sec = root.subsection("qalas")
        timing = QalasTiming(
            t2prep_te_ms=_number(qalas_sec.take("t2prep_te_ms", 100.0), "qalas.t2prep_te_ms"),
            gap_ms=_number(qalas_sec.take("gap_ms", 900.0), "qalas.gap_ms"),
            flip_deg=_number(qalas_sec.take("flip_deg", 4.0), "qalas.flip_deg"),
            echo_spacing_ms=_number(qalas_sec.take("echo_spacing_ms", 5.8), "qalas.echo_spacing_ms"),
            shots_per_train=_int(qalas_sec.take("shots_per_train", 128), "qalas.shots_per_train"),
            recovery_delay_ms=_number(qalas_sec.take("recovery_delay_ms", 0.0), "qalas.recovery_delay_ms"),
        )
        t1_grid = qalas_sec.take("t1_grid", None)
        t2_grid = qalas_sec.take("t2_grid", None)
        for name, g in (("qalas.t1_grid", t1_grid), ("qalas.t2_grid", t2_grid)):
            if g is not None and (
                not isinstance(g, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in g)
            ):
                raise ConfigError(f"{name} must be a list of numbers")
        qalas_sec.finish()

        phantom_sec = root.subsection("phantom")
        contrast_mode = phantom_sec.take("contrast_mode", "pd")
        echo_times = phantom_sec.take("echo_times_ms", [10.0, 30.0, 60.0, 90.0])
        phantom = PhantomSpec(
            grid=grid,
            contrast_mode=contrast_mode,
            qalas_timing=timing,
            echo_times_ms=tuple(
                _number(v, "phantom.echo_times_ms entry") for v in echo_times
            ),
        )
        phantom_sec.finish()

        noise_sigma = _number(root.take("noise_sigma", 0.0), "noise_sigma")
        if noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")

        recon_sec = root.subsection("recon")
        recon = ReconSettings(
            method=recon_sec.take("method", "cg"),
            lambda_total=_number(recon_sec.take("lambda_total", 0.0), "recon.lambda_total"),
            cg_iters=_int(recon_sec.take("cg_iters", 10), "recon.cg_iters"),
            checkpoint=recon_sec.take("checkpoint", None),
        )
        recon_sec.finish()

        train_sec = root.subsection("train")
        weights = train_sec.take("contrast_weights", None)
        if weights is not None:
            weights = tuple(_number(v, "train.contrast_weights entry") for v in weights)
        optimizer = TrainConfig(
            learning_rate=_number(train_sec.take("learning_rate", 1e-2), "train.learning_rate"),
            steps=_int(train_sec.take("steps", 200), "train.steps"),
            slab_size=_int(train_sec.take("slab_size", 8), "train.slab_size"),
            seed=_int(train_sec.take("seed", 0), "train.seed"),
            contrast_weights=weights,
            cg_iters=_int(train_sec.take("cg_iters", 10), "train.cg_iters"),
        )
        train = TrainSettings(
            optimizer=optimizer,
            n_outer=_int(train_sec.take("n_outer", 10), "train.n_outer"),
            hidden_channels=_int(train_sec.take("hidden_channels", DEFAULT_HIDDEN_CHANNELS), "train.hidden_channels"),
            hidden_layers=_int(train_sec.take("hidden_layers", DEFAULT_HIDDEN_LAYERS), "train.hidden_layers"),
            kernel_size=_int(train_sec.take("kernel_size", DEFAULT_KERNEL_SIZE), "train.kernel_size"),
            lambda_init=_number(train_sec.take("lambda_init", DEFAULT_LAMBDA_INIT), "train.lambda_init"),
        )
        train_sec.finish()

        gfactor_sec = root.subsection("gfactor")
        gfactor = GFactorConfig(
            n_replicas=_int(gfactor_sec.take("n_replicas", 100), "gfactor.n_replicas"),
            noise_sigma=_number(gfactor_sec.take("noise_sigma", 1.0), "gfactor.noise_sigma"),
            seed=_int(gfactor_sec.take("seed", 0), "gfactor.seed"),
        )
        gfactor_sec.finish()

        root.finish()

        return ExperimentConfig(
            seed=seed,
            grid=grid,
            fov_mm=fov_mm,
            n_coils=n_coils,
            coil_width=coil_width,
            coil_phase_cycles=coil_phase,
            wave=wave,
            accel=accel,
            sampling_mode=mode,
            stagger=stagger,
            phantom=phantom,
            noise_sigma=noise_sigma,
            recon=recon,
            train=train,
            qalas_timing=timing,
            t1_grid=tuple(t1_grid) if t1_grid is not None else None,
            t2_grid=tuple(t2_grid) if t2_grid is not None else None,
            gfactor=gfactor,
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    cfg = parse_config(doc)
    return cfg, text


def config_digest(text):
    """Stable hash of the raw config text, recorded in run manifests."""
    import hashlib

    return hashlib.sha256(text.encode() if isinstance(text, str) else text).hexdigest()
