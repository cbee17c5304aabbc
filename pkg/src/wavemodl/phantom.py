"""Digital ellipsoid phantoms, smooth coil maps, and simulated acquisitions."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .qalas import QalasTiming, qalas_signal
from .sampling import SamplingPattern
from .validation import (
    check_finite,
    check_nonnegative,
    check_positive,
    check_positive_int,
)
from .volume import FREQUENCY, CoilSensitivities, MultiCoilData
from .wave import WavePsf, wave_forward_arrays

DEFAULT_GRID = (64, 48, 32)


@dataclass(frozen=True)
class TissueProperties:
    """Relaxation times (ms) and relative proton density of one tissue."""

    name: str
    t1_ms: float
    t2_ms: float
    pd: float

    def __post_init__(self):
        if not (self.t1_ms > self.t2_ms > 0.0):
            raise InvalidInputError(
                f"tissue {self.name!r} needs T1 > T2 > 0, got T1={self.t1_ms}, T2={self.t2_ms}"
            )
        check_nonnegative(self.pd, f"tissue {self.name!r} pd")


DEFAULT_TISSUES = {
    1: TissueProperties("white-matter", 830.0, 70.0, 0.7),
    2: TissueProperties("gray-matter", 1300.0, 90.0, 0.85),
    3: TissueProperties("csf", 4000.0, 2000.0, 1.0),
}


@dataclass(frozen=True)
class TissueMap:
    """Integer label volume plus a per-label tissue table; label 0 is air."""

    labels: np.ndarray
    table: dict

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels)
        if labels.ndim != 3 or not np.issubdtype(labels.dtype, np.integer):
            raise InvalidInputError("labels must be a 3-D integer array")
        present = set(np.unique(labels).tolist()) - {0}
        missing = present - set(self.table)
        if missing:
            raise InvalidInputError(f"labels {sorted(missing)} missing from tissue table")
        for label, tissue in self.table.items():
            if not isinstance(tissue, TissueProperties):
                raise InvalidInputError(f"table entry {label} is not a TissueProperties")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "table", dict(self.table))

    @property
    def shape(self):
        return self.labels.shape

    def property_volume(self, attr):
        """Paint one tissue attribute ('t1_ms', 't2_ms' or 'pd') over the labels."""
        out = np.zeros(self.labels.shape)
        for label, tissue in self.table.items():
            out[self.labels == label] = getattr(tissue, attr)
        return out

    def foreground(self):
        return self.labels > 0


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-lengths and pose in normalized [-1, 1] coordinates."""

    center: tuple
    semi_axes: tuple
    label: int
    angles_deg: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.center) != 3 or len(self.semi_axes) != 3 or len(self.angles_deg) != 3:
            raise InvalidInputError("center, semi_axes and angles_deg must have length 3")
        if any(not a > 0 for a in self.semi_axes):
            raise InvalidInputError(f"semi_axes must be positive, got {self.semi_axes}")
        if self.label < 0:
            raise InvalidInputError("label must be >= 0")


def _rotation(angles_deg):
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def normalized_grid(shape):
    """Voxel-center coordinates mapped to [-1, 1) per axis, isocenter at n//2."""
    axes = [(np.arange(n) - n // 2) / (n / 2.0) for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def rasterize_ellipsoids(shape, ellipsoids):
    """Paint ellipsoid labels in order; later shapes overwrite earlier ones."""
    labels = np.zeros(shape, dtype=np.int32)
    coords = np.stack(normalized_grid(shape), axis=-1)
    for ell in ellipsoids:
        rot = _rotation(ell.angles_deg)
        rel = (coords - np.asarray(ell.center, dtype=float)) @ rot
        q = np.sum((rel / np.asarray(ell.semi_axes, dtype=float)) ** 2, axis=-1)
        labels[q <= 1.0] = ell.label
    return labels


def default_brain_ellipsoids():
    """A simple head: big white-matter ellipsoid, deep gray blobs, CSF gaps."""
    return [
        Ellipsoid(center=(0.0, 0.0, 0.0), semi_axes=(0.92, 0.88, 0.84), label=1),
        Ellipsoid(center=(0.0, -0.38, 0.18), semi_axes=(0.5, 0.34, 0.4), label=2,
                  angles_deg=(0.0, 0.0, 15.0)),
        Ellipsoid(center=(-0.1, 0.42, -0.2), semi_axes=(0.46, 0.3, 0.38), label=2,
                  angles_deg=(0.0, 10.0, -20.0)),
        Ellipsoid(center=(0.25, 0.05, 0.35), semi_axes=(0.34, 0.42, 0.3), label=2),
        Ellipsoid(center=(0.0, 0.0, -0.45), semi_axes=(0.55, 0.3, 0.25), label=3),
        Ellipsoid(center=(-0.35, 0.1, 0.3), semi_axes=(0.22, 0.26, 0.24), label=3),
    ]


@dataclass(frozen=True)
class PhantomSpec:
    """What to rasterize and which contrast generator to drive."""

    grid: tuple = DEFAULT_GRID
    ellipsoids: tuple = None
    tissues: dict = None
    contrast_mode: str = "pd"
    qalas_timing: QalasTiming = field(default_factory=QalasTiming)
    echo_times_ms: tuple = (10.0, 30.0, 60.0, 90.0)

    def __post_init__(self):
        grid = tuple(int(n) for n in self.grid)
        if len(grid) != 3 or any(n < 1 for n in grid):
            raise InvalidInputError(f"grid must be three positive sizes, got {self.grid!r}")
        object.__setattr__(self, "grid", grid)
        ells = self.ellipsoids
        if ells is None:
            ells = default_brain_ellipsoids()
        object.__setattr__(self, "ellipsoids", tuple(ells))
        tissues = self.tissues if self.tissues is not None else dict(DEFAULT_TISSUES)
        object.__setattr__(self, "tissues", tissues)
        if self.contrast_mode not in ("pd", "qalas", "echoes"):
            raise InvalidInputError(
                f"contrast_mode must be pd, qalas or echoes, got {self.contrast_mode!r}"
            )
        tes = tuple(float(t) for t in self.echo_times_ms)
        if any(t < 0 for t in tes) or not tes:
            raise InvalidInputError("echo_times_ms must be non-negative and non-empty")
        object.__setattr__(self, "echo_times_ms", tes)


def contrast_images(tissue_map, spec):
    """Ground-truth contrast stack (n_contrasts, nx, ny, nz), complex-valued.

    Modes: "pd" paints proton density (one contrast), "qalas" evaluates the
    five-contrast steady-state signal per tissue, "echoes" applies
    PD * exp(-TE/T2) per echo time.
    """
    labels = tissue_map.labels
    if spec.contrast_mode == "pd":
        per_label = {lb: [t.pd] for lb, t in tissue_map.table.items()}
    elif spec.contrast_mode == "qalas":
        per_label = {
            lb: list(qalas_signal(t.t1_ms, t.t2_ms, t.pd, spec.qalas_timing))
            for lb, t in tissue_map.table.items()
        }
    else:
        per_label = {
            lb: [t.pd * np.exp(-te / t.t2_ms) for te in spec.echo_times_ms]
            for lb, t in tissue_map.table.items()
        }
    n_contrasts = len(next(iter(per_label.values()))) if per_label else 1
    stack = np.zeros((n_contrasts,) + labels.shape, dtype=np.complex128)
    for lb, values in per_label.items():
        where = labels == lb
        for m, value in enumerate(values):
            stack[m][where] = value
    return stack


def make_phantom(spec=PhantomSpec()):
    """Rasterize the spec into a TissueMap plus its contrast stack."""
    labels = rasterize_ellipsoids(spec.grid, spec.ellipsoids)
    tmap = TissueMap(labels, spec.tissues)
    return tmap, contrast_images(tmap, spec)


def make_coil_sensitivities(ncoils, shape, width=0.9, phase_cycles=0.5):
    """Smooth coil maps on a ring around the (y, z) plane, constant along x.

    Coil c sits at angle 2*pi*c/ncoils on a circle circumscribing the
    normalized FOV square; its magnitude is a Gaussian in distance from the
    coil and its phase a linear ramp along the coil direction. Maps are
    scaled so the root-sum-of-squares peaks at one. By construction the set
    is symmetric under rotation by one coil spacing.
    """
    check_positive_int(ncoils, "ncoils")
    check_positive(width, "width")
    nx, ny, nz = shape
    y = (np.arange(ny) - ny // 2) / (ny / 2.0)
    z = (np.arange(nz) - nz // 2) / (nz / 2.0)
    yy, zz = np.meshgrid(y, z, indexing="ij")
    radius = np.sqrt(2.0)
    maps = np.empty((ncoils, nx, ny, nz), dtype=np.complex128)
    for c in range(ncoils):
        theta = 2.0 * np.pi * c / ncoils
        cy, cz = radius * np.cos(theta), radius * np.sin(theta)
        d2 = (yy - cy) ** 2 + (zz - cz) ** 2
        mag = np.exp(-d2 / (2.0 * width**2))
        phase = 2.0 * np.pi * phase_cycles * (yy * np.cos(theta) + zz * np.sin(theta))
        maps[c] = (mag * np.exp(1j * phase))[None, :, :]
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= rss.max()
    return CoilSensitivities(maps)


def simulate_acquisition(truth, sens, psf, pattern, noise_sigma=0.0, seed=0):
    """Forward-model each contrast and add masked complex Gaussian noise.

    Parameters
    ----------
    truth : ndarray
        Contrast stack (n_contrasts, nx, ny, nz).
    sens : CoilSensitivities
    psf : WavePsf
    pattern : SamplingPattern
        One mask per contrast.
    noise_sigma : float
        Per-component standard deviation of the additive complex noise,
        applied on sampled entries only.
    seed : int

    Returns
    -------
    list of MultiCoilData
    """
    truth = np.asarray(truth, dtype=np.complex128)
    if truth.ndim != 4:
        raise InvalidInputError("truth must be a (n_contrasts, nx, ny, nz) stack")
    check_finite(truth, "truth")
    if not isinstance(sens, CoilSensitivities) or not isinstance(psf, WavePsf):
        raise InvalidInputError("sens must be CoilSensitivities and psf a WavePsf")
    if not isinstance(pattern, SamplingPattern):
        raise InvalidInputError("pattern must be a SamplingPattern")
    check_nonnegative(noise_sigma, "noise_sigma")
    if pattern.n_contrasts != truth.shape[0]:
        raise InvalidInputError(
            f"pattern has {pattern.n_contrasts} masks but truth has "
            f"{truth.shape[0]} contrasts"
        )
    if pattern.grid != truth.shape[2:]:
        raise InvalidInputError(
            f"pattern grid {pattern.grid} does not match volume {truth.shape[2:]}"
        )
    out = []
    for m in range(truth.shape[0]):
        mask = pattern.masks[m]
        k = wave_forward_arrays(truth[m], sens.maps, psf.table, mask)
        if noise_sigma > 0.0:
            rng = np.random.default_rng([int(seed), m])
            noise = noise_sigma * (
                rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape)
            )
            k = k + noise * mask
        out.append(MultiCoilData(k, (FREQUENCY, FREQUENCY, FREQUENCY)))
    return out
