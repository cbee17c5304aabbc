"""Reconstruction quality metrics: error norms, noise amplification, ROI fits."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .sampling import SamplingPattern, full_mask
from .validation import check_nonnegative, check_positive, check_positive_int
from .volume import ComplexVolume
from .wave import WaveOperator


def _as_array(x, name):
    arr = x.data if isinstance(x, ComplexVolume) else np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def nrmse(x, ref, roi=None, magnitude=False):
    """Normalized root-mean-square error in percent, 100 * ||x-ref|| / ||ref||.

    The difference is complex by default; magnitude=True compares |x| to
    |ref| instead. ``roi`` restricts both norms to a boolean region.
    """
    xa = _as_array(x, "x")
    ra = _as_array(ref, "ref")
    if xa.shape != ra.shape:
        raise InvalidInputError(f"shape mismatch: {xa.shape} vs {ra.shape}")
    if roi is not None:
        roi = np.asarray(roi, dtype=bool)
        if roi.shape != ra.shape:
            raise InvalidInputError(f"roi shape {roi.shape} does not match {ra.shape}")
        xa = xa[roi]
        ra = ra[roi]
    if magnitude:
        xa = np.abs(xa)
        ra = np.abs(ra)
    den = np.linalg.norm(ra)
    if den == 0.0:
        raise InvalidInputError("reference has zero norm over the evaluated region")
    return 100.0 * float(np.linalg.norm(xa - ra) / den)


@dataclass(frozen=True)
class GFactorConfig:
    """Monte-Carlo settings for the noise-amplification map."""

    n_replicas: int = 100
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.n_replicas, (int, np.integer)) or self.n_replicas < 2:
            raise InvalidInputError(
                f"n_replicas must be an integer >= 2, got {self.n_replicas!r}"
            )
        check_positive(self.noise_sigma, "noise_sigma")


@dataclass(frozen=True)
class GFactorResult:
    """Geometry-factor map plus a mask of voxels where it is undefined."""

    g: np.ndarray
    undefined: np.ndarray
    accel: int


class _StreamingStd:
    """Welford accumulator for the per-voxel std of complex replicas."""

    def __init__(self):
        self.count = 0
        self.mean = None
        self.m2 = None

    def update(self, x):
        self.count += 1
        if self.mean is None:
            self.mean = x.astype(np.complex128, copy=True)
            self.m2 = np.zeros(x.shape)
            return
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += (np.conj(delta) * (x - self.mean)).real

    def std(self):
        if self.count < 2:
            raise InvalidInputError("need at least two replicas")
        return np.sqrt(self.m2 / (self.count - 1))


def _replica_noise(shape, mask, sigma, seed_key):
    rng = np.random.default_rng(seed_key)
    noise = sigma * (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )
    return noise * mask


def gfactor_map(recon_fn, op, pattern, cfg=GFactorConfig()):
    """Pseudo-replica noise-amplification map of a reconstruction method.

    Feeds ``n_replicas`` pure-noise acquisitions through ``recon_fn`` twice,
    once with the accelerated mask of ``pattern`` and once fully sampled, and
    forms g = std_R / (std_1 * sqrt(R)) voxelwise. Where the fully-sampled
    std is zero the map is set to zero and flagged undefined.

    ``recon_fn(data, op) -> image`` must accept a (ncoils, osx*nx, ny, nz)
    array and a WaveOperator.
    """
    if not isinstance(op, WaveOperator):
        raise InvalidInputError("op must be a WaveOperator")
    if not isinstance(pattern, SamplingPattern):
        raise InvalidInputError("pattern must be a SamplingPattern")
    if pattern.grid != op.shape[1:]:
        raise InvalidInputError(
            f"pattern grid {pattern.grid} does not match operator {op.shape[1:]}"
        )
    accel_mask = pattern.masks[0]
    accel = pattern.spec.total
    ny, nz = pattern.grid
    op_accel = op.with_mask(accel_mask)
    op_full = op.with_mask(full_mask(ny, nz))

    stats = []
    for stage, (stage_op, stage_mask) in enumerate(
        ((op_accel, accel_mask), (op_full, full_mask(ny, nz)))
    ):
        acc = _StreamingStd()
        for rep in range(cfg.n_replicas):
            noise = _replica_noise(
                stage_op.data_shape, stage_mask, cfg.noise_sigma,
                [int(cfg.seed), stage, rep],
            )
            img = recon_fn(noise, stage_op)
            acc.update(_as_array(img, "replica reconstruction"))
        stats.append(acc.std())
    std_r, std_1 = stats
    undefined = std_1 == 0.0
    g = np.zeros(std_r.shape)
    np.divide(std_r, std_1 * np.sqrt(accel), out=g, where=~undefined)
    return GFactorResult(g, undefined, accel)


@dataclass(frozen=True)
class RegressionLine:
    slope: float
    intercept: float
    r: float


@dataclass(frozen=True)
class TissueBoxStats:
    """Box-mean statistics for one tissue: per-parameter means and spreads."""

    label: int
    n_boxes: int
    mean_a: dict
    mean_b: dict
    std_a: dict
    std_b: dict


@dataclass(frozen=True)
class RoiRegressionResult:
    """Per-tissue box statistics plus pooled regressions of b against a."""

    per_tissue: dict
    pooled: dict
    box_values_a: dict
    box_values_b: dict


_PARAM_KEYS = ("t1_ms", "t2_ms", "pd")


def _ols(a, b):
    var = float(np.var(a))
    if var == 0.0:
        return RegressionLine(float("nan"), float("nan"), float("nan"))
    cov = float(np.mean((a - a.mean()) * (b - b.mean())))
    slope = cov / var
    intercept = float(b.mean() - slope * a.mean())
    denom = float(np.std(a) * np.std(b))
    r = cov / denom if denom > 0 else float("nan")
    return RegressionLine(float(slope), intercept, float(r))


def roi_box_regression(maps_a, maps_b, tissue_map, labels=None, n_boxes=50,
                       box=5, seed=0):
    """Compare two parameter-map sets via mean values over random tissue boxes.

    Draws ``n_boxes`` cubic boxes of side ``box`` entirely inside each
    requested tissue label, averages every parameter over each box on both
    sides, and regresses side b against side a pooled across tissues. Raises
    if a tissue cannot host the requested number of distinct boxes, naming
    the achievable count.
    """
    check_positive_int(n_boxes, "n_boxes")
    check_positive_int(box, "box")
    check_nonnegative(seed, "seed")
    lab = tissue_map.labels
    if labels is None:
        labels = sorted(set(np.unique(lab).tolist()) - {0})
    if not labels:
        raise InvalidInputError("no tissue labels to evaluate")
    for name, maps in (("maps_a", maps_a), ("maps_b", maps_b)):
        for key in _PARAM_KEYS:
            arr = getattr(maps, key)
            if arr.shape != lab.shape:
                raise InvalidInputError(
                    f"{name}.{key} shape {arr.shape} does not match labels {lab.shape}"
                )

    per_tissue = {}
    values_a = {k: [] for k in _PARAM_KEYS}
    values_b = {k: [] for k in _PARAM_KEYS}
    for label in labels:
        inside = lab == label
        if min(inside.shape) < box:
            raise InvalidInputError(f"volume smaller than a {box}-voxel box")
        windows = np.lib.stride_tricks.sliding_window_view(inside, (box, box, box))
        valid = windows.all(axis=(3, 4, 5))
        origins = np.argwhere(valid)
        if origins.shape[0] < n_boxes:
            raise InvalidInputError(
                f"tissue {label} admits only {origins.shape[0]} boxes of side "
                f"{box}, need {n_boxes}"
            )
        rng = np.random.default_rng([int(seed), int(label)])
        pick = rng.choice(origins.shape[0], size=n_boxes, replace=False)
        mean_a = {k: np.empty(n_boxes) for k in _PARAM_KEYS}
        mean_b = {k: np.empty(n_boxes) for k in _PARAM_KEYS}
        for i, idx in enumerate(pick):
            ox, oy, oz = origins[idx]
            sl = (slice(ox, ox + box), slice(oy, oy + box), slice(oz, oz + box))
            for key in _PARAM_KEYS:
                mean_a[key][i] = float(np.mean(getattr(maps_a, key)[sl]))
                mean_b[key][i] = float(np.mean(getattr(maps_b, key)[sl]))
        for key in _PARAM_KEYS:
            values_a[key].append(mean_a[key])
            values_b[key].append(mean_b[key])
        per_tissue[label] = TissueBoxStats(
            label=int(label),
            n_boxes=n_boxes,
            mean_a={k: float(mean_a[k].mean()) for k in _PARAM_KEYS},
            mean_b={k: float(mean_b[k].mean()) for k in _PARAM_KEYS},
            std_a={k: float(mean_a[k].std()) for k in _PARAM_KEYS},
            std_b={k: float(mean_b[k].std()) for k in _PARAM_KEYS},
        )
    pooled = {}
    box_values_a = {}
    box_values_b = {}
    for key in _PARAM_KEYS:
        a = np.concatenate(values_a[key])
        b = np.concatenate(values_b[key])
        pooled[key] = _ols(a, b)
        box_values_a[key] = a
        box_values_b[key] = b
    return RoiRegressionResult(per_tissue, pooled, box_values_a, box_values_b)
