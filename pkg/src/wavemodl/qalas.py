"""Five-contrast quantitative acquisition model and dictionary fitting.

One cycle holds a T2-preparation followed by an acquisition train, then an
inversion and four more trains, each separated by a recovery gap. Because
every event acts affinely on the longitudinal magnetization, a full cycle is
an affine map m -> A*m + B and the periodic steady state is its fixed point
B / (1 - A). Signals are sampled at the center shot of each train.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .validation import (
    as_float_array,
    check_nonnegative,
    check_positive,
    check_positive_int,
)

N_CONTRASTS = 5

# Relative per-contrast loss weights for this sequence, the norm of each
# contrast's simulated signal relative to the last one.
QALAS_CONTRAST_WEIGHTS = (3.26, 2.36, 1.57, 1.12, 1.0)


@dataclass(frozen=True)
class QalasTiming:
    """Timing and flip parameters of one acquisition cycle (times in ms)."""

    t2prep_te_ms: float = 100.0
    gap_ms: float = 900.0
    flip_deg: float = 4.0
    echo_spacing_ms: float = 5.8
    shots_per_train: int = 128
    recovery_delay_ms: float = 0.0

    def __post_init__(self):
        check_nonnegative(self.t2prep_te_ms, "t2prep_te_ms")
        check_nonnegative(self.gap_ms, "gap_ms")
        check_positive(self.flip_deg, "flip_deg")
        if self.flip_deg >= 90.0:
            raise InvalidInputError(
                f"flip_deg must be below 90 for a longitudinal readout train, got {self.flip_deg}"
            )
        check_nonnegative(self.echo_spacing_ms, "echo_spacing_ms")
        check_positive_int(self.shots_per_train, "shots_per_train")
        check_nonnegative(self.recovery_delay_ms, "recovery_delay_ms")


class _AffineState:
    """Tracks the composite affine map m_in -> a*m_in + b through the cycle."""

    __slots__ = ("a", "b")

    def __init__(self):
        self.a = 1.0
        self.b = 0.0

    def scale(self, s):
        self.a *= s
        self.b *= s

    def relax(self, dt_ms, t1_ms):
        # T1 recovery toward unit equilibrium magnetization.
        e = np.exp(-dt_ms / t1_ms)
        self.a *= e
        self.b = self.b * e + (1.0 - e)

    def invert(self):
        self.a = -self.a
        self.b = -self.b


def _propagate(t1_ms, t2_ms, timing):
    """Window sampling coefficients and the full-cycle affine map.

    Returns (windows, cycle) where windows is a list of five (a, b) pairs
    giving the longitudinal magnetization at each train's center shot as an
    affine function of the cycle-entry magnetization, and cycle is the (A, B)
    map across the whole cycle.
    """
    state = _AffineState()
    cos_flip = np.cos(np.deg2rad(timing.flip_deg))
    n = timing.shots_per_train
    windows = []

    def run_train():
        for shot in range(n):
            if shot == n // 2:
                windows.append((state.a, state.b))
            state.scale(cos_flip)
            state.relax(timing.echo_spacing_ms, t1_ms)

    # T2 preparation attenuates the stored magnetization.
    state.scale(np.exp(-timing.t2prep_te_ms / t2_ms))
    run_train()
    state.relax(timing.gap_ms, t1_ms)
    state.invert()
    for _ in range(N_CONTRASTS - 1):
        state.relax(timing.gap_ms, t1_ms)
        run_train()
    state.relax(timing.recovery_delay_ms, t1_ms)
    return windows, (state.a, state.b)


def steady_state_window_mz(t1_ms, t2_ms, timing):
    """Longitudinal magnetization at the five window centers in steady state."""
    check_positive(t1_ms, "t1_ms")
    check_positive(t2_ms, "t2_ms")
    windows, (a, b) = _propagate(t1_ms, t2_ms, timing)
    if not abs(a) < 1.0:
        raise InvalidInputError("cycle map is not a contraction; check timing")
    m_star = b / (1.0 - a)
    return np.array([wa * m_star + wb for wa, wb in windows])


def cycle_window_mz(t1_ms, t2_ms, timing, m_in):
    """Window magnetizations and exit magnetization for one cycle from m_in."""
    check_positive(t1_ms, "t1_ms")
    check_positive(t2_ms, "t2_ms")
    windows, (a, b) = _propagate(t1_ms, t2_ms, timing)
    mz = np.array([wa * m_in + wb for wa, wb in windows])
    return mz, a * m_in + b


def qalas_signal(t1_ms, t2_ms, pd, timing=QalasTiming()):
    """Signed five-contrast steady-state signal for one tissue.

    The acquired signal at each window is pd * sin(flip) * Mz; contrasts
    after the inversion can be negative for long T1.
    """
    check_nonnegative(pd, "pd")
    mz = steady_state_window_mz(t1_ms, t2_ms, timing)
    return pd * np.sin(np.deg2rad(timing.flip_deg)) * mz


def default_t1_grid():
    return np.geomspace(100.0, 5000.0, 64)


def default_t2_grid():
    return np.geomspace(10.0, 2500.0, 48)


@dataclass(frozen=True)
class Dictionary:
    """Unit-norm magnitude atoms over a feasible (T1, T2) grid."""

    atoms: np.ndarray
    t1_ms: np.ndarray
    t2_ms: np.ndarray
    t1_grid: np.ndarray
    t2_grid: np.ndarray
    timing: QalasTiming

    @property
    def n_atoms(self):
        return self.atoms.shape[0]


def build_dictionary(t1_grid=None, t2_grid=None, timing=QalasTiming()):
    """Simulate atoms for every grid pair with T2 <= T1.

    Atoms are the magnitudes of the steady-state signals at unit proton
    density, normalized to unit Euclidean norm.
    """
    t1_grid = default_t1_grid() if t1_grid is None else as_float_array(t1_grid, "t1_grid", ndim=1)
    t2_grid = default_t2_grid() if t2_grid is None else as_float_array(t2_grid, "t2_grid", ndim=1)
    for name, grid in (("t1_grid", t1_grid), ("t2_grid", t2_grid)):
        if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise InvalidInputError(f"{name} must be positive and strictly increasing")
    atoms = []
    t1s = []
    t2s = []
    for t1 in t1_grid:
        for t2 in t2_grid:
            if t2 > t1:
                continue
            sig = np.abs(qalas_signal(t1, t2, 1.0, timing))
            norm = float(np.linalg.norm(sig))
            if norm <= 0.0:
                raise InvalidInputError(
                    f"degenerate atom at T1={t1}, T2={t2}: zero signal"
                )
            atoms.append(sig / norm)
            t1s.append(t1)
            t2s.append(t2)
    if not atoms:
        raise InvalidInputError("no feasible (T1, T2) pairs on the given grids")
    return Dictionary(
        np.asarray(atoms), np.asarray(t1s), np.asarray(t2s), t1_grid, t2_grid, timing
    )


@dataclass(frozen=True)
class ParameterMaps:
    """Voxelwise T1, T2 (ms), proton density, and relative fit residual.

    ``degenerate`` flags voxels that carried no signal (or sat outside the
    fitting mask) and received placeholder values.
    """

    t1_ms: np.ndarray
    t2_ms: np.ndarray
    pd: np.ndarray
    residual: np.ndarray
    degenerate: np.ndarray


def fit_parameter_maps(magnitudes, dictionary, mask=None, chunk=8192):
    """Match each voxel's five-contrast magnitude signal to the dictionary.

    Parameters
    ----------
    magnitudes : ndarray
        Shape (5, nx, ny, nz); complex input is reduced to magnitudes.
    dictionary : Dictionary
    mask : ndarray of bool, optional
        Voxels to fit; others get placeholder values and the degenerate flag.

    The best atom maximizes the inner product with the normalized signal;
    proton density is the raw inner product with the unit-norm atom and the
    residual is ||s - pd*atom|| / ||s||.
    """
    mags = np.asarray(magnitudes)
    if np.iscomplexobj(mags):
        mags = np.abs(mags)
    mags = as_float_array(mags, "magnitudes", ndim=4)
    if mags.shape[0] != N_CONTRASTS:
        raise InvalidInputError(
            f"expected {N_CONTRASTS} contrasts, got {mags.shape[0]}"
        )
    vol_shape = mags.shape[1:]
    if mask is None:
        mask = np.ones(vol_shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != vol_shape:
            raise InvalidInputError(
                f"mask shape {mask.shape} does not match volume {vol_shape}"
            )

    t1_min = dictionary.t1_grid[0]
    t2_min = dictionary.t2_grid[0]
    t1 = np.full(vol_shape, t1_min)
    t2 = np.full(vol_shape, t2_min)
    pd = np.zeros(vol_shape)
    residual = np.zeros(vol_shape)
    degenerate = ~mask.copy()

    signals = mags.reshape(N_CONTRASTS, -1).T
    flat_idx = np.flatnonzero(mask.ravel())
    atoms_t = dictionary.atoms.T
    for start in range(0, flat_idx.size, chunk):
        sel = flat_idx[start:start + chunk]
        s = signals[sel]
        norms = np.linalg.norm(s, axis=1)
        live = norms > 0.0
        scores = s @ atoms_t
        best = np.argmax(scores, axis=1)
        coef = scores[np.arange(sel.size), best]
        res = np.sqrt(np.maximum(norms**2 - coef**2, 0.0))
        rel = np.zeros(sel.size)
        rel[live] = res[live] / norms[live]
        out = (dictionary.t1_ms[best], dictionary.t2_ms[best], coef, rel)
        for target, values, fill in zip(
            (t1, t2, pd, residual), out, (t1_min, t2_min, 0.0, 0.0)
        ):
            v = np.where(live, values, fill)
            target.ravel()[sel] = v
        degenerate.ravel()[sel] = ~live
    return ParameterMaps(t1, t2, pd, residual, degenerate)


@dataclass(frozen=True)
class SynthSequence:
    """Acquisition parameters for a synthesized weighted contrast (ms)."""

    tr_ms: float
    te_ms: float
    ti_ms: float = 0.0
    ti2_ms: float = 0.0


SYNTH_DEFAULTS = {
    "t1w": SynthSequence(tr_ms=2000.0, te_ms=10.0, ti_ms=900.0),
    "t2w": SynthSequence(tr_ms=6000.0, te_ms=100.0),
    "flair": SynthSequence(tr_ms=9000.0, te_ms=100.0, ti_ms=2500.0),
    "pdw": SynthSequence(tr_ms=6000.0, te_ms=10.0),
    "dir": SynthSequence(tr_ms=9000.0, te_ms=100.0, ti_ms=3000.0, ti2_ms=450.0),
    "psir": SynthSequence(tr_ms=2000.0, te_ms=10.0, ti_ms=400.0),
}


def synthesize_contrast(maps, kind, sequence=None):
    """Closed-form weighted image from fitted parameter maps.

    Inversion-recovery kinds (t1w, flair, psir) use
    E = 1 - 2*exp(-TI/T1) + exp(-TR/T1); saturation-recovery kinds (t2w,
    pdw) use E = 1 - exp(-TR/T1); dir applies two inversions. The signal is
    PD * E * exp(-TE/T2), returned as a magnitude except for psir, which
    keeps its sign.
    """
    if kind not in SYNTH_DEFAULTS:
        raise InvalidInputError(
            f"unknown contrast kind {kind!r}, expected one of {sorted(SYNTH_DEFAULTS)}"
        )
    seq = SYNTH_DEFAULTS[kind] if sequence is None else sequence
    check_positive(seq.tr_ms, "tr_ms")
    check_nonnegative(seq.te_ms, "te_ms")
    with np.errstate(divide="ignore"):
        t1 = maps.t1_ms
        t2 = maps.t2_ms
        if kind in ("t1w", "flair", "psir"):
            check_positive(seq.ti_ms, "ti_ms")
            e = 1.0 - 2.0 * np.exp(-seq.ti_ms / t1) + np.exp(-seq.tr_ms / t1)
        elif kind == "dir":
            check_positive(seq.ti_ms, "ti_ms")
            check_positive(seq.ti2_ms, "ti2_ms")
            e = (
                1.0
                - 2.0 * np.exp(-seq.ti2_ms / t1)
                + 2.0 * np.exp(-(seq.ti_ms + seq.ti2_ms) / t1)
                - np.exp(-seq.tr_ms / t1)
            )
        else:
            e = 1.0 - np.exp(-seq.tr_ms / t1)
        signal = maps.pd * e * np.exp(-seq.te_ms / t2)
    if kind == "psir":
        return signal
    return np.abs(signal)


def contrast_norm_weights(stack):
    """Per-contrast loss weights: each contrast's norm over the last one's."""
    arr = np.asarray(stack)
    if arr.ndim < 2:
        raise InvalidInputError("stack must have a leading contrast axis")
    norms = np.array([np.linalg.norm(arr[m]) for m in range(arr.shape[0])])
    if norms[-1] <= 0:
        raise InvalidInputError("last contrast has zero norm")
    return norms / norms[-1]
