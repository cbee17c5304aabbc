"""Wave-encoded acquisition operator and its exact adjoint.

During each readout, sinusoidal gradients on the two phase-encode axes trace
a corkscrew through k-space. In the hybrid domain (frequency along x, image
along y and z) this is a pure phase factor per (kx, y, z); applying it after
an oversampled readout FFT, then transforming y and z and masking, gives the
forward model. The adjoint reverses every step with the conjugate phase.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .validation import (
    check_finite,
    check_nonnegative,
    check_positive,
    check_positive_int,
    check_shape,
)
from .volume import (
    FREQUENCY,
    IMAGE,
    ComplexVolume,
    CoilSensitivities,
    MultiCoilData,
    fft_centered_array,
)

# Proton gyromagnetic ratio over 2*pi, Hz per tesla.
GAMMA_BAR_HZ_PER_T = 42.5764e6


@dataclass(frozen=True)
class WaveGradientSpec:
    """Sinusoidal readout-gradient parameters.

    Parameters
    ----------
    gmax_mt_per_m : float
        Peak gradient amplitude in mT/m. Zero disables wave encoding.
    cycles : int
        Number of full sine periods played during one readout.
    bw_per_pixel_hz : float
        Readout bandwidth per pixel in Hz; the readout duration is its
        reciprocal.
    fov_m : tuple of float
        Field of view (x, y, z) in meters.
    osx : int
        Readout oversampling factor, >= 1.
    """

    gmax_mt_per_m: float
    cycles: int
    bw_per_pixel_hz: float
    fov_m: tuple
    osx: int = 2

    def __post_init__(self):
        check_nonnegative(self.gmax_mt_per_m, "gmax_mt_per_m")
        check_positive_int(self.cycles, "cycles")
        check_positive(self.bw_per_pixel_hz, "bw_per_pixel_hz")
        fov = tuple(float(v) for v in self.fov_m)
        if len(fov) != 3 or any(not v > 0 for v in fov):
            raise InvalidInputError(f"fov_m must be three positive lengths, got {self.fov_m!r}")
        object.__setattr__(self, "fov_m", fov)
        check_positive_int(self.osx, "osx")

    @property
    def readout_duration_s(self):
        return 1.0 / self.bw_per_pixel_hz


def gradient_moment(spec, nsamples):
    """Accumulated k-space offsets (cycles/m) at each readout sample.

    Samples sit at the interval midpoints t_j = (j + 0.5) * T / nsamples of
    the readout window T. The y gradient is a cosine, the z gradient a sine,
    both with ``cycles`` periods over the window, so the offsets are the
    analytically integrated moments

        ky(t) = gamma_bar * G * sin(w t) / w
        kz(t) = gamma_bar * G * (1 - cos(w t)) / w

    with w = 2*pi*cycles/T.

    Returns
    -------
    ky_off, kz_off : ndarray
        Offsets in cycles/m, each of shape (nsamples,).
    """
    check_positive_int(nsamples, "nsamples")
    t_ro = spec.readout_duration_s
    t = (np.arange(nsamples) + 0.5) * (t_ro / nsamples)
    if spec.gmax_mt_per_m == 0.0:
        zeros = np.zeros(nsamples)
        return zeros, zeros.copy()
    g = spec.gmax_mt_per_m * 1e-3
    omega = 2.0 * np.pi * spec.cycles / t_ro
    ky_off = GAMMA_BAR_HZ_PER_T * g * np.sin(omega * t) / omega
    kz_off = GAMMA_BAR_HZ_PER_T * g * (1.0 - np.cos(omega * t)) / omega
    return ky_off, kz_off


@dataclass(frozen=True)
class WavePsf:
    """Unit-modulus phase table over (kx, y, z), shape (osx*nx, ny, nz)."""

    table: np.ndarray
    osx: int = 1

    def __post_init__(self):
        table = np.ascontiguousarray(self.table, dtype=np.complex128)
        if table.ndim != 3:
            raise InvalidInputError("psf table must be 3-D")
        check_finite(table, "psf table")
        if np.max(np.abs(np.abs(table) - 1.0)) > 1e-9:
            raise InvalidInputError("psf table entries must have unit modulus")
        check_positive_int(self.osx, "osx")
        if table.shape[0] % self.osx != 0:
            raise InvalidInputError(
                f"psf kx length {table.shape[0]} is not a multiple of osx={self.osx}"
            )
        object.__setattr__(self, "table", table)

    @property
    def nx(self):
        return self.table.shape[0] // self.osx


def _centered_coords(n, fov):
    # Voxel centers, isocenter at index n // 2.
    return (np.arange(n) - n // 2) * (fov / n)


def make_wave_psf(spec, nx, ny, nz):
    """Phase table exp(-2i*pi*(ky(t_j)*y + kz(t_j)*z)) on the oversampled grid.

    Readout sample j corresponds to the j-th centered kx bin; y and z are
    voxel-center coordinates with the isocenter at index n // 2, where the
    table is identically one.
    """
    check_positive_int(nx, "nx")
    check_positive_int(ny, "ny")
    check_positive_int(nz, "nz")
    nsamples = spec.osx * nx
    ky_off, kz_off = gradient_moment(spec, nsamples)
    y = _centered_coords(ny, spec.fov_m[1])
    z = _centered_coords(nz, spec.fov_m[2])
    phase = ky_off[:, None, None] * y[None, :, None] + kz_off[:, None, None] * z[None, None, :]
    table = np.exp(-2j * np.pi * phase)
    return WavePsf(table, osx=spec.osx)


def _pad_readout(data, nx_os):
    nx = data.shape[0]
    if nx_os == nx:
        return data
    lo = (nx_os - nx) // 2
    out = np.zeros((nx_os,) + data.shape[1:], dtype=data.dtype)
    out[lo:lo + nx] = data
    return out


def _crop_readout(data, nx):
    nx_os = data.shape[0]
    if nx_os == nx:
        return data
    lo = (nx_os - nx) // 2
    return data[lo:lo + nx]


def wave_forward_arrays(x, sens, psf_table, mask):
    """Forward model on bare arrays: x (nx,ny,nz) -> (ncoils, osx*nx, ny, nz)."""
    nx = x.shape[0]
    nx_os = psf_table.shape[0]
    out = np.empty((sens.shape[0], nx_os) + x.shape[1:], dtype=np.complex128)
    for c in range(sens.shape[0]):
        coil = sens[c] * x
        hybrid = fft_centered_array(_pad_readout(coil, nx_os), (0,), "forward")
        hybrid *= psf_table
        k = fft_centered_array(hybrid, (1, 2), "forward")
        out[c] = k * mask
    return out


def wave_adjoint_arrays(b, sens, psf_table, mask):
    """Exact adjoint of :func:`wave_forward_arrays`; returns (nx, ny, nz)."""
    nx_os = psf_table.shape[0]
    nx = sens.shape[1]
    acc = np.zeros(sens.shape[1:], dtype=np.complex128)
    conj_psf = np.conj(psf_table)
    for c in range(sens.shape[0]):
        hybrid = fft_centered_array(b[c] * mask, (1, 2), "inverse")
        hybrid *= conj_psf
        img_os = fft_centered_array(hybrid, (0,), "inverse")
        acc += np.conj(sens[c]) * _crop_readout(img_os, nx)
    return acc


def _check_operator_inputs(sens, psf, mask, shape):
    nx, ny, nz = shape
    check_shape(sens.maps, (sens.ncoils, nx, ny, nz), "sensitivity maps")
    check_shape(psf.table, (psf.osx * nx, ny, nz), "psf table")
    m = np.asarray(mask)
    check_shape(m, (ny, nz), "sampling mask")
    if m.dtype != bool:
        if not np.all((m == 0) | (m == 1)):
            raise InvalidInputError("sampling mask must be binary")
        m = m.astype(bool)
    if not m.any():
        raise InvalidInputError("sampling mask selects no samples")
    return m


def wave_forward(vol, sens, psf, mask):
    """Apply the wave-encoded acquisition to an image-domain volume.

    Returns multi-coil k-space of shape (ncoils, osx*nx, ny, nz) with
    unsampled entries exactly zero.
    """
    if not isinstance(vol, ComplexVolume):
        raise InvalidInputError("wave_forward expects a ComplexVolume")
    if vol.domains != (IMAGE, IMAGE, IMAGE):
        raise InvalidInputError(f"input must be image-domain on all axes, got {vol.domains}")
    m = _check_operator_inputs(sens, psf, mask, vol.shape)
    out = wave_forward_arrays(vol.data, sens.maps, psf.table, m)
    return MultiCoilData(out, (FREQUENCY, FREQUENCY, FREQUENCY))


def wave_adjoint(data, sens, psf, mask):
    """Apply the adjoint of the wave-encoded acquisition to coil k-space."""
    if not isinstance(data, MultiCoilData):
        raise InvalidInputError("wave_adjoint expects MultiCoilData")
    if data.domains != (FREQUENCY, FREQUENCY, FREQUENCY):
        raise InvalidInputError(
            f"input must be frequency-domain on all axes, got {data.domains}"
        )
    nx = sens.maps.shape[1]
    m = _check_operator_inputs(sens, psf, mask, (nx,) + tuple(data.data.shape[2:]))
    if data.ncoils != sens.ncoils:
        raise InvalidInputError(
            f"coil count mismatch: data has {data.ncoils}, maps have {sens.ncoils}"
        )
    check_shape(data.data, (sens.ncoils, psf.table.shape[0]) + psf.table.shape[1:], "coil data")
    out = wave_adjoint_arrays(data.data, sens.maps, psf.table, m)
    return ComplexVolume(out, (IMAGE, IMAGE, IMAGE))


class WaveOperator:
    """Bundles sensitivities, phase table and mask into one linear operator.

    Exposes array-level ``forward``, ``adjoint`` and ``normal`` used by the
    solvers; the container-level API lives in :func:`wave_forward` and
    :func:`wave_adjoint`.
    """

    def __init__(self, sens, psf, mask):
        if not isinstance(sens, CoilSensitivities):
            raise InvalidInputError("sens must be CoilSensitivities")
        if not isinstance(psf, WavePsf):
            raise InvalidInputError("psf must be a WavePsf")
        shape = sens.shape
        self.mask = _check_operator_inputs(sens, psf, mask, shape)
        self.sens = sens
        self.psf = psf
        self.shape = shape
        self.data_shape = (sens.ncoils, psf.table.shape[0]) + shape[1:]

    def forward(self, x):
        return wave_forward_arrays(x, self.sens.maps, self.psf.table, self.mask)

    def adjoint(self, b):
        return wave_adjoint_arrays(b, self.sens.maps, self.psf.table, self.mask)

    def normal(self, x):
        return self.adjoint(self.forward(x))

    def with_mask(self, mask):
        return WaveOperator(self.sens, self.psf, mask)
