"""Complex 3D volume containers and centered unitary Fourier transforms.

Arrays are indexed (x, y, z) with x the readout axis. Each axis carries a
domain tag, either ``"image"`` or ``"frequency"``, which the transform
helpers flip so that mixed-domain states (e.g. frequency along x only) are
explicit rather than implied.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .validation import as_complex_array, check_finite

IMAGE = "image"
FREQUENCY = "frequency"

_AXIS_NAMES = ("x", "y", "z")
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def _check_domains(domains):
    domains = tuple(domains)
    if len(domains) != 3 or any(d not in (IMAGE, FREQUENCY) for d in domains):
        raise InvalidInputError(
            f"domains must be a 3-tuple over {{'image', 'frequency'}}, got {domains!r}"
        )
    return domains


@dataclass(frozen=True)
class ComplexVolume:
    """Dense complex volume with per-axis domain tags.

    Parameters
    ----------
    data : ndarray
        Complex samples, shape (nx, ny, nz), all finite.
    domains : tuple of str
        Domain tag per axis, default all-image.
    """

    data: np.ndarray
    domains: tuple = (IMAGE, IMAGE, IMAGE)

    def __post_init__(self):
        arr = as_complex_array(self.data, "volume data", ndim=3)
        if min(arr.shape) < 1:
            raise InvalidInputError(f"volume axes must be non-empty, got {arr.shape}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "domains", _check_domains(self.domains))

    @property
    def shape(self):
        return self.data.shape

    @property
    def nx(self):
        return self.data.shape[0]

    @property
    def ny(self):
        return self.data.shape[1]

    @property
    def nz(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class MultiCoilData:
    """Per-coil complex samples, shape (ncoils, nx, ny, nz)."""

    data: np.ndarray
    domains: tuple = (FREQUENCY, FREQUENCY, FREQUENCY)

    def __post_init__(self):
        arr = as_complex_array(self.data, "multi-coil data", ndim=4)
        if arr.shape[0] < 1:
            raise InvalidInputError("multi-coil data needs at least one coil")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "domains", _check_domains(self.domains))

    @property
    def ncoils(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape[1:]


@dataclass(frozen=True)
class CoilSensitivities:
    """Complex coil sensitivity maps, shape (ncoils, nx, ny, nz).

    The root-sum-of-squares magnitude must not exceed one anywhere
    (maps are normalized on construction elsewhere, this type only checks).
    """

    maps: np.ndarray

    def __post_init__(self):
        arr = as_complex_array(self.maps, "sensitivity maps", ndim=4)
        if arr.shape[0] < 1:
            raise InvalidInputError("sensitivity maps need at least one coil")
        rss = np.sqrt(np.sum(np.abs(arr) ** 2, axis=0))
        if rss.max() > 1.0 + 1e-9:
            raise InvalidInputError(
                f"sensitivity root-sum-of-squares exceeds 1 (max {rss.max():.6g})"
            )
        object.__setattr__(self, "maps", arr)

    @property
    def ncoils(self):
        return self.maps.shape[0]

    @property
    def shape(self):
        return self.maps.shape[1:]

    def rss(self):
        return np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))


def axis_indices(axes):
    """Normalize an axis selection ('x', 1, ...) to sorted unique indices."""
    out = []
    for a in axes:
        if isinstance(a, str):
            if a not in _AXIS_INDEX:
                raise InvalidInputError(f"unknown axis {a!r}, expected one of x, y, z")
            out.append(_AXIS_INDEX[a])
        elif isinstance(a, (int, np.integer)) and 0 <= int(a) <= 2:
            out.append(int(a))
        else:
            raise InvalidInputError(f"unknown axis {a!r}, expected one of x, y, z")
    if len(set(out)) != len(out):
        raise InvalidInputError(f"duplicate axes in {tuple(axes)!r}")
    if not out:
        raise InvalidInputError("at least one axis is required")
    return tuple(sorted(out))


def fft_centered_array(data, axes, direction="forward"):
    """Centered unitary FFT on a bare ndarray over the given axis indices.

    DC sits at index n//2 on every transformed axis; a forward transform
    followed by the inverse returns the input to round-off.
    """
    if direction not in ("forward", "inverse"):
        raise InvalidInputError(f"direction must be forward or inverse, got {direction!r}")
    shifted = np.fft.ifftshift(data, axes=axes)
    if direction == "forward":
        out = np.fft.fftn(shifted, axes=axes, norm="ortho")
    else:
        out = np.fft.ifftn(shifted, axes=axes, norm="ortho")
    return np.fft.fftshift(out, axes=axes)


def fft_centered(vol, axes, direction="forward"):
    """Transform a ComplexVolume along the named axes, flipping domain tags.

    A forward transform requires the selected axes to be tagged image;
    the inverse requires frequency. Tags on untouched axes are preserved.
    """
    if not isinstance(vol, ComplexVolume):
        raise InvalidInputError("fft_centered expects a ComplexVolume")
    idx = axis_indices(axes)
    want = IMAGE if direction == "forward" else FREQUENCY
    for i in idx:
        if vol.domains[i] != want:
            raise InvalidInputError(
                f"axis {_AXIS_NAMES[i]} is tagged {vol.domains[i]!r}, "
                f"but a {direction} transform needs {want!r}"
            )
    flipped = FREQUENCY if direction == "forward" else IMAGE
    new_domains = tuple(
        flipped if i in idx else d for i, d in enumerate(vol.domains)
    )
    out = fft_centered_array(vol.data, idx, direction)
    check_finite(out, "transform output")
    return ComplexVolume(out, new_domains)


def inner_product(a, b):
    """Discrete inner product sum(conj(a) * b) of two equal-shape volumes."""
    da = a.data if isinstance(a, ComplexVolume) else np.asarray(a)
    db = b.data if isinstance(b, ComplexVolume) else np.asarray(b)
    if da.shape != db.shape:
        raise InvalidInputError(
            f"inner product needs matching shapes, got {da.shape} and {db.shape}"
        )
    return complex(np.vdot(da, db))
