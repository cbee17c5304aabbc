"""Cartesian undersampling lattices with interleaved kz shifts.

Masks live on the (ky, kz) plane and are boolean arrays of shape (ny, nz).
Acceleration R = ry * rz keeps every ry-th ky row and every rz-th kz column,
with the kz offset advancing by ``caipi_shift`` from one sampled row to the
next so that aliasing spreads across both axes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .validation import check_positive_int


@dataclass(frozen=True)
class AccelSpec:
    """Acceleration factors and inter-row shift of the sampling lattice."""

    ry: int
    rz: int
    caipi_shift: int = 0

    def __post_init__(self):
        check_positive_int(self.ry, "ry")
        check_positive_int(self.rz, "rz")
        if not isinstance(self.caipi_shift, (int, np.integer)) or not (
            0 <= self.caipi_shift < self.rz
        ):
            raise InvalidInputError(
                f"caipi_shift must lie in [0, rz={self.rz}), got {self.caipi_shift!r}"
            )

    @property
    def total(self):
        return self.ry * self.rz


def make_caipi_mask(ny, nz, spec, offset=(0, 0)):
    """Boolean sampling mask on an (ny, nz) grid.

    Row iy is sampled iff (iy - offset[0]) is a non-negative multiple of ry.
    Within sampled row number a (counting from the first sampled row), the
    kz comb starts at ((a * caipi_shift + offset[1]) mod rz) and repeats
    every rz.
    """
    check_positive_int(ny, "ny")
    check_positive_int(nz, "nz")
    if not isinstance(spec, AccelSpec):
        raise InvalidInputError("spec must be an AccelSpec")
    dy, dz = offset
    if not (0 <= dy < spec.ry):
        raise InvalidInputError(f"offset[0] must lie in [0, ry={spec.ry}), got {dy!r}")
    if not (0 <= dz < spec.rz):
        raise InvalidInputError(f"offset[1] must lie in [0, rz={spec.rz}), got {dz!r}")
    if spec.ry > ny or spec.rz > nz:
        raise InvalidInputError(
            f"acceleration {spec.ry}x{spec.rz} does not fit a {ny}x{nz} grid"
        )
    mask = np.zeros((ny, nz), dtype=bool)
    for a, iy in enumerate(range(int(dy), ny, spec.ry)):
        start = (a * spec.caipi_shift + int(dz)) % spec.rz
        mask[iy, start::spec.rz] = True
    return mask


def full_mask(ny, nz):
    return np.ones((ny, nz), dtype=bool)


def default_stagger(n_contrasts, ry, rz):
    """Per-contrast lattice offsets that walk the ry x rz cell row-first."""
    return tuple((m % ry, (m // ry) % rz) for m in range(n_contrasts))


@dataclass(frozen=True)
class SamplingPattern:
    """A per-contrast set of masks drawn from one acceleration spec."""

    masks: np.ndarray
    spec: AccelSpec
    offsets: tuple
    mode: str

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 3 or masks.shape[0] < 1:
            raise InvalidInputError("masks must have shape (n_contrasts, ny, nz)")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "offsets", tuple(tuple(o) for o in self.offsets))

    @property
    def n_contrasts(self):
        return self.masks.shape[0]

    @property
    def grid(self):
        return self.masks.shape[1:]


def make_multicontrast_pattern(ny, nz, spec, n_contrasts, mode="staggered", stagger=None):
    """Build per-contrast masks, either identical or staggered across the cell.

    In staggered mode each contrast gets a distinct (dy, dz) offset inside
    the ry x rz cell, so the sampled lattices are pairwise disjoint. More
    contrasts than cells is rejected.
    """
    check_positive_int(n_contrasts, "n_contrasts")
    if mode not in ("staggered", "fixed"):
        raise InvalidInputError(f"mode must be staggered or fixed, got {mode!r}")
    if mode == "fixed":
        offsets = tuple((0, 0) for _ in range(n_contrasts))
        base = make_caipi_mask(ny, nz, spec)
        masks = np.broadcast_to(base, (n_contrasts,) + base.shape).copy()
        return SamplingPattern(masks, spec, offsets, mode)
    if n_contrasts > spec.total:
        raise InvalidInputError(
            f"cannot stagger {n_contrasts} contrasts over a {spec.ry}x{spec.rz} cell "
            f"({spec.total} distinct offsets available)"
        )
    if stagger is None:
        offsets = default_stagger(n_contrasts, spec.ry, spec.rz)
    else:
        offsets = tuple(tuple(int(v) for v in o) for o in stagger)
        if len(offsets) != n_contrasts:
            raise InvalidInputError(
                f"stagger must list {n_contrasts} offsets, got {len(offsets)}"
            )
    if len(set(offsets)) != len(offsets):
        raise InvalidInputError(f"stagger offsets must be distinct, got {offsets}")
    masks = np.stack(
        [make_caipi_mask(ny, nz, spec, offset=o) for o in offsets], axis=0
    )
    return SamplingPattern(masks, spec, offsets, mode)
