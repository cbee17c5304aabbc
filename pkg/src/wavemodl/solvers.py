"""Conjugate-gradient solvers for regularized normal equations.

Everything here solves (A^H A + lam * I) x = rhs with A^H A supplied as a
callable; iteration count is fixed by default (tol = 0) so that runs are
reproducible and differentiable step-for-step.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalFailureError
from .validation import check_nonnegative
from .volume import IMAGE, ComplexVolume, MultiCoilData
from .wave import WaveOperator, wave_adjoint_arrays


@dataclass(frozen=True)
class CgConfig:
    """Iteration budget and Tikhonov weight for the normal-equation solver.

    tol = 0 runs exactly max_iters iterations (barring exact convergence),
    which keeps solves deterministic across runs and platforms.
    """

    max_iters: int = 10
    tol: float = 0.0
    lambda_total: float = 0.0

    def __post_init__(self):
        if not isinstance(self.max_iters, (int, np.integer)) or self.max_iters < 1:
            raise InvalidInputError(f"max_iters must be >= 1, got {self.max_iters!r}")
        check_nonnegative(self.tol, "tol")
        check_nonnegative(self.lambda_total, "lambda_total")


def cg_solve_arrays(apply_normal, rhs, lam, max_iters, tol=0.0, x0=None):
    """Conjugate gradients on (apply_normal + lam*I) x = rhs over ndarrays.

    Returns (x, residual_norms) where residual_norms[k] is ||r|| entering
    iteration k (residual_norms[0] is the initial residual norm).
    """
    x = np.zeros_like(rhs) if x0 is None else x0.astype(np.complex128, copy=True)
    r = rhs - (apply_normal(x) + lam * x)
    p = r.copy()
    rs = np.vdot(r, r).real
    resnorms = [np.sqrt(rs)]
    for k in range(max_iters):
        if not np.isfinite(rs):
            raise NumericalFailureError(
                f"non-finite residual at iteration {k}", iteration=k
            )
        if rs == 0.0:
            break
        if tol > 0.0 and resnorms[-1] <= tol * resnorms[0]:
            break
        ap = apply_normal(p) + lam * p
        denom = np.vdot(p, ap).real
        if not np.isfinite(denom):
            raise NumericalFailureError(
                f"non-finite curvature at iteration {k}", iteration=k
            )
        if denom <= 0.0:
            # Loss of positive-definiteness to round-off; no descent direction.
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = np.vdot(r, r).real
        beta = rs_new / rs
        p = r + beta * p
        rs = rs_new
        resnorms.append(np.sqrt(rs))
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError(
            f"non-finite solution after {len(resnorms) - 1} iterations",
            iteration=len(resnorms) - 1,
        )
    return x, resnorms


def cg_normal_solve(rhs, normal_op, lambda_total=None, cfg=CgConfig(), x0=None,
                    return_info=False):
    """Solve (A^H A + lam*I) x = rhs for a ComplexVolume right-hand side.

    ``normal_op`` maps an (nx, ny, nz) array to A^H A applied to it.
    ``lambda_total`` overrides cfg.lambda_total when given.
    """
    if not isinstance(rhs, ComplexVolume):
        raise InvalidInputError("rhs must be a ComplexVolume")
    lam = cfg.lambda_total if lambda_total is None else float(lambda_total)
    check_nonnegative(lam, "lambda_total")
    x0_arr = None
    if x0 is not None:
        x0_arr = x0.data if isinstance(x0, ComplexVolume) else np.asarray(x0)
        if x0_arr.shape != rhs.data.shape:
            raise InvalidInputError(
                f"x0 shape {x0_arr.shape} does not match rhs {rhs.data.shape}"
            )
    x, resnorms = cg_solve_arrays(
        normal_op, rhs.data, lam, cfg.max_iters, cfg.tol, x0_arr
    )
    vol = ComplexVolume(x, (IMAGE, IMAGE, IMAGE))
    if return_info:
        return vol, {"residual_norms": resnorms, "iterations": len(resnorms) - 1}
    return vol


def wave_caipi_recon(data, op, cfg=CgConfig()):
    """SENSE-style least-squares reconstruction from wave-encoded k-space.

    Solves (A^H A + lam*I) x = A^H b by conjugate gradients from zero.
    """
    if isinstance(data, MultiCoilData):
        b = data.data
    else:
        b = np.asarray(data, dtype=np.complex128)
    if not isinstance(op, WaveOperator):
        raise InvalidInputError("op must be a WaveOperator")
    if b.shape != op.data_shape:
        raise InvalidInputError(
            f"data shape {b.shape} does not match operator {op.data_shape}"
        )
    rhs = wave_adjoint_arrays(b, op.sens.maps, op.psf.table, op.mask)
    x, _ = cg_solve_arrays(op.normal, rhs, cfg.lambda_total, cfg.max_iters, cfg.tol)
    return ComplexVolume(x, (IMAGE, IMAGE, IMAGE))


def dc_update(data, ops, lambda1, lambda2, eta=None, zeta=None, x_prev=None,
              cg_iters=10):
    """Data-consistency step of the unrolled reconstruction, per contrast.

    Solves, for each contrast m,

        (A_m^H A_m + (lambda1 + lambda2) I) x_m
            = A_m^H b_m + lambda1 * eta_m + lambda2 * zeta_m

    by conjugate gradients, warm-started from ``x_prev`` when given.

    Parameters
    ----------
    data : sequence of MultiCoilData or ndarray
        Acquired k-space per contrast.
    ops : sequence of WaveOperator
    lambda1, lambda2 : float
        Non-negative consistency weights for the two prior estimates.
    eta, zeta : ndarray, optional
        Prior stacks (n_contrasts, nx, ny, nz); omitted means zero.
    x_prev : ndarray, optional
        Warm-start stack of the same shape.

    Returns
    -------
    ndarray of shape (n_contrasts, nx, ny, nz)
    """
    check_nonnegative(lambda1, "lambda1")
    check_nonnegative(lambda2, "lambda2")
    n_contrasts = len(ops)
    if len(data) != n_contrasts:
        raise InvalidInputError(
            f"{len(data)} data sets for {n_contrasts} operators"
        )
    lam = lambda1 + lambda2
    out = np.empty((n_contrasts,) + ops[0].shape, dtype=np.complex128)
    for m in range(n_contrasts):
        op = ops[m]
        b = data[m].data if isinstance(data[m], MultiCoilData) else np.asarray(data[m])
        rhs = wave_adjoint_arrays(b, op.sens.maps, op.psf.table, op.mask)
        if eta is not None:
            rhs = rhs + lambda1 * np.asarray(eta)[m]
        if zeta is not None:
            rhs = rhs + lambda2 * np.asarray(zeta)[m]
        x0 = None if x_prev is None else np.asarray(x_prev)[m]
        out[m], _ = cg_solve_arrays(op.normal, rhs, lam, cg_iters, 0.0, x0)
    return out
