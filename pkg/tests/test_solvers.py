import numpy as np
import pytest

from wavemodl.errors import InvalidInputError, NumericalFailureError
from wavemodl.phantom import make_coil_sensitivities
from wavemodl.sampling import AccelSpec, full_mask, make_caipi_mask
from wavemodl.solvers import (
    CgConfig,
    cg_normal_solve,
    cg_solve_arrays,
    dc_update,
    wave_caipi_recon,
)
from wavemodl.volume import IMAGE, ComplexVolume
from wavemodl.wave import WaveGradientSpec, WaveOperator, make_wave_psf


def make_op(nx=8, ny=6, nz=4, ncoils=3, accel=(2, 2, 1), gmax=7.0):
    spec = WaveGradientSpec(gmax, 4, 280.0, (0.2, 0.18, 0.14), osx=2)
    sens = make_coil_sensitivities(ncoils, (nx, ny, nz), width=0.8)
    psf = make_wave_psf(spec, nx, ny, nz)
    mask = make_caipi_mask(ny, nz, AccelSpec(*accel)) if accel != (1, 1, 0) \
        else full_mask(ny, nz)
    return WaveOperator(sens, psf, mask)


def dense_normal(op):
    n = int(np.prod(op.shape))
    cols = []
    for i in range(n):
        e = np.zeros(n, dtype=complex)
        e[i] = 1.0
        cols.append(op.normal(e.reshape(op.shape)).ravel())
    return np.stack(cols, axis=1)


class TestCgOnSmallSystems:
    def test_matches_dense_solve_on_spd_matrix(self):
        # Oracle: direct solve of the same Hermitian positive-definite system.
        rng = np.random.default_rng(0)
        n = 24
        m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        h = m.conj().T @ m + 0.5 * np.eye(n)
        rhs = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        lam = 0.3
        want = np.linalg.solve(h + lam * np.eye(n), rhs)
        got, resnorms = cg_solve_arrays(lambda v: h @ v, rhs, lam, max_iters=4 * n)
        assert np.linalg.norm(got - want) <= 1e-8 * np.linalg.norm(want)
        assert resnorms[-1] < 1e-8 * resnorms[0]

    def test_residual_norms_decrease(self):
        rng = np.random.default_rng(1)
        n = 16
        m = rng.standard_normal((n, n))
        h = m.T @ m + np.eye(n)
        rhs = rng.standard_normal(n).astype(complex)
        _, resnorms = cg_solve_arrays(lambda v: h @ v, rhs, 0.0, max_iters=4 * n)
        # CG minimizes the energy norm; the 2-norm of the residual is not
        # strictly monotone, but must shrink overall and end tiny.
        assert resnorms[-1] < 1e-8 * resnorms[0]

    def test_identity_system_converges_in_one_step(self):
        rhs = np.array([1.0 + 2j, -3.0, 0.5j])
        got, resnorms = cg_solve_arrays(lambda v: v, rhs, 0.0, max_iters=5)
        np.testing.assert_allclose(got, rhs, atol=1e-14)
        assert len(resnorms) == 2

    def test_zero_rhs_returns_zero(self):
        got, resnorms = cg_solve_arrays(
            lambda v: v, np.zeros(4, dtype=complex), 0.0, max_iters=5
        )
        assert not got.any()
        assert len(resnorms) == 1

    def test_warm_start_exact_solution_stays_put(self):
        rng = np.random.default_rng(2)
        n = 8
        m = rng.standard_normal((n, n))
        h = m.T @ m + np.eye(n)
        x_true = rng.standard_normal(n).astype(complex)
        rhs = h @ x_true
        got, resnorms = cg_solve_arrays(
            lambda v: h @ v, rhs, 0.0, max_iters=5, x0=x_true
        )
        np.testing.assert_allclose(got, x_true, atol=1e-10)
        assert resnorms[0] <= 1e-10 * np.linalg.norm(rhs)

    def test_warm_start_beats_cold_start(self):
        rng = np.random.default_rng(3)
        n = 40
        m = rng.standard_normal((n, n))
        h = m.T @ m + 0.1 * np.eye(n)
        rhs = rng.standard_normal(n).astype(complex)
        x_ref = np.linalg.solve(h, rhs)
        cold, _ = cg_solve_arrays(lambda v: h @ v, rhs, 0.0, max_iters=4)
        warm, _ = cg_solve_arrays(
            lambda v: h @ v, rhs, 0.0, max_iters=4, x0=0.9 * x_ref
        )
        assert np.linalg.norm(warm - x_ref) < np.linalg.norm(cold - x_ref)

    def test_tolerance_stops_early(self):
        rng = np.random.default_rng(4)
        n = 30
        m = rng.standard_normal((n, n))
        h = m.T @ m + np.eye(n)
        rhs = rng.standard_normal(n).astype(complex)
        _, res_full = cg_solve_arrays(lambda v: h @ v, rhs, 0.0, max_iters=n)
        _, res_tol = cg_solve_arrays(
            lambda v: h @ v, rhs, 0.0, max_iters=n, tol=1e-2
        )
        assert len(res_tol) < len(res_full)
        assert res_tol[-1] <= 1e-2 * res_tol[0]

    def test_nan_rhs_raises_numerical_failure(self):
        rhs = np.array([np.nan + 0j, 1.0])
        with pytest.raises(NumericalFailureError) as e:
            cg_solve_arrays(lambda v: v, rhs, 0.0, max_iters=3)
        assert e.value.iteration == 0

    def test_overflowing_operator_raises(self):
        rhs = np.full(4, 1e200 + 0j)
        with pytest.raises(NumericalFailureError):
            cg_solve_arrays(lambda v: 1e200 * v, rhs, 0.0, max_iters=8)


class TestWaveRecon:
    def test_fully_sampled_noiseless_recovery(self):
        # With R = 1 the normal operator is well conditioned and CG recovers
        # the true image to near machine precision.
        rng = np.random.default_rng(5)
        op = make_op(accel=(1, 1, 0))
        x_true = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        data = op.forward(x_true)
        rec = wave_caipi_recon(data, op, CgConfig(max_iters=60))
        err = np.linalg.norm(rec.data - x_true) / np.linalg.norm(x_true)
        assert err <= 1e-8

    def test_matches_dense_regularized_solve(self):
        rng = np.random.default_rng(6)
        op = make_op()
        h = dense_normal(op)
        n = h.shape[0]
        x_true = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        data = op.forward(x_true)
        lam = 0.05
        rhs = op.adjoint(data).ravel()
        want = np.linalg.solve(h + lam * np.eye(n), rhs).reshape(op.shape)
        rec = wave_caipi_recon(data, op, CgConfig(max_iters=200, lambda_total=lam))
        assert np.linalg.norm(rec.data - want) <= 1e-8 * np.linalg.norm(want)

    def test_undersampled_needs_prior_or_iterations(self):
        rng = np.random.default_rng(7)
        op = make_op(accel=(2, 2, 1))
        x_true = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        data = op.forward(x_true)
        few = wave_caipi_recon(data, op, CgConfig(max_iters=2))
        many = wave_caipi_recon(data, op, CgConfig(max_iters=80))
        err_few = np.linalg.norm(few.data - x_true)
        err_many = np.linalg.norm(many.data - x_true)
        assert err_many < err_few

    def test_shape_mismatch_rejected(self):
        op = make_op()
        with pytest.raises(InvalidInputError):
            wave_caipi_recon(np.zeros((2, 4, 6, 4), dtype=complex), op)


class TestNormalSolveApi:
    def test_volume_wrapper_and_info(self):
        rng = np.random.default_rng(8)
        op = make_op()
        x_true = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        rhs = ComplexVolume(op.normal(x_true) + 0.1 * x_true)
        vol, info = cg_normal_solve(
            rhs, op.normal, lambda_total=0.1,
            cfg=CgConfig(max_iters=120), return_info=True,
        )
        assert vol.domains == (IMAGE, IMAGE, IMAGE)
        assert info["iterations"] == len(info["residual_norms"]) - 1
        assert np.linalg.norm(vol.data - x_true) <= 1e-6 * np.linalg.norm(x_true)

    def test_lambda_override_changes_solution(self):
        rng = np.random.default_rng(9)
        op = make_op()
        rhs = ComplexVolume(
            rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        )
        a = cg_normal_solve(rhs, op.normal, cfg=CgConfig(max_iters=15))
        b = cg_normal_solve(
            rhs, op.normal, lambda_total=1.0, cfg=CgConfig(max_iters=15)
        )
        assert np.linalg.norm(a.data - b.data) > 1e-6

    def test_rejects_plain_array_rhs(self):
        op = make_op()
        with pytest.raises(InvalidInputError):
            cg_normal_solve(np.zeros(op.shape, dtype=complex), op.normal)


class TestDcUpdate:
    def test_priors_pull_solution(self):
        # With huge lambda1 the solve returns (approximately) eta.
        rng = np.random.default_rng(10)
        op = make_op()
        x_true = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        data = [op.forward(x_true)]
        eta = (rng.standard_normal((1,) + op.shape)
               + 1j * rng.standard_normal((1,) + op.shape))
        out = dc_update(data, [op], lambda1=1e8, lambda2=0.0, eta=eta,
                        cg_iters=30)
        assert np.linalg.norm(out[0] - eta[0]) <= 1e-4 * np.linalg.norm(eta[0])

    def test_zero_priors_match_plain_recon(self):
        rng = np.random.default_rng(11)
        op = make_op()
        x_true = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        data = [op.forward(x_true)]
        out = dc_update(data, [op], lambda1=0.02, lambda2=0.03, cg_iters=12)
        want = wave_caipi_recon(
            data[0], op, CgConfig(max_iters=12, lambda_total=0.05)
        )
        np.testing.assert_array_equal(out[0], want.data)

    def test_warm_start_is_used(self):
        rng = np.random.default_rng(12)
        op = make_op()
        x_true = rng.standard_normal(op.shape) + 1j * rng.standard_normal(op.shape)
        data = [op.forward(x_true)]
        cold = dc_update(data, [op], 0.01, 0.0, cg_iters=1)
        warm = dc_update(data, [op], 0.01, 0.0, cg_iters=1,
                         x_prev=x_true[None])
        assert (np.linalg.norm(warm[0] - x_true)
                < np.linalg.norm(cold[0] - x_true))

    def test_length_mismatch_rejected(self):
        op = make_op()
        with pytest.raises(InvalidInputError):
            dc_update([np.zeros(op.data_shape, dtype=complex)], [op, op], 0.1, 0.1)
