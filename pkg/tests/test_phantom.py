import numpy as np
import pytest

from wavemodl.errors import InvalidInputError
from wavemodl.phantom import (
    DEFAULT_TISSUES,
    Ellipsoid,
    PhantomSpec,
    TissueMap,
    TissueProperties,
    contrast_images,
    default_brain_ellipsoids,
    make_coil_sensitivities,
    make_phantom,
    normalized_grid,
    rasterize_ellipsoids,
    simulate_acquisition,
)
from wavemodl.qalas import QalasTiming, qalas_signal
from wavemodl.sampling import AccelSpec, make_multicontrast_pattern
from wavemodl.wave import WaveGradientSpec, make_wave_psf, wave_forward_arrays


class TestRasterize:
    def test_sphere_interior_exterior(self):
        shape = (17, 17, 17)
        labels = rasterize_ellipsoids(
            shape, [Ellipsoid((0.0, 0.0, 0.0), (0.5, 0.5, 0.5), label=1)]
        )
        # Oracle: brute-force membership per voxel.
        xs, ys, zs = normalized_grid(shape)
        inside = xs**2 + ys**2 + zs**2 <= 0.25
        np.testing.assert_array_equal(labels == 1, inside)

    def test_isocenter_voxel_inside(self):
        labels = rasterize_ellipsoids(
            (8, 8, 8), [Ellipsoid((0.0, 0.0, 0.0), (0.1, 0.1, 0.1), label=4)]
        )
        assert labels[4, 4, 4] == 4
        assert labels.sum() == 4  # only the isocenter voxel

    def test_later_ellipsoid_overwrites(self):
        ells = [
            Ellipsoid((0.0, 0.0, 0.0), (0.8, 0.8, 0.8), label=1),
            Ellipsoid((0.0, 0.0, 0.0), (0.3, 0.3, 0.3), label=2),
        ]
        labels = rasterize_ellipsoids((16, 16, 16), ells)
        assert labels[8, 8, 8] == 2
        assert (labels == 1).any()

    def test_rotation_swaps_axes(self):
        # A long-y ellipsoid rotated 90 degrees about x becomes long-z.
        base = Ellipsoid((0.0, 0.0, 0.0), (0.2, 0.9, 0.2), label=1)
        rot = Ellipsoid((0.0, 0.0, 0.0), (0.2, 0.9, 0.2), label=1,
                        angles_deg=(90.0, 0.0, 0.0))
        shape = (16, 16, 16)
        a = rasterize_ellipsoids(shape, [base])
        b = rasterize_ellipsoids(shape, [rot])
        assert a[8, 14, 8] == 1 and a[8, 8, 14] == 0
        assert b[8, 14, 8] == 0 and b[8, 8, 14] == 1

    def test_off_center_translation(self):
        labels = rasterize_ellipsoids(
            (16, 16, 16), [Ellipsoid((0.5, 0.0, 0.0), (0.2, 0.2, 0.2), label=1)]
        )
        assert labels[12, 8, 8] == 1
        assert labels[8, 8, 8] == 0

    def test_bad_semi_axes(self):
        with pytest.raises(InvalidInputError):
            Ellipsoid((0.0, 0.0, 0.0), (0.0, 0.1, 0.1), label=1)


class TestTissueMap:
    def test_property_volume(self):
        labels = np.zeros((2, 2, 2), dtype=np.int32)
        labels[0, 0, 0] = 1
        labels[1, 1, 1] = 3
        tmap = TissueMap(labels, DEFAULT_TISSUES)
        t1 = tmap.property_volume("t1_ms")
        assert t1[0, 0, 0] == 830.0
        assert t1[1, 1, 1] == 4000.0
        assert t1[0, 1, 0] == 0.0
        assert tmap.foreground().sum() == 2

    def test_missing_label_rejected(self):
        labels = np.full((2, 2, 2), 9, dtype=np.int32)
        with pytest.raises(InvalidInputError):
            TissueMap(labels, DEFAULT_TISSUES)

    def test_t1_le_t2_rejected(self):
        with pytest.raises(InvalidInputError):
            TissueProperties("bad", 70.0, 830.0, 1.0)


class TestContrastImages:
    def test_pd_mode_paints_density(self):
        tmap, stack = make_phantom(PhantomSpec(grid=(16, 12, 8)))
        assert stack.shape == (1, 16, 12, 8)
        wm = tmap.labels == 1
        assert np.allclose(stack[0][wm], 0.7)
        assert np.allclose(stack[0][tmap.labels == 0], 0.0)

    def test_qalas_mode_matches_signal_model(self):
        timing = QalasTiming(shots_per_train=16)
        spec = PhantomSpec(grid=(16, 12, 8), contrast_mode="qalas",
                           qalas_timing=timing)
        tmap, stack = make_phantom(spec)
        assert stack.shape[0] == 5
        gm = tmap.labels == 2
        want = qalas_signal(1300.0, 90.0, 0.85, timing)
        for m in range(5):
            assert np.allclose(stack[m][gm], want[m])

    def test_echoes_mode(self):
        spec = PhantomSpec(grid=(12, 12, 8), contrast_mode="echoes",
                           echo_times_ms=(20.0, 80.0))
        tmap, stack = make_phantom(spec)
        assert stack.shape[0] == 2
        wm = tmap.labels == 1
        assert np.allclose(stack[0][wm], 0.7 * np.exp(-20.0 / 70.0))
        assert np.allclose(stack[1][wm], 0.7 * np.exp(-80.0 / 70.0))

    def test_default_brain_has_all_tissues(self):
        labels = rasterize_ellipsoids((64, 48, 32), default_brain_ellipsoids())
        assert set(np.unique(labels)) == {0, 1, 2, 3}

    def test_unknown_mode_rejected(self):
        with pytest.raises(InvalidInputError):
            PhantomSpec(contrast_mode="swi")


class TestCoilMaps:
    def test_rss_peak_is_one(self):
        sens = make_coil_sensitivities(8, (16, 12, 10))
        rss = sens.rss()
        assert rss.max() == pytest.approx(1.0)
        assert rss.min() > 0.0

    def test_constant_along_x(self):
        sens = make_coil_sensitivities(4, (6, 8, 8))
        for c in range(4):
            assert np.allclose(sens.maps[c], sens.maps[c][:1])

    def test_rotational_symmetry(self):
        # With 4 coils on a square grid, coil 1 is coil 0 rotated a quarter
        # turn: coil1(y, z) = coil0(z, -y). On a 16-point axis centered at
        # index 8, value -u of index i sits at index 16 - i (needs i >= 1).
        sens = make_coil_sensitivities(4, (2, 16, 16))
        a = sens.maps[0, 0]
        b = sens.maps[1, 0]
        want = a[:, 15:0:-1].T  # want[iy - 1, iz] = a[iz, 16 - iy]
        np.testing.assert_allclose(b[1:, :], want, atol=1e-12)

    def test_coil_count_validation(self):
        with pytest.raises(InvalidInputError):
            make_coil_sensitivities(0, (4, 4, 4))


def small_setup(n_contrasts=2, noise=0.0, seed=5):
    nx, ny, nz = 12, 8, 6
    spec = PhantomSpec(grid=(nx, ny, nz), contrast_mode="echoes",
                       echo_times_ms=(20.0, 60.0)[:n_contrasts])
    tmap, truth = make_phantom(spec)
    sens = make_coil_sensitivities(3, (nx, ny, nz))
    wave = WaveGradientSpec(6.0, 3, 300.0, (0.24, 0.16, 0.12), osx=2)
    psf = make_wave_psf(wave, nx, ny, nz)
    pattern = make_multicontrast_pattern(
        ny, nz, AccelSpec(2, 2, 1), n_contrasts, mode="staggered"
    )
    data = simulate_acquisition(truth, sens, psf, pattern, noise, seed)
    return truth, sens, psf, pattern, data


class TestSimulateAcquisition:
    def test_noiseless_matches_forward_model(self):
        truth, sens, psf, pattern, data = small_setup()
        for m in range(2):
            want = wave_forward_arrays(
                truth[m], sens.maps, psf.table, pattern.masks[m]
            )
            np.testing.assert_array_equal(data[m].data, want)

    def test_noise_only_on_sampled_entries(self):
        truth, sens, psf, pattern, noisy = small_setup(noise=0.3)
        _, _, _, _, clean = small_setup(noise=0.0)
        for m in range(2):
            diff = noisy[m].data - clean[m].data
            assert not np.any(diff[:, :, ~pattern.masks[m]])
            assert np.any(diff[:, :, pattern.masks[m]])

    def test_seed_determinism_and_contrast_streams(self):
        _, _, _, _, a = small_setup(noise=0.2, seed=9)
        _, _, _, _, b = small_setup(noise=0.2, seed=9)
        _, _, _, _, c = small_setup(noise=0.2, seed=10)
        for m in range(2):
            np.testing.assert_array_equal(a[m].data, b[m].data)
        assert not np.array_equal(a[0].data, c[0].data)
        # Different contrasts draw from different streams.
        assert not np.array_equal(
            a[0].data - small_setup(noise=0.0)[4][0].data,
            a[1].data - small_setup(noise=0.0)[4][1].data,
        )

    def test_contrast_count_mismatch_rejected(self):
        truth, sens, psf, pattern, _ = small_setup()
        with pytest.raises(InvalidInputError):
            simulate_acquisition(truth[:1], sens, psf, pattern)
