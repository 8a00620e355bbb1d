import numpy as np
import pytest

from nfsar.echo import RadarConfig, simulate_echo
from nfsar.errors import SingularityError, ValidationError
from nfsar.geometry import AperturePose, ApertureSpec, build_aperture, virtual_elements
from nfsar.metrics import rmse
from nfsar.recon import (
    CompensatedSamples,
    bpa_reconstruct,
    empm_compensate,
    empm_reconstruct,
    grid_virtual_samples,
    raw_samples,
    read_image_raw,
    rma_baseline,
    rma_reconstruct,
    write_image_png,
    write_image_raw,
)
from nfsar.scene import ImageGrid, ReflectivityImage, SceneSpec, point_cloud, random_scene, rasterize

CFG = RadarConfig(start_hz=15e9, bandwidth_hz=4e9, n_freq=8)


def planar_poses(n=16, extent=0.25, z=0.3):
    spec = ApertureSpec(kind="planar", extent_x=extent, extent_y=extent,
                        nx=n, ny=n, z_nominal=z)
    return build_aperture(spec, seed=0)


def centered_grid(n=32, extent=0.25):
    return ImageGrid(nx=n, ny=n, extent_x=extent, extent_y=extent, z0=0.0)


# ---------------------------------------------------------------------------
# compensation


class TestCompensate:
    def test_zero_correction_is_identity(self):
        poses = planar_poses(n=4)
        cube = simulate_echo(np.array([[0.0, 0.0, 1.0]]), poses, CFG)
        virtuals = virtual_elements(poses, 0.3)  # planar at ref plane -> all zero
        out = empm_compensate(cube, virtuals)
        assert np.array_equal(out.values, cube.data)

    def test_rotation_by_known_angle(self):
        # correction 1e-3 m at k = 200 rad/m rotates the sample by 0.2 rad
        pose = AperturePose(tx=np.zeros(3) + [0, 0, 0.3], rx=np.zeros(3) + [0, 0, 0.3])
        cube = simulate_echo(np.array([[0.0, 0.0, 1.0]]), [pose], CFG)
        virtuals = virtual_elements([pose], 0.3)
        virtuals[0].range_correction = 1e-3
        out = empm_compensate(cube, virtuals)
        k = CFG.wavenumbers()
        rotated = cube.data[0] * np.exp(1j * k * 1e-3)
        assert np.allclose(out.values[0], rotated, rtol=1e-12)
        kk = 200.0
        sample = np.exp(1j * 0.1)
        assert np.angle(sample * np.exp(1j * kk * 1e-3)) == pytest.approx(0.1 + 0.2)

    def test_magnitudes_preserved(self):
        poses = planar_poses(n=6, z=0.31)
        cube = simulate_echo(np.array([[0.01, -0.02, 0.8]]), poses, CFG)
        out = empm_compensate(cube, virtual_elements(poses, 0.3))
        assert np.allclose(np.abs(out.values), np.abs(cube.data), rtol=1e-12)

    def test_length_mismatch_rejected(self):
        poses = planar_poses(n=4)
        cube = simulate_echo(np.array([[0.0, 0.0, 1.0]]), poses, CFG)
        with pytest.raises(ValidationError):
            empm_compensate(cube, virtual_elements(poses[:-1], 0.3))


class TestGridVirtualSamples:
    def test_on_lattice_passthrough(self):
        grid = centered_grid(n=8, extent=0.2)
        xs = grid.x_centers()
        ys = grid.y_centers()
        xy = np.array([[xs[i], ys[j]] for j in range(8) for i in range(8)])
        values = (np.arange(64, dtype=np.complex128) + 1j)[:, None] * np.ones((1, 3))
        samples = CompensatedSamples(values=values, xy=xy, ref_z=0.3)
        planar, occupancy = grid_virtual_samples(samples, grid=grid)
        assert np.all(occupancy == 1)
        for j in range(8):
            for i in range(8):
                assert planar.data[j, i, 0] == values[j * 8 + i, 0]

    def test_two_samples_average(self):
        grid = centered_grid(n=8, extent=0.2)
        xy = np.array([[0.01, 0.01], [0.011, 0.011]])  # same cell
        values = np.array([[1.0 + 0j], [0.0 + 1j]])
        samples = CompensatedSamples(values=values, xy=xy, ref_z=0.3)
        planar, occupancy = grid_virtual_samples(samples, grid=grid)
        iy, ix = np.nonzero(occupancy)
        assert occupancy[iy[0], ix[0]] == 2
        assert planar.data[iy[0], ix[0], 0] == pytest.approx((1 + 1j) / 2)

    def test_identical_samples_keep_value(self):
        grid = centered_grid(n=8, extent=0.2)
        xy = np.array([[0.0, 0.0], [0.0, 0.0]])
        values = np.array([[0.5 - 0.25j], [0.5 - 0.25j]])
        planar, _ = grid_virtual_samples(
            CompensatedSamples(values=values, xy=xy, ref_z=0.3), grid=grid)
        assert planar.data[4, 4, 0] == pytest.approx(0.5 - 0.25j)

    def test_degenerate_extent_rejected(self):
        xy = np.zeros((4, 2))
        values = np.ones((4, 1), dtype=complex)
        with pytest.raises(ValidationError):
            grid_virtual_samples(CompensatedSamples(values=values, xy=xy, ref_z=0.3),
                                 dims=(8, 8))

    def test_out_of_lattice_samples_dropped(self):
        grid = centered_grid(n=8, extent=0.2)
        xy = np.array([[0.0, 0.0], [5.0, 5.0]])
        values = np.ones((2, 1), dtype=complex)
        _, occupancy = grid_virtual_samples(
            CompensatedSamples(values=values, xy=xy, ref_z=0.3), grid=grid)
        assert occupancy.sum() == 1


# ---------------------------------------------------------------------------
# the FFT imaging path against an independent brute-force transform


def dft_oracle_image(planar_data, pitch_x, pitch_y, ref_z, z0, wavenumbers):
    """Brute-force O(N^4) version of the same imaging math, written from the
    transform definitions (no FFT calls)."""
    ny, nx, K = planar_data.shape
    # forward 2-D DFT, definition form
    m = np.arange(ny)
    n = np.arange(nx)
    wy = np.exp(-2j * np.pi * np.outer(m, m) / ny)
    wx = np.exp(-2j * np.pi * np.outer(n, n) / nx)
    spectrum = np.einsum("mu,uvk,vn->mnk", wy, planar_data, wx.T)

    def freq_axis(count, pitch):
        idx = np.arange(count, dtype=float)
        idx[idx >= (count + 1) // 2] -= count
        return 2.0 * np.pi * idx / (count * pitch)

    kx = freq_axis(nx, pitch_x)
    ky = freq_axis(ny, pitch_y)
    acc = np.zeros((ny, nx), dtype=complex)
    for kk in range(K):
        kz_sq = 4.0 * wavenumbers[kk] ** 2 - ky[:, None] ** 2 - kx[None, :] ** 2
        keep = kz_sq >= 0
        phase = np.zeros((ny, nx), dtype=complex)
        phase[keep] = np.exp(1j * np.sqrt(kz_sq[keep]) * (ref_z - z0))
        acc += spectrum[:, :, kk] * phase
    # inverse 2-D DFT, definition form
    wyi = np.exp(2j * np.pi * np.outer(m, m) / ny) / ny
    wxi = np.exp(2j * np.pi * np.outer(n, n) / nx) / nx
    img = np.abs(wyi @ acc @ wxi.T)
    peak = img.max()
    return img / peak if peak > 0 else img


class TestRmaReconstruct:
    def test_zero_input_zero_image(self):
        grid = centered_grid(n=16)
        samples = CompensatedSamples(values=np.zeros((4, CFG.n_freq), dtype=complex),
                                     xy=np.array([[0.0, 0.0], [0.01, 0.0],
                                                  [0.0, 0.01], [0.01, 0.01]]),
                                     ref_z=0.3)
        planar, _ = grid_virtual_samples(samples, grid=grid)
        img = rma_reconstruct(planar, 0.0, wavenumbers=CFG.wavenumbers())
        assert np.all(img.pixels == 0.0)

    def test_matches_dft_oracle(self):
        # 16x16 aperture, 8 tones; FFT path must match the brute-force
        # transform to 1e-6 relative error.
        poses = planar_poses(n=16)
        pts = np.array([[0.02, -0.03, 1.0], [-0.04, 0.05, 0.6]])
        cube = simulate_echo(pts, poses, CFG)
        grid = centered_grid(n=16)
        planar, _ = grid_virtual_samples(raw_samples(cube, ref_z=0.3), grid=grid)
        fft_img = rma_reconstruct(planar, 0.0, wavenumbers=CFG.wavenumbers())
        oracle = dft_oracle_image(planar.data, planar.pitch_x, planar.pitch_y,
                                  planar.ref_z, 0.0, CFG.wavenumbers())
        assert np.max(np.abs(fft_img.pixels - oracle)) < 1e-6

    def test_point_focus_at_center(self):
        poses = planar_poses(n=32)
        grid = centered_grid(n=64)
        cube = simulate_echo(np.array([[0.0, 0.0, 1.0]]), poses, CFG)
        img = empm_reconstruct(cube, grid)
        am = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
        true_px = grid.cell_index(0.0, 0.0)
        assert max(abs(am[0] - true_px[0]), abs(am[1] - true_px[1])) <= 1

    def test_shift_by_four_pixels(self):
        poses = planar_poses(n=32)
        grid = centered_grid(n=64)
        pitch = grid.pitch_x
        base = empm_reconstruct(
            simulate_echo(np.array([[0.0, 0.0, 1.0]]), poses, CFG), grid)
        shifted = empm_reconstruct(
            simulate_echo(np.array([[4 * pitch, 0.0, 1.0]]), poses, CFG), grid)
        a0 = np.unravel_index(np.argmax(base.pixels), base.pixels.shape)
        a1 = np.unravel_index(np.argmax(shifted.pixels), shifted.pixels.shape)
        assert a1[0] == a0[0]
        assert a1[1] == a0[1] + 4

    def test_ref_equals_target_plane_rejected(self):
        grid = centered_grid(n=16)
        samples = CompensatedSamples(values=np.ones((1, CFG.n_freq), dtype=complex),
                                     xy=np.array([[0.0, 0.0]]), ref_z=0.0)
        planar, _ = grid_virtual_samples(samples, grid=grid)
        with pytest.raises(SingularityError):
            rma_reconstruct(planar, 0.0, wavenumbers=CFG.wavenumbers())


class TestBpaReconstruct:
    def test_zero_cube_zero_image(self):
        poses = planar_poses(n=4)
        cube = simulate_echo(np.zeros((0, 3)), poses, CFG)
        img = bpa_reconstruct(cube, centered_grid(n=16))
        assert np.all(img.pixels == 0.0)

    def test_unit_sample_unit_modulus(self):
        # One element with a single unit sample: the matched filter has
        # magnitude one at every pixel, so the normalized image is flat.
        pose = AperturePose(tx=np.array([0.0, 0.0, 0.3]), rx=np.array([0.0, 0.0, 0.3]))
        cfg = RadarConfig(start_hz=15e9, bandwidth_hz=4e9, n_freq=2)
        cube = simulate_echo(np.array([[0.0, 0.0, 1.0]]), [pose], cfg)
        cube.data[0, 0] = 1.0
        cube.data[0, 1] = 0.0
        img = bpa_reconstruct(cube, centered_grid(n=16))
        assert np.allclose(img.pixels, 1.0, atol=1e-6)

    def test_irregular_focus_with_exact_poses(self):
        spec = ApertureSpec(kind="irregular", extent_x=0.25, extent_y=0.25,
                            nx=24, ny=24, z_nominal=0.3, jitter_xy=3e-3,
                            jitter_z=1e-2)
        poses = build_aperture(spec, seed=5)
        grid = centered_grid(n=48)
        cube = simulate_echo(np.array([[0.0, 0.0, 1.0]]), poses, CFG)
        img = bpa_reconstruct(cube, grid)
        am = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
        true_px = grid.cell_index(0.0, 0.0)
        assert max(abs(am[0] - true_px[0]), abs(am[1] - true_px[1])) <= 1

    def test_zero_standoff_rejected(self):
        pose = AperturePose(tx=np.zeros(3), rx=np.zeros(3))
        cfg = RadarConfig(start_hz=15e9, bandwidth_hz=4e9, n_freq=2)
        cube_data = np.ones((1, 2), dtype=complex)
        from nfsar.echo import EchoCube
        cube = EchoCube(data=cube_data, poses=[pose], config=cfg)
        with pytest.raises(SingularityError):
            bpa_reconstruct(cube, centered_grid(n=16))

    @pytest.mark.parametrize("seed,n_side,extent", [(11, 16, 0.25), (12, 20, 0.3),
                                                    (13, 24, 0.25)])
    def test_point_focus_any_adequate_aperture(self, seed, n_side, extent):
        # Apertures of at least 16x16 elements spanning >= 10 wavelengths
        # localize a point target to within one pixel.
        cfg = RadarConfig(start_hz=15e9, bandwidth_hz=4e9, n_freq=8)
        wavelength = 3e8 / cfg.start_hz
        assert extent >= 10 * wavelength
        rng = np.random.default_rng(seed)
        target = rng.uniform(-0.05, 0.05, 2)
        spec = ApertureSpec(kind="irregular", extent_x=extent, extent_y=extent,
                            nx=n_side, ny=n_side, z_nominal=0.3,
                            jitter_xy=2e-3, jitter_z=5e-3)
        poses = build_aperture(spec, seed=seed)
        cube = simulate_echo(np.array([[target[0], target[1], 1.0]]), poses, cfg)
        grid = centered_grid(n=48)
        img = bpa_reconstruct(cube, grid)
        am = np.unravel_index(np.argmax(img.pixels), img.pixels.shape)
        true_px = grid.cell_index(target[0], target[1])
        assert max(abs(am[0] - true_px[0]), abs(am[1] - true_px[1])) <= 1


class TestEmpmReconstruct:
    def test_planar_equals_direct_rma_bitwise(self):
        poses = planar_poses(n=16, z=0.3)
        cube = simulate_echo(np.array([[0.01, -0.02, 1.0], [-0.03, 0.04, 0.5]]),
                             poses, CFG)
        grid = centered_grid(n=32)
        a = empm_reconstruct(cube, grid, ref_z=0.3)
        b = rma_baseline(cube, grid, ref_z=0.3)
        assert a.pixels.tobytes() == b.pixels.tobytes()

    def test_compensation_beats_uncompensated(self):
        grid = centered_grid(n=64)
        spec = SceneSpec(extent_x=0.25, extent_y=0.25)
        wins = 0
        for s in range(5):
            ap = ApertureSpec(kind="irregular", extent_x=0.25, extent_y=0.25,
                              nx=24, ny=24, z_nominal=0.3, jitter_xy=2e-3,
                              jitter_z=5e-3)
            poses = build_aperture(ap, seed=s)
            scene = random_scene(spec, seed=100 + s)
            hr = rasterize(scene, grid)
            cube = simulate_echo(point_cloud(scene, grid), poses, CFG)
            wins += rmse(empm_reconstruct(cube, grid), hr) < rmse(
                rma_baseline(cube, grid), hr)
        assert wins == 5


class TestImageFiles:
    def test_raw_round_trip(self, tmp_path):
        grid = centered_grid(n=16)
        rng = np.random.default_rng(0)
        img = ReflectivityImage(pixels=rng.uniform(0, 1, (16, 16)), grid=grid)
        path = tmp_path / "img.img"
        write_image_raw(img, path)
        pixels, ny, nx = read_image_raw(path)
        assert (ny, nx) == (16, 16)
        assert np.allclose(pixels, img.pixels, atol=1e-7)

    def test_png_is_valid_grayscale(self, tmp_path):
        import struct
        import zlib
        grid = centered_grid(n=16)
        img = ReflectivityImage(pixels=np.linspace(0, 1, 256).reshape(16, 16),
                                grid=grid)
        path = tmp_path / "img.png"
        write_image_png(img, path)
        raw = path.read_bytes()
        assert raw[:8] == b"\x89PNG\r\n\x1a\n"
        width, height, depth, color = struct.unpack_from(">IIBB", raw, 16)
        assert (width, height, depth, color) == (16, 16, 8, 0)
        idat_start = raw.index(b"IDAT") + 4
        idat_len = struct.unpack_from(">I", raw, raw.index(b"IDAT") - 4)[0]
        rows = zlib.decompress(raw[idat_start:idat_start + idat_len])
        data = np.frombuffer(rows, dtype=np.uint8).reshape(16, 17)[:, 1:]
        assert np.array_equal(data, np.round(img.pixels * 255).astype(np.uint8))
