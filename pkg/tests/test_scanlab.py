import json
import math

import numpy as np
import pytest

from ion_saturation.errors import (
    DataFormatError,
    EmptyMapError,
    InvalidInputError,
    NoBlurNeededError,
    PeakTruncatedError,
)
from ion_saturation.focal_field import (
    FocalField,
    FocalGrid,
    dipole_amplitude,
    fwhm_1d,
    gaussian_fwhm_from_sigma,
    intensity_map,
)
from ion_saturation.satfit import PW
from ion_saturation.scanlab import (
    IonWavepacket,
    ScanGrid,
    ScanMap,
    blur_estimate,
    blur_map,
    blurred_field,
    forward_scan,
    map_fwhm,
    probe_schedule,
    read_map_csv,
    read_scan_csv,
    reconstruct_scan,
    required_blur,
    scan_summary,
    write_map_csv,
    write_scan_csv,
    write_summary,
)
from ion_saturation.tls import AtomicTransition, doppler_temperature

P_QUARTER_PEAK = 1081 * PW
PROBES = probe_schedule(P_QUARTER_PEAK)
DIPOLE_FWHM = 158e-9
WAVELENGTH = 369.5e-9


def gaussian_field(n, pitch, sigma, normalized=True, center=(0.0, 0.0)):
    grid = FocalGrid.plane(n, n, pitch)
    x, y = np.meshgrid(grid.x - center[0], grid.y - center[1])
    intensity = np.exp(-(x**2 + y**2) / (2 * sigma**2))[None, :, :]
    zeros = np.zeros_like(intensity, dtype=complex)
    return FocalField(grid, intensity, zeros, zeros, normalized=normalized)


def scan_map_of(intensity, pitch):
    ny, nx = intensity.shape
    p_quarter = P_QUARTER_PEAK / np.maximum(intensity, 1e-12)
    ok = np.ones(intensity.shape, dtype=bool)
    return ScanMap(
        ScanGrid(pitch, (0.0, 0.0), (ny, nx)),
        p_quarter,
        0.01 * p_quarter,
        ok,
        intensity / np.max(intensity),
        0.01 * intensity,
    )


def scan(truth, seed=0, noiseless=False, **kwargs):
    return forward_scan(
        truth,
        PROBES,
        asymptote=5e4,
        duration=0.1,
        seed=seed,
        p_quarter_peak=P_QUARTER_PEAK,
        noiseless=noiseless,
        **kwargs,
    )


class TestWavepacket:
    """Test cases for the thermal ion spread."""

    def test_doppler_cooled_ytterbium(self):
        """Test σ ≈ 43 nm at the Doppler limit in a 560 kHz trap."""
        t = doppler_temperature(AtomicTransition.ytterbium_174())
        packet = IonWavepacket.from_atomic_mass(173.938862, 560e3, t)
        assert packet.sigma == pytest.approx(43e-9, abs=1e-9)

    def test_invalid_wavepacket(self):
        """Test that non-positive parameters are rejected."""
        with pytest.raises(InvalidInputError):
            IonWavepacket(1e-25, 1e6, 0.0)


class TestBlur:
    """Test cases for Gaussian blurring."""

    def test_mass_is_preserved(self):
        """Test that the integrated intensity survives the convolution."""
        image = np.zeros((41, 41))
        image[20, 20] = 1.0
        image[5, 30] = 0.5
        blurred = blur_map(image, 2.0, 1.0)
        assert blurred.sum() == pytest.approx(1.5, rel=1e-10)
        assert blurred.max() < 1.0

    def test_zero_sigma_is_identity(self):
        """Test that σ = 0 returns an unchanged copy."""
        image = np.arange(12.0).reshape(3, 4)
        blurred = blur_map(image, 0.0, 1e-8)
        np.testing.assert_array_equal(blurred, image)
        assert blurred is not image

    def test_per_axis_sigma(self):
        """Test blurring along one array axis only."""
        image = np.zeros((21, 21))
        image[10, 10] = 1.0
        blurred = blur_map(image, (0.0, 2e-8), 1e-8)
        assert np.count_nonzero(blurred[9]) == 0
        assert np.count_nonzero(blurred[10]) > 1

    def test_kernel_larger_than_grid(self):
        """Test that a 4σ radius reaching the grid size is rejected."""
        with pytest.raises(InvalidInputError):
            blur_map(np.ones((11, 11)), 3.0, 1.0)

    def test_negative_sigma(self):
        """Test that a negative σ is rejected."""
        with pytest.raises(InvalidInputError):
            blur_map(np.ones((11, 11)), -1.0, 1.0)

    def test_blurred_field_widths_add_in_quadrature(self):
        """Test FWHM² of a blurred Gaussian focus = FWHM₀² + FWHM_blur²."""
        truth = gaussian_field(41, 20e-9, 60e-9)
        blurred = blurred_field(truth, 80e-9)
        assert blurred.normalized
        assert np.max(blurred.intensity) == pytest.approx(1.0)
        row = np.column_stack([truth.grid.x, blurred.intensity[0, 20]])
        assert fwhm_1d(row) == pytest.approx(gaussian_fwhm_from_sigma(100e-9), rel=0.02)

    def test_required_blur(self):
        """Test √(535² − 158²) nm and the narrower-than-predicted case."""
        assert required_blur(535e-9, DIPOLE_FWHM) == pytest.approx(511.1e-9, rel=1e-3)
        with pytest.raises(NoBlurNeededError):
            required_blur(100e-9, DIPOLE_FWHM)


class TestScanGrid:
    """Test cases for scan rasters and probe schedules."""

    def test_power_schedule(self):
        """Test eight log-spaced powers from P¼/8 to 8·P¼."""
        assert len(PROBES) == 8
        assert PROBES[0] == pytest.approx(P_QUARTER_PEAK / 8)
        assert PROBES[-1] == pytest.approx(P_QUARTER_PEAK * 8)
        ratios = PROBES[1:] / PROBES[:-1]
        np.testing.assert_allclose(ratios, ratios[0])

    def test_invalid_power_schedule(self):
        """Test that a single probe or an inverted range is rejected."""
        with pytest.raises(InvalidInputError):
            probe_schedule(1e-9, count=1)
        with pytest.raises(InvalidInputError):
            probe_schedule(1e-9, min_factor=4, max_factor=2)

    def test_plane_raster(self):
        """Test the raster of a transverse plane."""
        grid, intensity = ScanGrid.from_field(gaussian_field(5, 1e-8, 2e-8))
        assert grid.shape == (5, 5)
        assert grid.origin == pytest.approx((-2e-8, -2e-8))
        assert grid.position(2, 2) == pytest.approx((0.0, 0.0))
        assert intensity.shape == (5, 5)

    def test_axial_raster(self):
        """Test that a z line becomes a one-row raster."""
        grid = FocalGrid.line("z", 5, 1e-7)
        intensity = np.linspace(0.2, 1.0, 5).reshape(5, 1, 1)
        field = FocalField(grid, intensity, intensity, intensity, normalized=True)
        raster, values = ScanGrid.from_field(field)
        assert raster.shape == (1, 5)
        assert raster.origin == pytest.approx((-2e-7, 0.0))
        assert raster.pitch == pytest.approx(1e-7)
        np.testing.assert_allclose(values[0], intensity[:, 0, 0])


class TestForwardScan:
    """Test cases for forward simulation."""

    def test_needs_normalized_field(self):
        """Test that raw intensities are rejected."""
        with pytest.raises(InvalidInputError):
            scan(gaussian_field(5, 5e-8, 1e-7, normalized=False))

    def test_seeded_and_worker_independent(self):
        """Test bit-identical scans for one seed across worker counts."""
        truth = gaussian_field(7, 5e-8, 1e-7)
        single = scan(truth, seed=42)
        threaded = scan(truth, seed=42, workers=4)
        other = scan(truth, seed=43)
        for (_, _, a), (_, _, b), (_, _, c) in zip(single, threaded, other):
            np.testing.assert_array_equal(a.counts, b.counts)
            np.testing.assert_array_equal(a.bg_counts, b.bg_counts)
        assert any(
            not np.array_equal(a.counts, c.counts) for (_, _, a), (_, _, c) in zip(single, other)
        )

    def test_dark_pixels_are_unfittable(self):
        """Test that zero-intensity pixels carry background only."""
        truth = gaussian_field(5, 5e-8, 1e-7)
        truth.intensity[0, 0, 0] = 0.0
        datasets = scan(truth, noiseless=True, background_rate=100.0)
        dark = datasets.datasets[0][0]
        assert not dark.fittable
        np.testing.assert_allclose(dark.counts, dark.bg_counts)

    def test_all_dark_scan(self):
        """Test that a scan without any fittable pixel fails."""
        truth = gaussian_field(3, 5e-8, 1e-7)
        truth.intensity[:] = 0.0
        with pytest.raises(EmptyMapError):
            reconstruct_scan(scan(truth, noiseless=True))


class TestReconstruction:
    """Test cases for pixel-wise reconstruction."""

    def test_noiseless_round_trip(self):
        """Test that a noiseless scan recovers the focus and its width."""
        truth = gaussian_field(15, 50e-9, 150e-9)
        scan_map = reconstruct_scan(scan(truth, noiseless=True))
        bright = truth.intensity[0] > 0.1
        assert scan_map.peak_index() == (7, 7)
        assert scan_map.ok[bright].all()
        np.testing.assert_allclose(
            scan_map.intensity[bright], truth.intensity[0][bright], rtol=1e-6
        )
        fwhm_x, fwhm_y = map_fwhm(scan_map)
        assert fwhm_x == pytest.approx(gaussian_fwhm_from_sigma(150e-9), abs=50e-9)
        assert fwhm_y == pytest.approx(fwhm_x, rel=1e-6)

    def test_detection_efficiency_drops_out(self):
        """Test that a detection-efficiency gradient leaves the map unchanged."""
        truth = gaussian_field(9, 50e-9, 120e-9)
        gradient = np.tile(np.linspace(0.5, 1.5, 9), (9, 1))
        uniform = reconstruct_scan(scan(truth, noiseless=True))
        graded = reconstruct_scan(scan(truth, noiseless=True, efficiency=gradient))
        both = uniform.ok & graded.ok
        assert both[4, 4]
        np.testing.assert_allclose(
            graded.intensity[both], uniform.intensity[both], rtol=1e-6
        )

    def test_poisson_pixel_errors(self):
        """Test per-pixel P¼ errors where I > 0.1 with 5000 counts at saturation."""
        truth = gaussian_field(15, 50e-9, 150e-9)
        scan_map = reconstruct_scan(scan(truth, seed=1))
        bright = truth.intensity[0] > 0.1
        expected = P_QUARTER_PEAK / truth.intensity[0][bright]
        assert scan_map.ok[bright].all()
        errors = np.abs(scan_map.p_quarter[bright] - expected)
        assert np.median(errors / expected) < 0.05
        assert np.mean(errors < 3 * scan_map.sigma[bright]) >= 0.9

    def test_gaussian_focus_widths_add_in_quadrature(self):
        """Test a 21×21 noisy scan of a Gaussian 158 nm spot blurred by σ = 217 nm."""
        sigma = DIPOLE_FWHM / gaussian_fwhm_from_sigma(1.0)
        truth = blurred_field(gaussian_field(21, 50e-9, sigma), 217e-9)
        scan_map = reconstruct_scan(scan(truth, seed=0))
        fwhm_x, _ = map_fwhm(scan_map)
        expected = math.hypot(DIPOLE_FWHM, gaussian_fwhm_from_sigma(217e-9))
        assert expected == pytest.approx(535e-9, rel=0.01)
        assert fwhm_x == pytest.approx(expected, rel=0.10)

    def test_width_grows_with_blur(self):
        """Test that the map FWHM of a blurred dipole focus never shrinks with σ."""
        plane = intensity_map(
            dipole_amplitude(0.0, math.pi / 2), FocalGrid.plane(21, 21, 50e-9), WAVELENGTH
        ).intensity[0]
        widths = [
            map_fwhm(scan_map_of(blur_map(plane, sigma, 50e-9), 50e-9))[0]
            for sigma in np.arange(0.0, 251e-9, 25e-9)
        ]
        assert all(b >= a * (1 - 1e-9) for a, b in zip(widths, widths[1:]))
        assert widths[-1] > 3 * widths[0]

    def test_peak_on_boundary(self):
        """Test that a maximum on the raster edge cannot be measured."""
        grid = ScanGrid(1e-8, (0.0, 0.0), (1, 5))
        intensity = np.array([[1.0, 0.8, 0.5, 0.3, 0.1]])
        p_quarter = P_QUARTER_PEAK / intensity
        ok = np.ones_like(intensity, dtype=bool)
        scan_map = ScanMap(grid, p_quarter, 0.01 * p_quarter, ok, intensity, 0.01 * intensity)
        with pytest.raises(PeakTruncatedError):
            map_fwhm(scan_map)


class TestSummary:
    """Test cases for blur estimates and scan summaries."""

    def test_blur_estimate(self):
        """Test the per-axis blur and broadening factor."""
        estimate = blur_estimate((535e-9, None), DIPOLE_FWHM)
        assert set(estimate) == {"x"}
        assert estimate["x"]["blur_fwhm_m"] == pytest.approx(511.1e-9, rel=1e-3)
        assert estimate["x"]["blur_sigma_m"] == pytest.approx(217e-9, rel=0.01)
        assert estimate["x"]["broadening_factor"] == pytest.approx(3.386, abs=1e-3)

    def test_no_blur_needed(self):
        """Test that a narrower-than-predicted width has no blur."""
        estimate = blur_estimate((100e-9, 200e-9), DIPOLE_FWHM, axes=("z", "y"))
        assert estimate["z"]["blur_fwhm_m"] is None
        assert estimate["y"]["blur_fwhm_m"] > 0

    def test_scan_summary(self, tmp_path):
        """Test the summary record and its JSON file."""
        truth = gaussian_field(9, 50e-9, 100e-9)
        scan_map = reconstruct_scan(scan(truth, noiseless=True))
        summary = scan_summary(scan_map, DIPOLE_FWHM, thermal_floor=43e-9)
        assert summary["peak"] == {"ix": 4, "iy": 4, "x_m": 0.0, "y_m": 0.0}
        assert summary["pixels_total"] == 81
        assert summary["normalization_per_W"] == pytest.approx(1 / P_QUARTER_PEAK, rel=1e-6)
        assert summary["thermal_sigma_m"] == 43e-9
        assert set(summary["blur"]) == {"x", "y"}
        path = tmp_path / "summary.json"
        write_summary(summary, path)
        assert json.loads(path.read_text())["fwhm_x_m"] == pytest.approx(summary["fwhm_x_m"])


class TestScanFiles:
    """Test cases for scan and map CSV files."""

    def test_scan_csv_round_trip(self, tmp_path):
        """Test that a written scan reads back with the same raster and counts."""
        datasets = scan(gaussian_field(3, 5e-8, 1e-7), seed=5, background_rate=50.0)
        path = tmp_path / "scan.csv"
        write_scan_csv(datasets, path)
        loaded = read_scan_csv(path, detuning_delta=0.5)
        assert loaded.grid.shape == (3, 3)
        assert loaded.grid.pitch == pytest.approx(5e-8)
        for (_, _, a), (_, _, b) in zip(datasets, loaded):
            np.testing.assert_allclose(b.power, a.power, rtol=1e-12)
            np.testing.assert_array_equal(b.counts, a.counts)
            np.testing.assert_array_equal(b.bg_counts, a.bg_counts)
            assert b.detuning_delta == 0.5

    def test_map_csv_round_trip(self, tmp_path):
        """Test the map file with a flagged pixel."""
        truth = gaussian_field(5, 5e-8, 1e-7)
        truth.intensity[0, 0, 0] = 0.0
        scan_map = reconstruct_scan(scan(truth, noiseless=True))
        path = tmp_path / "map.csv"
        write_map_csv(scan_map, path)
        loaded = read_map_csv(path)
        assert not loaded.ok[0, 0]
        np.testing.assert_array_equal(loaded.ok, scan_map.ok)
        np.testing.assert_allclose(
            loaded.p_quarter[loaded.ok], scan_map.p_quarter[scan_map.ok], rtol=1e-12
        )
        assert loaded.pitch == pytest.approx(5e-8)

    def test_dark_pixels_stay_flagged(self, tmp_path):
        """Test that background-only pixels read back as unfittable."""
        truth = gaussian_field(5, 5e-8, 1e-7)
        truth.intensity[0, 0, 0] = 0.0
        path = tmp_path / "scan.csv"
        write_scan_csv(scan(truth, seed=3, background_rate=50.0), path)
        loaded = read_scan_csv(path)
        assert not loaded.datasets[0][0].fittable
        assert all(d.fittable for iy, ix, d in loaded if (iy, ix) != (0, 0))
        assert not reconstruct_scan(loaded).ok[0, 0]

    def test_bad_scan_header(self, tmp_path):
        """Test that an unexpected header is rejected on line 1."""
        path = tmp_path / "bad.csv"
        path.write_text("ix,iy,power\n0,0,1\n")
        with pytest.raises(DataFormatError) as excinfo:
            read_scan_csv(path)
        assert excinfo.value.line == 1

    def test_incomplete_raster(self, tmp_path):
        """Test that missing pixels are reported."""
        datasets = scan(gaussian_field(3, 5e-8, 1e-7), noiseless=True)
        path = tmp_path / "scan.csv"
        write_scan_csv(datasets, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(line for line in lines if not line.startswith("1,1,")) + "\n")
        with pytest.raises(DataFormatError):
            read_scan_csv(path)
