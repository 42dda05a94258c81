"""
Saturation-based focal scans.

A scan moves the ion across a grid and measures P¼ at every pixel. Since the
local intensity is proportional to 1/P¼, the normalized inverse of the fitted
powers is a map of the focus that does not depend on how well each position
is seen by the detection optics.

Pixels are independent work units. Every pixel draws its counts from its own
random substream keyed on (seed, iy, ix), so scans are reproducible regardless
of evaluation order or worker count.
"""
import csv
import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import constants
from scipy.ndimage import gaussian_filter

from .errors import (
    DataFormatError,
    EmptyMapError,
    FitError,
    InvalidInputError,
    NoBlurNeededError,
    PeakTruncatedError,
)
from .focal_field import FocalField, fwhm_1d, gaussian_sigma_from_fwhm
from .satfit import (
    CSV_HEADER,
    PW,
    FitResult,
    SaturationDataset,
    dataset_rows,
    fit_saturation,
    subtract_background,
    synthesize_dataset,
)

logger = logging.getLogger(__name__)

KERNEL_TRUNCATE = 4.0
SCAN_CSV_HEADER = ["ix", "iy", "x_m", "y_m"] + CSV_HEADER
MAP_CSV_HEADER = ["ix", "iy", "x_m", "y_m", "p_quarter_pW", "sigma_pW", "ok"]


@dataclass(frozen=True)
class IonWavepacket:
    """Thermal ion in a harmonic trap: mass (kg), trap frequency (rad/s), T (K)."""

    mass: float
    trap_frequency: float
    temperature: float

    def __post_init__(self):
        for name in ("mass", "trap_frequency", "temperature"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")

    @classmethod
    def from_atomic_mass(
        cls, mass_u: float, trap_frequency_hz: float, temperature: float
    ) -> "IonWavepacket":
        return cls(
            mass_u * constants.atomic_mass,
            2 * math.pi * trap_frequency_hz,
            temperature,
        )

    @property
    def sigma(self) -> float:
        return thermal_sigma(self)


def thermal_sigma(w: IonWavepacket) -> float:
    """RMS position spread sqrt(k_B·T/(m·ω²)) of the thermal ion."""
    return math.sqrt(constants.k * w.temperature / (w.mass * w.trap_frequency**2))


def blur_map(
    truth: np.ndarray, sigma: float | Sequence[float], pitch: float
) -> np.ndarray:
    """
    Convolve an intensity grid with a Gaussian kernel.

    The kernel is truncated at 4σ and normalized, and the grid edges reflect,
    so the integrated intensity is preserved. A per-axis sigma sequence is
    accepted in array axis order.
    """
    truth = np.asarray(truth, dtype=float)
    if not pitch > 0:
        raise InvalidInputError(f"pitch must be positive, got {pitch}")
    sigmas = np.broadcast_to(np.asarray(sigma, dtype=float), (truth.ndim,))
    if np.any(sigmas < 0):
        raise InvalidInputError("blur sigma must be non-negative")
    if not np.any(sigmas > 0):
        return truth.copy()
    sigmas_px = sigmas / pitch
    radius = np.floor(KERNEL_TRUNCATE * sigmas_px + 0.5)
    for axis, r in enumerate(radius):
        if sigmas_px[axis] > 0 and r >= truth.shape[axis]:
            raise InvalidInputError(
                f"blur kernel radius {int(r)} px exceeds grid size "
                f"{truth.shape[axis]} along axis {axis}"
            )
    return gaussian_filter(
        truth, sigma=tuple(sigmas_px), mode="reflect", truncate=KERNEL_TRUNCATE
    )


def blurred_field(truth: FocalField, sigma: float | Sequence[float]) -> FocalField:
    """
    Blur the intensity of a focal plane or line and renormalize its peak to 1.

    The field components are carried over unblurred.
    """
    stack = truth.intensity
    squeezed = np.squeeze(stack)
    blurred = blur_map(squeezed, sigma, truth.pitch)
    peak = np.max(blurred)
    if peak > 0:
        blurred = blurred / peak
    return FocalField(
        truth.grid, blurred.reshape(stack.shape), truth.e_rho, truth.e_z, normalized=True
    )


def required_blur(measured_fwhm: float, predicted_fwhm: float) -> float:
    """Gaussian blur FWHM that broadens the predicted width to the measured one."""
    if measured_fwhm < predicted_fwhm:
        raise NoBlurNeededError(
            f"measured FWHM {measured_fwhm:.3e} m is below the predicted "
            f"{predicted_fwhm:.3e} m"
        )
    return math.sqrt(measured_fwhm**2 - predicted_fwhm**2)


def probe_schedule(
    p_quarter: float, count: int = 8, min_factor: float = 1 / 8, max_factor: float = 8.0
) -> np.ndarray:
    """Log-spaced probe powers bracketing a nominal P¼."""
    if count < 2 or not 0 < min_factor < max_factor:
        raise InvalidInputError("invalid probe schedule")
    return p_quarter * np.geomspace(min_factor, max_factor, count)


@dataclass(frozen=True)
class ScanGrid:
    """Regular scan raster: pitch (m), origin of pixel (0, 0) and shape (ny, nx)."""

    pitch: float
    origin: tuple[float, float]
    shape: tuple[int, int]

    def __post_init__(self):
        if not self.pitch > 0:
            raise InvalidInputError(f"pitch must be positive, got {self.pitch}")

    def position(self, ix: int, iy: int) -> tuple[float, float]:
        return self.origin[0] + ix * self.pitch, self.origin[1] + iy * self.pitch

    def pixels(self) -> list[tuple[int, int]]:
        ny, nx = self.shape
        return [(iy, ix) for iy in range(ny) for ix in range(nx)]

    @classmethod
    def from_field(cls, truth: FocalField) -> tuple["ScanGrid", np.ndarray]:
        """The scan raster and 2D intensity of a transverse plane or a z line."""
        nz, ny, nx = truth.intensity.shape
        if nz == 1:
            grid = truth.grid
            pitch = truth.pitch
            return (
                cls(pitch, (float(grid.x[0]), float(grid.y[0])), (ny, nx)),
                truth.intensity[0],
            )
        if nx == 1 and ny == 1:
            z = truth.grid.z
            return (
                cls(float(z[1] - z[0]), (float(z[0]), 0.0), (1, nz)),
                truth.intensity[:, 0, 0][None, :],
            )
        raise InvalidInputError("scans cover a transverse plane or a line along z")


@dataclass(frozen=True)
class ScanDatasets:
    """Per-pixel saturation datasets of one scan, indexed [iy][ix]."""

    grid: ScanGrid
    datasets: list[list[SaturationDataset]]

    def __iter__(self):
        for iy, ix in self.grid.pixels():
            yield iy, ix, self.datasets[iy][ix]


@dataclass(frozen=True)
class ScanMap:
    """Reconstructed scan: fitted P¼ (W), normalized intensity and fit flags."""

    grid: ScanGrid
    p_quarter: np.ndarray
    sigma: np.ndarray
    ok: np.ndarray
    intensity: np.ndarray
    intensity_sigma: np.ndarray
    normalization: float = field(default=math.nan)

    @property
    def pitch(self) -> float:
        return self.grid.pitch

    def peak_index(self) -> tuple[int, int]:
        masked = np.where(self.ok, self.intensity, -np.inf)
        iy, ix = np.unravel_index(np.argmax(masked), masked.shape)
        return int(iy), int(ix)


def _pixel_rng(seed: int, iy: int, ix: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, iy, ix]))


def forward_scan(
    truth: FocalField,
    probe_powers: Sequence[float],
    asymptote: float,
    duration: float,
    seed: int,
    p_quarter_peak: float,
    noiseless: bool = False,
    efficiency: np.ndarray | None = None,
    background_rate: float = 0.0,
    workers: int = 1,
) -> ScanDatasets:
    """
    Simulate the saturation measurement at every pixel of a normalized focus.

    Args:
        truth: Normalized focal intensity (transverse plane or z line)
        probe_powers: Powers at the mirror probed at every pixel (W)
        asymptote: Saturated count rate at unit detection efficiency (counts/s)
        duration: Integration time per probe (s)
        seed: Root seed of the per-pixel random substreams
        p_quarter_peak: P¼ at the intensity maximum (W)
        noiseless: Use expected counts instead of Poisson draws
        efficiency: Optional per-pixel detection-efficiency multiplier
        background_rate: Background count rate (counts/s)
        workers: Threads used across pixels; results do not depend on it

    Returns:
        ScanDatasets; pixels with zero intensity are flagged unfittable
    """
    if not truth.normalized:
        raise InvalidInputError("forward scans need a normalized focal field")
    grid, intensity = ScanGrid.from_field(truth)
    probes = np.asarray(probe_powers, dtype=float)
    if efficiency is None:
        efficiency = np.ones(grid.shape)
    efficiency = np.broadcast_to(np.asarray(efficiency, dtype=float), grid.shape)

    def simulate(pixel: tuple[int, int]) -> SaturationDataset:
        iy, ix = pixel
        local = float(intensity[iy, ix])
        rng = _pixel_rng(seed, iy, ix)
        if not local > 0:
            dataset = synthesize_dataset(
                probes, asymptote, 1.0, duration, background_rate,
                rng=rng, noiseless=noiseless,
            )
            # no excitation: only background reaches the detector
            return SaturationDataset(
                dataset.power,
                dataset.bg_counts.copy(),
                dataset.duration,
                dataset.bg_counts,
                dataset.bg_duration,
                dataset.detuning_delta,
                fittable=False,
            )
        return synthesize_dataset(
            probes,
            asymptote * float(efficiency[iy, ix]),
            p_quarter_peak / local,
            duration,
            background_rate,
            rng=rng,
            noiseless=noiseless,
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        flat = list(pool.map(simulate, grid.pixels()))
    ny, nx = grid.shape
    datasets = [flat[iy * nx : (iy + 1) * nx] for iy in range(ny)]
    logger.info(f"Simulated {ny}x{nx} scan with {len(probes)} probes per pixel")
    return ScanDatasets(grid, datasets)


def _fit_pixel(dataset: SaturationDataset) -> FitResult | None:
    if not dataset.fittable:
        return None
    try:
        result = fit_saturation(subtract_background(dataset))
    except (FitError, InvalidInputError) as e:
        logger.debug(f"Pixel fit failed: {e}")
        return None
    return result if result.well_determined else None


def reconstruct_scan(scan: ScanDatasets, workers: int = 1) -> ScanMap:
    """
    Fit every pixel and convert the fitted powers to a normalized intensity map.

    Failed or poorly determined pixels are flagged and left as NaN.
    """
    grid = scan.grid
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        fits = list(
            pool.map(lambda px: _fit_pixel(scan.datasets[px[0]][px[1]]), grid.pixels())
        )
    p_quarter = np.full(grid.shape, math.nan)
    sigma = np.full(grid.shape, math.nan)
    for (iy, ix), fit in zip(grid.pixels(), fits):
        if fit is not None:
            p_quarter[iy, ix] = fit.p_quarter
            sigma[iy, ix] = fit.p_quarter_sigma
    ok = np.isfinite(p_quarter)
    failed = int(np.size(ok) - np.count_nonzero(ok))
    if not np.any(ok):
        raise EmptyMapError("no pixel of the scan could be fitted")
    if failed:
        logger.warning(f"{failed} of {ok.size} scan pixels failed and are flagged")
    return _scan_map(grid, p_quarter, sigma, ok)


def _scan_map(
    grid: ScanGrid, p_quarter: np.ndarray, sigma: np.ndarray, ok: np.ndarray
) -> ScanMap:
    with np.errstate(divide="ignore", invalid="ignore"):
        inverse = np.where(ok, 1.0 / p_quarter, math.nan)
    normalization = float(np.nanmax(inverse))
    intensity = inverse / normalization
    intensity_sigma = intensity * sigma / p_quarter
    return ScanMap(grid, p_quarter, sigma, ok, intensity, intensity_sigma, normalization)


def map_fwhm(scan_map: ScanMap) -> tuple[float | None, float | None]:
    """
    FWHM along x (row) and y (column) through the map maximum.

    Axes with a single pixel yield None.
    """
    iy, ix = scan_map.peak_index()
    ny, nx = scan_map.intensity.shape
    if (nx > 1 and ix in (0, nx - 1)) or (ny > 1 and iy in (0, ny - 1)):
        raise PeakTruncatedError(f"map maximum lies on the boundary at ({ix}, {iy})")
    pitch = scan_map.pitch
    x0, y0 = scan_map.grid.origin

    def cut(values: np.ndarray, start: float) -> float | None:
        if len(values) < 2:
            return None
        positions = start + pitch * np.arange(len(values))
        return fwhm_1d(np.column_stack([positions, values]))

    return cut(scan_map.intensity[iy, :], x0), cut(scan_map.intensity[:, ix], y0)


def blur_estimate(
    measured: tuple[float | None, float | None],
    predicted: float,
    axes: tuple[str, str] = ("x", "y"),
) -> dict[str, Any]:
    """Per-axis equivalent Gaussian blur and broadening factor."""
    estimate: dict[str, Any] = {}
    for axis, width in zip(axes, measured):
        if width is None:
            continue
        try:
            blur = required_blur(width, predicted)
        except NoBlurNeededError as e:
            logger.info(str(e))
            blur = None
        estimate[axis] = {
            "blur_fwhm_m": blur,
            "blur_sigma_m": None if blur is None else gaussian_sigma_from_fwhm(blur),
            "broadening_factor": width / predicted,
        }
    return estimate


def scan_summary(
    scan_map: ScanMap,
    predicted_fwhm: float,
    thermal_floor: float | None = None,
    axes: tuple[str, str] = ("x", "y"),
) -> dict[str, Any]:
    """
    Summary record: FWHMs, peak location, normalization and blur estimate.

    `axes` names the raster row and column directions; a line scan along the
    optical axis uses ("z", "y").
    """
    widths = map_fwhm(scan_map)
    iy, ix = scan_map.peak_index()
    x, y = scan_map.grid.position(ix, iy)
    summary: dict[str, Any] = {
        f"fwhm_{axis}_m": width for axis, width in zip(axes, widths)
    }
    summary.update(
        {
            "peak": {"ix": ix, "iy": iy, "x_m": x, "y_m": y},
            "normalization_per_W": scan_map.normalization,
            "pixels_ok": int(np.count_nonzero(scan_map.ok)),
            "pixels_total": int(scan_map.ok.size),
            "predicted_fwhm_m": predicted_fwhm,
            "blur": blur_estimate(widths, predicted_fwhm, axes),
            "thermal_sigma_m": thermal_floor,
        }
    )
    return summary


def write_scan_csv(scan: ScanDatasets, path: str | Path) -> None:
    """One row per pixel and probe power: ix,iy,x_m,y_m + the saturation columns."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SCAN_CSV_HEADER)
        for iy, ix, dataset in scan:
            x, y = scan.grid.position(ix, iy)
            for row in dataset_rows(dataset):
                writer.writerow([ix, iy, repr(x), repr(y)] + [repr(float(v)) for v in row])


def _signal_free(data: np.ndarray, has_bg: bool) -> bool:
    """True when every probe rate equals the background rate (or is zero)."""
    counts, duration = data[:, 1], data[:, 2]
    if not has_bg:
        return not np.any(counts > 0)
    return bool(np.all(counts * data[:, 4] == data[:, 3] * duration))


def read_scan_csv(path: str | Path, detuning_delta: float = 1.0) -> ScanDatasets:
    """
    Inverse of write_scan_csv. The raster pitch is recovered from positions.

    Pixels whose counts carry no signal above background are flagged unfittable.
    """
    pixels: dict[tuple[int, int], list[list[float]]] = {}
    positions: dict[tuple[int, int], tuple[float, float]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DataFormatError("empty file, expected header", 1)
        if [h.strip() for h in header] != SCAN_CSV_HEADER:
            raise DataFormatError(f"expected header {','.join(SCAN_CSV_HEADER)!r}", 1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(SCAN_CSV_HEADER):
                raise DataFormatError(
                    f"expected {len(SCAN_CSV_HEADER)} fields, got {len(row)}", line
                )
            try:
                ix, iy = int(row[0]), int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as e:
                raise DataFormatError(str(e), line) from None
            if ix < 0 or iy < 0:
                raise DataFormatError("negative pixel index", line)
            positions[(iy, ix)] = (values[0], values[1])
            pixels.setdefault((iy, ix), []).append(values[2:])
    if not pixels:
        raise DataFormatError("no data rows", 2)
    ny = max(iy for iy, _ in pixels) + 1
    nx = max(ix for _, ix in pixels) + 1
    if len(pixels) != nx * ny:
        raise DataFormatError(f"incomplete raster: {len(pixels)} of {nx * ny} pixels")
    x0, y0 = positions[(0, 0)]
    if nx > 1:
        pitch = positions[(0, 1)][0] - x0
    elif ny > 1:
        pitch = positions[(1, 0)][1] - y0
    else:
        pitch = 1.0
    grid = ScanGrid(pitch, (x0, y0), (ny, nx))
    datasets = []
    for iy in range(ny):
        row_sets = []
        for ix in range(nx):
            data = np.array(pixels[(iy, ix)])
            has_bg = bool(np.all(np.isfinite(data[:, 3:5])))
            dark = _signal_free(data, has_bg)
            if dark:
                logger.debug(f"Pixel ({ix}, {iy}) carries background only")
            row_sets.append(
                SaturationDataset(
                    power=data[:, 0] * PW,
                    counts=data[:, 1],
                    duration=data[:, 2],
                    bg_counts=data[:, 3] if has_bg else None,
                    bg_duration=data[:, 4] if has_bg else None,
                    detuning_delta=detuning_delta,
                    fittable=not dark,
                )
            )
        datasets.append(row_sets)
    return ScanDatasets(grid, datasets)


def write_map_csv(scan_map: ScanMap, path: str | Path) -> None:
    """ix,iy,x_m,y_m,p_quarter_pW,sigma_pW,ok; failed pixels carry empty powers."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MAP_CSV_HEADER)
        for iy, ix in scan_map.grid.pixels():
            x, y = scan_map.grid.position(ix, iy)
            ok = bool(scan_map.ok[iy, ix])
            writer.writerow(
                [
                    ix,
                    iy,
                    repr(x),
                    repr(y),
                    repr(float(scan_map.p_quarter[iy, ix] / PW)) if ok else "",
                    repr(float(scan_map.sigma[iy, ix] / PW)) if ok else "",
                    int(ok),
                ]
            )


def read_map_csv(path: str | Path) -> ScanMap:
    """Load a ScanMap written by write_map_csv and renormalize it."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MAP_CSV_HEADER:
            raise DataFormatError(f"expected header {','.join(MAP_CSV_HEADER)!r}", 1)
        for row in reader:
            if not row:
                continue
            try:
                ok = row[6].strip() == "1"
                rows.append(
                    (
                        int(row[0]),
                        int(row[1]),
                        float(row[2]),
                        float(row[3]),
                        float(row[4]) * PW if ok else math.nan,
                        float(row[5]) * PW if ok else math.nan,
                        ok,
                    )
                )
            except (ValueError, IndexError) as e:
                raise DataFormatError(str(e), reader.line_num) from None
    if not rows:
        raise DataFormatError("no data rows", 2)
    nx = max(r[0] for r in rows) + 1
    ny = max(r[1] for r in rows) + 1
    p_quarter = np.full((ny, nx), math.nan)
    sigma = np.full((ny, nx), math.nan)
    ok = np.zeros((ny, nx), dtype=bool)
    origin = (0.0, 0.0)
    pitch = None
    for ix, iy, x, y, p, s, good in rows:
        p_quarter[iy, ix], sigma[iy, ix], ok[iy, ix] = p, s, good
        if ix == 0 and iy == 0:
            origin = (x, y)
    for ix, iy, x, y, *_ in rows:
        if pitch is None and (ix, iy) in ((1, 0), (0, 1)):
            pitch = (x - origin[0]) if ix == 1 else (y - origin[1])
    if not np.any(ok):
        raise EmptyMapError("map has no fitted pixel")
    return _scan_map(ScanGrid(pitch or 1.0, origin, (ny, nx)), p_quarter, sigma, ok)


def write_summary(summary: dict[str, Any], path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(summary, f, indent=2)
