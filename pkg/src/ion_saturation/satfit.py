"""
Saturation-curve modeling and fitting.

Detected counts follow C = T·A·P/(P + P¼) where P is the power at the mirror,
P¼ the power that yields an upper-level population of 1/4 and A the count
rate at full saturation. A absorbs Γ/2 and every detection efficiency, so P¼
does not depend on detection losses.

The fit is a weighted Levenberg-Marquardt least squares with Poisson
variances. Its initialization and damping schedule are fixed so that the same
data always produce the same iterates.
"""
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .coupling import PowerMeasurement
from .errors import (
    DataFormatError,
    DegenerateDataError,
    FitConvergenceError,
    InvalidInputError,
)
from .mirror import MirrorGeometry, power_after_mirror

logger = logging.getLogger(__name__)

CSV_HEADER = ["power_pW", "counts", "duration_s", "bg_counts", "bg_duration_s"]
PW = 1e-12

MIN_POINTS = 4
MIN_POWER_SPAN = 4.0
MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-8
INITIAL_DAMPING = 1e-3
DAMPING_FACTOR = 10.0
MAX_DAMPING = 1e20
VARIANCE_FLOOR = 1.0
WELL_DETERMINED_LIMIT = 0.5


@dataclass(frozen=True)
class SaturationDataset:
    """
    Raw saturation measurement, one entry per probe power.

    Powers are at the mirror, in watts. Background arrays are None when no
    background was recorded.
    """

    power: np.ndarray
    counts: np.ndarray
    duration: np.ndarray
    bg_counts: np.ndarray | None = None
    bg_duration: np.ndarray | None = None
    detuning_delta: float = 1.0
    fittable: bool = True

    def __post_init__(self):
        for name in ("power", "counts", "duration"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        n = len(self.power)
        if len(self.counts) != n or len(self.duration) != n:
            raise InvalidInputError("power, counts and duration lengths differ")
        if np.any(self.duration <= 0):
            raise InvalidInputError("durations must be positive")
        if np.any(self.power < 0):
            raise InvalidInputError("powers must be non-negative")
        if (self.bg_counts is None) != (self.bg_duration is None):
            raise InvalidInputError("background counts and duration go together")
        if self.bg_counts is not None:
            bg_counts = np.broadcast_to(np.asarray(self.bg_counts, float), (n,)).copy()
            bg_duration = np.broadcast_to(
                np.asarray(self.bg_duration, float), (n,)
            ).copy()
            if np.any(bg_duration <= 0):
                raise InvalidInputError("background durations must be positive")
            object.__setattr__(self, "bg_counts", bg_counts)
            object.__setattr__(self, "bg_duration", bg_duration)

    def __len__(self) -> int:
        return len(self.power)

    @property
    def has_background(self) -> bool:
        return self.bg_counts is not None


@dataclass(frozen=True)
class CorrectedDataset:
    """Background-corrected counts with their propagated variances."""

    power: np.ndarray
    counts: np.ndarray
    variance: np.ndarray
    duration: np.ndarray
    detuning_delta: float = 1.0

    def __len__(self) -> int:
        return len(self.power)

    def rescaled(
        self, power_factor: float = 1.0, count_factor: float = 1.0
    ) -> "CorrectedDataset":
        """Same data in other units: powers ×power_factor, counts ×count_factor."""
        return replace(
            self,
            power=self.power * power_factor,
            counts=self.counts * count_factor,
            variance=self.variance * count_factor**2,
        )


@dataclass(frozen=True)
class FitResult:
    """Fitted saturation parameters. Powers in watts, asymptote in counts/s."""

    p_quarter: float
    p_quarter_sigma: float
    asymptote: float
    asymptote_sigma: float
    covariance: np.ndarray = field(repr=False)
    chi2_red: float
    converged: bool
    iterations: int
    offset: float | None = None
    offset_sigma: float | None = None

    @property
    def well_determined(self) -> bool:
        return (
            self.converged
            and math.isfinite(self.p_quarter_sigma)
            and self.p_quarter_sigma < WELL_DETERMINED_LIMIT * self.p_quarter
        )

    def to_dict(self) -> dict[str, Any]:
        result = {
            "p_quarter_pW": self.p_quarter / PW,
            "p_quarter_sigma_pW": self.p_quarter_sigma / PW,
            "asymptote_cps": self.asymptote,
            "chi2_red": self.chi2_red,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.offset is not None:
            result["offset_cps"] = self.offset
            result["offset_sigma_cps"] = self.offset_sigma
        return result


def model_counts(
    p: float | np.ndarray,
    asymptote: float,
    p_quarter: float,
    duration: float | np.ndarray,
) -> float | np.ndarray:
    """Expected counts at power p over the given integration time."""
    return duration * asymptote * p / (p + p_quarter)


def subtract_background(raw: SaturationDataset) -> CorrectedDataset:
    """Remove duration-scaled background counts and propagate Poisson variances."""
    if not raw.has_background:
        raise InvalidInputError("dataset has no background record")
    scale = raw.duration / raw.bg_duration
    counts = raw.counts - scale * raw.bg_counts
    variance = raw.counts + scale**2 * raw.bg_counts
    return CorrectedDataset(
        power=raw.power.copy(),
        counts=counts,
        variance=variance,
        duration=raw.duration.copy(),
        detuning_delta=raw.detuning_delta,
    )


def merge_duplicate_powers(raw: SaturationDataset) -> tuple[SaturationDataset, int]:
    """
    Merge points taken at identical powers by summing counts and durations.

    Returns:
        The merged dataset and the number of points that were folded away
    """
    powers, inverse = np.unique(raw.power, return_inverse=True)
    merged = len(raw.power) - len(powers)
    if merged == 0:
        return raw, 0

    def summed(values: np.ndarray | None) -> np.ndarray | None:
        if values is None:
            return None
        return np.bincount(inverse, weights=values, minlength=len(powers))

    logger.warning(f"Merged {merged} saturation points taken at duplicate powers")
    return (
        replace(
            raw,
            power=powers,
            counts=summed(raw.counts),
            duration=summed(raw.duration),
            bg_counts=summed(raw.bg_counts),
            bg_duration=summed(raw.bg_duration),
        ),
        merged,
    )


class _SaturationModel:
    """Weighted residuals and Jacobian of the count model."""

    def __init__(self, data: CorrectedDataset, float_offset: bool):
        order = np.lexsort((data.counts, data.power))
        self.power = data.power[order]
        self.counts = data.counts[order]
        self.duration = data.duration[order]
        self.sigma = np.sqrt(np.maximum(data.variance[order], VARIANCE_FLOOR))
        self.float_offset = float_offset

    @property
    def n_params(self) -> int:
        return 3 if self.float_offset else 2

    def expected(self, params: np.ndarray) -> np.ndarray:
        expected = model_counts(self.power, params[0], params[1], self.duration)
        if self.float_offset:
            expected = expected + self.duration * params[2]
        return expected

    def chi2(self, params: np.ndarray) -> float:
        return float(np.sum(((self.counts - self.expected(params)) / self.sigma) ** 2))

    def weighted(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        asymptote, p_quarter = params[0], params[1]
        denominator = self.power + p_quarter
        columns = [
            self.duration * self.power / denominator,
            -self.duration * asymptote * self.power / denominator**2,
        ]
        if self.float_offset:
            columns.append(self.duration)
        jacobian = np.column_stack(columns) / self.sigma[:, None]
        residual = (self.counts - self.expected(params)) / self.sigma
        return jacobian, residual

    def valid(self, params: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(params)) and params[0] > 0 and params[1] > 0)


def initial_guess(data: CorrectedDataset) -> tuple[float, float]:
    """Asymptote 1.1·max rate; P¼ the first power whose rate exceeds half the max."""
    order = np.lexsort((data.counts, data.power))
    rates = data.counts[order] / data.duration[order]
    powers = data.power[order]
    max_rate = float(np.max(rates))
    if not max_rate > 0:
        raise DegenerateDataError("no positive count rate in dataset")
    above = np.nonzero(rates > max_rate / 2.0)[0]
    p_quarter = float(powers[above[0]])
    if not p_quarter > 0:
        p_quarter = float(np.min(powers[powers > 0]))
    return 1.1 * max_rate, p_quarter


def _check_fittable(data: CorrectedDataset) -> None:
    if len(data) < MIN_POINTS:
        raise InvalidInputError(
            f"need at least {MIN_POINTS} points to fit, got {len(data)}"
        )
    positive = data.power[data.power > 0]
    if len(positive) == 0 or np.max(positive) < MIN_POWER_SPAN * np.min(positive):
        raise InvalidInputError(
            f"probe powers must span at least a factor {MIN_POWER_SPAN:g}"
        )


def _normal_inverse(jacobian: np.ndarray) -> np.ndarray:
    normal = jacobian.T @ jacobian
    diagonal = np.diag(normal)
    if np.any(diagonal <= 0) or not np.all(np.isfinite(normal)):
        raise DegenerateDataError("weighted normal matrix is singular")
    scale = 1.0 / np.sqrt(diagonal)
    scaled = normal * np.outer(scale, scale)
    if np.linalg.cond(scaled) > 1e14:
        raise DegenerateDataError("weighted normal matrix is singular")
    return np.linalg.inv(scaled) * np.outer(scale, scale)


def fit_saturation(data: CorrectedDataset, float_offset: bool = False) -> FitResult:
    """
    Fit the saturation model to background-corrected counts.

    Args:
        data: Corrected dataset with at least 4 points spanning a factor 4 in power
        float_offset: Also fit a constant offset rate (diagnostic variant)

    Returns:
        FitResult with 1σ uncertainties from the inverse weighted normal matrix

    Raises:
        InvalidInputError: Too few points or too narrow a power span
        DegenerateDataError: Singular normal matrix
        FitConvergenceError: Iteration limit reached; carries the last iterate
    """
    _check_fittable(data)
    model = _SaturationModel(data, float_offset)
    params = np.array(initial_guess(data) + ((0.0,) if float_offset else ()))
    # offsets start at zero, so their steps are judged against the asymptote
    step_scale_floor = np.array([0.0, 0.0, 1e-6 * params[0]])[: model.n_params]

    chi2 = model.chi2(params)
    damping = INITIAL_DAMPING
    converged = False
    iteration = 0
    while iteration < MAX_ITERATIONS:
        iteration += 1
        jacobian, residual = model.weighted(params)
        normal = jacobian.T @ jacobian
        gradient = jacobian.T @ residual
        if np.any(np.diag(normal) <= 0):
            raise DegenerateDataError("weighted normal matrix is singular")
        # Marquardt damping in the unit-diagonal frame of the normal matrix
        scale = 1.0 / np.sqrt(np.diag(normal))
        scaled_normal = normal * np.outer(scale, scale)
        scaled_gradient = gradient * scale
        identity = np.eye(len(params))

        step = np.zeros_like(params)
        while damping <= MAX_DAMPING:
            try:
                step = scale * np.linalg.solve(
                    scaled_normal + damping * identity, scaled_gradient
                )
            except np.linalg.LinAlgError as e:
                raise DegenerateDataError(
                    f"weighted normal matrix is singular: {e}"
                ) from e
            trial = params + step
            if model.valid(trial):
                trial_chi2 = model.chi2(trial)
                if trial_chi2 <= chi2:
                    params, chi2 = trial, trial_chi2
                    damping /= DAMPING_FACTOR
                    break
            damping *= DAMPING_FACTOR
        else:
            # no damping yields an improvement: params sit at the minimum
            converged = True
            break

        relative_step = np.max(
            np.abs(step) / np.maximum(np.abs(params), step_scale_floor)
        )
        logger.debug(
            f"LM iteration {iteration}: chi2={chi2:.6g} damping={damping:.1e} "
            f"relative step={relative_step:.2e}"
        )
        if relative_step < STEP_TOLERANCE:
            converged = True
            break

    jacobian, _ = model.weighted(params)
    covariance = _normal_inverse(jacobian)
    sigmas = np.sqrt(np.maximum(np.diag(covariance), 0.0))
    dof = len(data) - model.n_params
    result = FitResult(
        p_quarter=float(params[1]),
        p_quarter_sigma=float(sigmas[1]),
        asymptote=float(params[0]),
        asymptote_sigma=float(sigmas[0]),
        covariance=covariance,
        chi2_red=chi2 / dof if dof > 0 else math.nan,
        converged=converged,
        iterations=iteration,
        offset=float(params[2]) if float_offset else None,
        offset_sigma=float(sigmas[2]) if float_offset else None,
    )
    if not converged:
        raise FitConvergenceError(
            f"saturation fit did not converge in {MAX_ITERATIONS} iterations", result
        )
    if not result.well_determined:
        logger.warning(
            f"P1/4 poorly determined: {result.p_quarter / PW:.1f} "
            f"± {result.p_quarter_sigma / PW:.1f} pW"
        )
    logger.info(
        f"Saturation fit: P1/4={result.p_quarter / PW:.2f} pW, "
        f"asymptote={result.asymptote:.1f} cps after {iteration} iterations"
    )
    return result


def p_quarter_at_ion(fit: FitResult, geometry: MirrorGeometry) -> PowerMeasurement:
    """Fitted P¼ at the mirror translated to the power impinging on the ion."""
    if not fit.converged:
        raise InvalidInputError("fit did not converge")
    return PowerMeasurement(
        power_after_mirror(fit.p_quarter, geometry),
        power_after_mirror(fit.p_quarter_sigma, geometry),
    )


def synthesize_dataset(
    powers: np.ndarray,
    asymptote: float,
    p_quarter: float,
    duration: float,
    background_rate: float = 0.0,
    bg_duration: float | None = None,
    rng: np.random.Generator | None = None,
    noiseless: bool = False,
    detuning_delta: float = 1.0,
) -> SaturationDataset:
    """
    Draw a saturation measurement from the count model.

    Noiseless datasets carry the expectation values themselves.
    """
    powers = np.asarray(powers, dtype=float)
    durations = np.full(len(powers), float(duration))
    bg_duration = duration if bg_duration is None else bg_duration
    bg_durations = np.full(len(powers), float(bg_duration))
    signal = model_counts(powers, asymptote, p_quarter, durations)
    expected = signal + background_rate * durations
    expected_bg = background_rate * bg_durations
    if noiseless:
        counts, bg_counts = expected, expected_bg
    else:
        if rng is None:
            raise InvalidInputError("noisy synthesis needs a random generator")
        counts = rng.poisson(expected).astype(float)
        bg_counts = rng.poisson(expected_bg).astype(float)
    return SaturationDataset(
        power=powers,
        counts=counts,
        duration=durations,
        bg_counts=bg_counts,
        bg_duration=bg_durations,
        detuning_delta=detuning_delta,
    )


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"{column}: not a number: {text!r}", line) from None
    if not math.isfinite(value):
        raise DataFormatError(f"{column}: not finite: {text!r}", line)
    return value


def load_dataset_csv(path: str | Path, detuning_delta: float = 1.0) -> SaturationDataset:
    """
    Read a saturation dataset from CSV.

    Expected header: power_pW,counts,duration_s,bg_counts,bg_duration_s.
    Background columns may be left blank on every row.
    """
    rows: list[list[float | None]] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DataFormatError("empty file, expected header", 1)
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataFormatError(
                f"bad header {','.join(header)!r}, expected {','.join(CSV_HEADER)!r}", 1
            )
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise DataFormatError(
                    f"expected {len(CSV_HEADER)} fields, got {len(row)}", line
                )
            values: list[float | None] = [
                _parse_float(row[i], CSV_HEADER[i], line) for i in range(3)
            ]
            for i in (3, 4):
                cell = row[i].strip()
                values.append(_parse_float(cell, CSV_HEADER[i], line) if cell else None)
            if values[0] < 0 or values[1] < 0:
                raise DataFormatError("power and counts must be non-negative", line)
            if values[2] <= 0 or (values[4] is not None and values[4] <= 0):
                raise DataFormatError("durations must be positive", line)
            rows.append(values)
    if not rows:
        raise DataFormatError("no data rows", 2)
    has_bg = [r[3] is not None and r[4] is not None for r in rows]
    if any(has_bg) and not all(has_bg):
        raise DataFormatError("background given for some rows only", has_bg.index(False) + 2)
    data = np.array(
        [[v if v is not None else math.nan for v in r] for r in rows], dtype=float
    )
    return SaturationDataset(
        power=data[:, 0] * PW,
        counts=data[:, 1],
        duration=data[:, 2],
        bg_counts=data[:, 3] if all(has_bg) else None,
        bg_duration=data[:, 4] if all(has_bg) else None,
        detuning_delta=detuning_delta,
    )


def dataset_rows(dataset: SaturationDataset) -> list[list[float]]:
    """Rows in the CSV column order, powers converted to pW."""
    bg_counts = dataset.bg_counts if dataset.has_background else [math.nan] * len(dataset)
    bg_duration = (
        dataset.bg_duration if dataset.has_background else [math.nan] * len(dataset)
    )
    return [
        [p / PW, c, d, b, bd]
        for p, c, d, b, bd in zip(
            dataset.power, dataset.counts, dataset.duration, bg_counts, bg_duration
        )
    ]
