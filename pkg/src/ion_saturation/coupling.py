"""
Coupling-efficiency bookkeeping.

G = Ω·η²·(1 − L) from the focusing geometry, and G = P_min/P_exp from a
saturation measurement. Uncertainties are first-order Gaussian throughout.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, NamedTuple

from .errors import InconsistentBudgetError, InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CouplingBudget:
    """Weighted solid angle Ω, mode overlap η and loss L, all fractions."""

    omega: float
    eta: float
    loss: float = 0.0

    def __post_init__(self):
        for name in ("omega", "eta", "loss"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise InvalidInputError(f"{name} must be in [0, 1], got {value}")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class PowerMeasurement:
    """A power in watts with its 1σ uncertainty."""

    value: float
    uncertainty: float = 0.0

    def __post_init__(self):
        if not self.value > 0:
            raise InvalidInputError(f"power must be positive, got {self.value}")
        if not self.uncertainty >= 0:
            raise InvalidInputError(
                f"uncertainty must be non-negative, got {self.uncertainty}"
            )

    @property
    def relative_uncertainty(self) -> float:
        return self.uncertainty / self.value

    def scaled(self, factor: float) -> "PowerMeasurement":
        return PowerMeasurement(self.value * factor, self.uncertainty * factor)

    def to_pw(self) -> dict[str, float]:
        return {"value_pW": self.value * 1e12, "sigma_pW": self.uncertainty * 1e12}


class Efficiency(NamedTuple):
    value: float
    uncertainty: float


def budget_efficiency(b: CouplingBudget) -> float:
    """G = Ω·η²·(1 − L)."""
    return b.omega * b.eta**2 * (1.0 - b.loss)


def efficiency_from_powers(
    p_min: PowerMeasurement, p_exp: PowerMeasurement
) -> Efficiency:
    """Coupling efficiency from the minimal and the measured ρ=1/4 powers."""
    if not p_exp.value > 0:
        raise InvalidInputError("measured power must be positive")
    g = p_min.value / p_exp.value
    sigma = g * math.hypot(p_min.relative_uncertainty, p_exp.relative_uncertainty)
    return Efficiency(g, sigma)


def infer_loss(g_measured: float, omega: float, eta: float) -> float:
    """Loss L that reconciles a measured efficiency with Ω and η."""
    ceiling = omega * eta**2
    if not ceiling > 0:
        raise InvalidInputError("omega * eta^2 must be positive")
    if g_measured < 0:
        raise InvalidInputError(f"efficiency must be non-negative, got {g_measured}")
    if g_measured > ceiling * (1 + 1e-12):
        raise InconsistentBudgetError(
            f"measured G={g_measured:.4f} exceeds Omega*eta^2={ceiling:.4f}"
        )
    return max(0.0, 1.0 - g_measured / ceiling)


def expected_power(p_min: float, g: float) -> float:
    """Incident power expected at ρ=1/4 for coupling efficiency g."""
    if not 0 < g <= 1:
        raise InvalidInputError(f"coupling efficiency must be in (0, 1], got {g}")
    return p_min / g


def shortfall_factor(g_expected: float, g_measured: float) -> float:
    """How far the measured efficiency falls short of the budget."""
    if not g_measured > 0:
        raise InvalidInputError("measured efficiency must be positive")
    return g_expected / g_measured


@dataclass(frozen=True)
class CouplingReport:
    """
    Measured vs expected coupling, with the two ΔG contributions kept apart.

    `sigma_fit` propagates the statistical fit uncertainty of P_exp,
    `sigma_calibration` the power calibration anchor; `sigma_total` combines them.
    """

    p_min: PowerMeasurement
    p_exp: PowerMeasurement
    p_exp_fit_sigma: float
    p_exp_calibration_sigma: float
    budget: CouplingBudget
    provenance: dict[str, str] = field(default_factory=dict)

    @property
    def g_measured(self) -> float:
        return self.p_min.value / self.p_exp.value

    @property
    def g_expected(self) -> float:
        return budget_efficiency(self.budget)

    def contribution(self, sigma: float) -> float:
        return efficiency_from_powers(
            self.p_min, PowerMeasurement(self.p_exp.value, sigma)
        ).uncertainty

    def l_inferred(self) -> float | None:
        try:
            return infer_loss(self.g_measured, self.budget.omega, self.budget.eta)
        except InconsistentBudgetError as e:
            logger.warning(f"Loss not inferable: {e}")
            return None

    def to_dict(self) -> dict[str, Any]:
        sigma_fit = self.contribution(self.p_exp_fit_sigma)
        sigma_cal = self.contribution(self.p_exp_calibration_sigma)
        return {
            "inputs": {
                "p_min_pW": self.p_min.value * 1e12,
                "p_exp_pW": self.p_exp.value * 1e12,
                "p_exp_fit_sigma_pW": self.p_exp_fit_sigma * 1e12,
                "p_exp_calibration_sigma_pW": self.p_exp_calibration_sigma * 1e12,
                "budget": self.budget.to_dict(),
            },
            "derived": {
                "G_measured": self.g_measured,
                "G_sigma_fit": sigma_fit,
                "G_sigma_calibration": sigma_cal,
                "G_sigma_total": math.hypot(sigma_fit, sigma_cal),
                "G_expected": self.g_expected,
                "L_inferred": self.l_inferred(),
                "shortfall_factor": shortfall_factor(
                    self.g_expected, self.g_measured
                )
                if self.g_expected > 0
                else None,
            },
            "provenance": dict(self.provenance),
        }
