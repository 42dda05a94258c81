"""
Steady-state response of a driven two-level system.

Powers are in watts and rates in photons per second throughout; conversion to
pW happens only where data enters or leaves the toolkit.
"""
import math
from dataclasses import dataclass

from scipy import constants

from .errors import InvalidInputError

YB174_WAVELENGTH = 369.5e-9
YB174_LINEWIDTH_HZ = 19.6e6
# pi transition of a J=1/2 <-> J=1/2 line
YB174_PI_MULTIPLICITY = 3.0


@dataclass(frozen=True)
class AtomicTransition:
    """Driven transition: wavelength (m), decay rate gamma (rad/s), multiplicity."""

    wavelength: float
    gamma: float
    multiplicity: float = 1.0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise InvalidInputError(f"wavelength must be positive, got {self.wavelength}")
        if not self.gamma > 0:
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")
        if not self.multiplicity >= 1:
            raise InvalidInputError(
                f"multiplicity must be >= 1, got {self.multiplicity}"
            )

    @classmethod
    def from_linewidth(
        cls, wavelength: float, linewidth_hz: float, multiplicity: float = 1.0
    ) -> "AtomicTransition":
        """Build a transition from its natural linewidth Γ/2π in Hz."""
        return cls(wavelength, 2 * math.pi * linewidth_hz, multiplicity)

    @classmethod
    def ytterbium_174(cls, multiplicity: float = YB174_PI_MULTIPLICITY):
        """The 2S1/2 <-> 2P1/2 cooling line of 174Yb+."""
        return cls.from_linewidth(YB174_WAVELENGTH, YB174_LINEWIDTH_HZ, multiplicity)

    @property
    def angular_frequency(self) -> float:
        return 2 * math.pi * constants.c / self.wavelength


@dataclass(frozen=True)
class Drive:
    """Dipolar photon rate |β|² (photons/s) and normalized detuning δ = 2Δ/Γ."""

    photon_rate: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.photon_rate >= 0:
            raise InvalidInputError(
                f"photon_rate must be non-negative, got {self.photon_rate}"
            )
        if not math.isfinite(self.delta):
            raise InvalidInputError(f"delta must be finite, got {self.delta}")


def photon_energy(transition: AtomicTransition) -> float:
    """Photon energy h·c/λ in joules."""
    if not transition.wavelength > 0:
        raise InvalidInputError("wavelength must be positive")
    return constants.h * constants.c / transition.wavelength


def _check_gamma(gamma: float) -> None:
    if not gamma > 0:
        raise InvalidInputError(f"gamma must be positive, got {gamma}")


def scattering_rate(drive: Drive, gamma: float) -> float:
    """Steady-state scattering rate in photons/s, bounded by Γ/2."""
    _check_gamma(gamma)
    detuning_term = 1.0 + drive.delta**2
    drive_term = 8.0 * drive.photon_rate / gamma
    # (Γ/2)·(1 − D/(D+s)) written without the cancellation at weak drive
    return (gamma / 2) * drive_term / (detuning_term + drive_term)


def saturation_parameter(drive: Drive, gamma: float) -> float:
    """q = 8|β|²/(Γ(1+δ²))."""
    _check_gamma(gamma)
    return 8.0 * drive.photon_rate / (gamma * (1.0 + drive.delta**2))


def excited_population(drive: Drive, gamma: float) -> float:
    """Upper-level population ρ = q/(2(1+q)), always below 1/2."""
    q = saturation_parameter(drive, gamma)
    return q / (2.0 * (1.0 + q))


def saturation_power(
    transition: AtomicTransition, delta: float = 0.0, g: float = 1.0
) -> float:
    """
    Incident power at the ion that gives ρ = 1/4.

    Args:
        transition: The driven transition
        delta: Normalized detuning 2Δ/Γ
        g: Coupling efficiency in (0, 1]

    Returns:
        Power in watts
    """
    if not 0 < g <= 1:
        raise InvalidInputError(f"coupling efficiency must be in (0, 1], got {g}")
    return (
        transition.multiplicity
        * photon_energy(transition)
        * transition.gamma
        * (1.0 + delta**2)
        / (8.0 * g)
    )


def population_vs_power(p: float, p_quarter: float) -> float:
    """Population at incident power p, parametrized by the ρ=1/4 power."""
    if not p_quarter > 0:
        raise InvalidInputError(f"p_quarter must be positive, got {p_quarter}")
    if p < 0:
        raise InvalidInputError(f"power must be non-negative, got {p}")
    return p / (2.0 * (p + p_quarter))


def photon_rate_for_population(
    rho: float, transition: AtomicTransition, delta: float = 0.0, g: float = 1.0
) -> float:
    """Incident photon rate that reaches population rho in (0, 1/2)."""
    if not 0 < rho < 0.5:
        raise InvalidInputError(f"target population must be in (0, 1/2), got {rho}")
    if not 0 < g <= 1:
        raise InvalidInputError(f"coupling efficiency must be in (0, 1], got {g}")
    # rho = q/(2(1+q))  =>  q = 2 rho / (1 - 2 rho)
    q = 2.0 * rho / (1.0 - 2.0 * rho)
    dipolar_rate = q * transition.gamma * (1.0 + delta**2) / 8.0
    return transition.multiplicity * dipolar_rate / g


def doppler_temperature(transition: AtomicTransition) -> float:
    """Doppler cooling limit ħΓ/(2k_B) in kelvin."""
    return constants.hbar * transition.gamma / (2.0 * constants.k)
