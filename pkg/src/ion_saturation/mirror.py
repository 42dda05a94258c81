"""
Parabolic mirror geometry.

A ray entering parallel to the axis at radius r is reflected towards the focus
at polar angle θ = 2·atan(r/2f), measured from the direction pointing away from
the vertex. θ = π/2 corresponds to r = 2f, which splits the dipole-weighted
solid angle into two equal halves.
"""
import math
from dataclasses import dataclass

from scipy.optimize import brentq

from .errors import InvalidInputError, NoSolutionError

OMEGA_TOLERANCE = 1e-10


@dataclass(frozen=True)
class MirrorGeometry:
    """Focal length (m), captured polar range [theta_min, theta_max], reflectivity."""

    focal_length: float
    theta_min: float = 0.0
    theta_max: float = math.pi / 2
    reflectivity: float = 1.0

    def __post_init__(self):
        if not self.focal_length > 0:
            raise InvalidInputError(
                f"focal_length must be positive, got {self.focal_length}"
            )
        if not 0 <= self.theta_min < self.theta_max <= math.pi:
            raise InvalidInputError(
                f"need 0 <= theta_min < theta_max <= pi, got "
                f"({self.theta_min}, {self.theta_max})"
            )
        if not 0 <= self.reflectivity <= 1:
            raise InvalidInputError(
                f"reflectivity must be in [0, 1], got {self.reflectivity}"
            )

    @classmethod
    def from_omega(
        cls,
        focal_length: float,
        omega: float,
        theta_max: float = math.pi / 2,
        reflectivity: float = 1.0,
    ) -> "MirrorGeometry":
        """Recover the vertex hole from a target weighted solid angle."""
        deficit = weighted_solid_angle(0.0, theta_max) - omega
        if deficit <= 0:
            if deficit > -OMEGA_TOLERANCE:
                return cls(focal_length, 0.0, theta_max, reflectivity)
            raise NoSolutionError(
                f"omega={omega} exceeds the {weighted_solid_angle(0.0, theta_max):.6f} "
                f"available up to theta_max={theta_max}"
            )
        return cls(focal_length, hole_angle_for_omega(deficit), theta_max, reflectivity)

    @property
    def omega(self) -> float:
        return weighted_solid_angle(self.theta_min, self.theta_max)

    @property
    def hole_radius(self) -> float:
        return radius_from_theta(self.theta_min, self.focal_length)

    @property
    def aperture_radius(self) -> float:
        if self.theta_max >= math.pi:
            return math.inf
        return radius_from_theta(self.theta_max, self.focal_length)


def theta_from_radius(r: float, f: float) -> float:
    """Polar angle of the focused ray entering at radius r."""
    if r < 0:
        raise InvalidInputError(f"radius must be non-negative, got {r}")
    if not f > 0:
        raise InvalidInputError(f"focal length must be positive, got {f}")
    return 2.0 * math.atan(r / (2.0 * f))


def radius_from_theta(theta: float, f: float) -> float:
    """Entrance radius of the ray focused at polar angle theta."""
    if not 0 <= theta < math.pi:
        raise InvalidInputError(f"theta must be in [0, pi), got {theta}")
    if not f > 0:
        raise InvalidInputError(f"focal length must be positive, got {f}")
    return 2.0 * f * math.tan(theta / 2.0)


def weighted_solid_angle(theta_min: float, theta_max: float) -> float:
    """
    Solid-angle fraction weighted with the linear dipole pattern.

    Closed form of (3/4)·∫ sin³θ dθ, normalized so that (0, π) gives 1.
    """
    if not 0 <= theta_min < theta_max <= math.pi:
        raise InvalidInputError(
            f"need 0 <= theta_min < theta_max <= pi, got ({theta_min}, {theta_max})"
        )
    c1 = math.cos(theta_min)
    c2 = math.cos(theta_max)
    return 0.75 * (c1 - c2 - (c1**3 - c2**3) / 3.0)


def hole_angle_for_omega(omega_deficit: float) -> float:
    """Angle θ_h with weighted_solid_angle(0, θ_h) equal to the given deficit."""
    if not 0 < omega_deficit < 1:
        raise NoSolutionError(
            f"omega deficit must be in (0, 1), got {omega_deficit}"
        )

    def residual(theta: float) -> float:
        return weighted_solid_angle(0.0, theta) - omega_deficit

    theta = brentq(residual, 1e-12, math.pi, xtol=1e-14, rtol=1e-14)
    if abs(residual(theta)) > OMEGA_TOLERANCE:
        raise NoSolutionError(
            f"root search for omega deficit {omega_deficit} ended at residual "
            f"{residual(theta):.3e}"
        )
    return theta


def power_after_mirror(p_incident: float, geometry: MirrorGeometry) -> float:
    """Power reaching the ion after the single reflection."""
    if p_incident < 0:
        raise InvalidInputError(f"power must be non-negative, got {p_incident}")
    return p_incident * geometry.reflectivity
