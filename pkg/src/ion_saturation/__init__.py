"""
Ion Saturation Package

Saturation-based characterization of free-space coupling to a single trapped
ion behind a deep parabolic mirror: saturation powers, coupling budgets,
vector focal fields, saturation-curve fits and focal scans.
"""

from ._version import __version__
from .cli import main, run_cli
from .config import Config, load_config
from .coupling import (
    CouplingBudget,
    CouplingReport,
    PowerMeasurement,
    budget_efficiency,
    efficiency_from_powers,
    infer_loss,
)
from .errors import IonSaturationError
from .focal_field import (
    AngularAmplitude,
    BeamProfile,
    FocalField,
    FocalGrid,
    apodize,
    apply_strehl,
    dipole_overlap,
    focal_field_point,
    fwhm_1d,
    intensity_map,
    optimize_waist,
)
from .mirror import MirrorGeometry, hole_angle_for_omega, weighted_solid_angle
from .satfit import (
    FitResult,
    SaturationDataset,
    fit_saturation,
    load_dataset_csv,
    p_quarter_at_ion,
    subtract_background,
)
from .scanlab import (
    IonWavepacket,
    ScanMap,
    blur_map,
    forward_scan,
    reconstruct_scan,
    required_blur,
    thermal_sigma,
)
from .tls import (
    AtomicTransition,
    Drive,
    excited_population,
    saturation_power,
    scattering_rate,
)

__all__ = [
    "AngularAmplitude",
    "AtomicTransition",
    "BeamProfile",
    "Config",
    "CouplingBudget",
    "CouplingReport",
    "Drive",
    "FitResult",
    "FocalField",
    "FocalGrid",
    "IonSaturationError",
    "IonWavepacket",
    "MirrorGeometry",
    "PowerMeasurement",
    "SaturationDataset",
    "ScanMap",
    "__version__",
    "apodize",
    "apply_strehl",
    "blur_map",
    "budget_efficiency",
    "dipole_overlap",
    "efficiency_from_powers",
    "excited_population",
    "fit_saturation",
    "focal_field_point",
    "forward_scan",
    "fwhm_1d",
    "hole_angle_for_omega",
    "infer_loss",
    "intensity_map",
    "load_config",
    "load_dataset_csv",
    "main",
    "optimize_waist",
    "p_quarter_at_ion",
    "reconstruct_scan",
    "required_blur",
    "run_cli",
    "saturation_power",
    "scattering_rate",
    "subtract_background",
    "thermal_sigma",
    "weighted_solid_angle",
]
