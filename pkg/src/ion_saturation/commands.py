"""
The ion-saturation commands.

Each command reads a resolved Config, runs the library chain for one task and
returns a Report. Commands that write data files put them under an output
directory and list them in the report.
"""
import logging
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any

from .command_base import CommandHandler
from .config import COMPUTE, OPTIMIZE, Config
from .coupling import (
    CouplingBudget,
    CouplingReport,
    PowerMeasurement,
    budget_efficiency,
    expected_power,
)
from .errors import InvalidInputError
from .focal_field import (
    AngularAmplitude,
    BeamProfile,
    FocalField,
    FocalGrid,
    apodize,
    apply_strehl,
    dipole_overlap,
    focal_fwhm,
    input_power,
    intensity_map,
    optimize_waist,
)
from .mirror import MirrorGeometry
from .report import Report
from .satfit import (
    PW,
    fit_saturation,
    load_dataset_csv,
    merge_duplicate_powers,
    p_quarter_at_ion,
    subtract_background,
)
from .scanlab import (
    IonWavepacket,
    blurred_field,
    forward_scan,
    probe_schedule,
    read_scan_csv,
    reconstruct_scan,
    scan_summary,
    write_map_csv,
    write_scan_csv,
    write_summary,
)
from .tls import doppler_temperature, saturation_power

logger = logging.getLogger(__name__)

SCAN_CSV = "scan_simulate.csv"
TRUTH_CSV = "focal_truth.csv"
MAP_CSV = "scan_map.csv"
SUMMARY_JSON = "scan_summary.json"


def bundled_dataset() -> Path:
    """Path of the synthetic saturation dataset shipped with the package."""
    return Path(
        str(resources.files("ion_saturation").joinpath("data/synthetic_saturation.csv"))
    )


class _PhysicsCommand(CommandHandler):
    """Shared setup: transition, mirror geometry and the resolved overlap."""

    def _initialize_handler(self) -> None:
        self.transition = self.config.transition.build()
        self.delta = self.config.transition.detuning_delta
        self.geometry: MirrorGeometry = self.config.mirror.build()
        self._waist: float | None = None

    def waist(self) -> float:
        """Configured doughnut waist, or the overlap-optimal one."""
        if self._waist is None:
            configured = self.config.beam.waist_m
            if configured == OPTIMIZE:
                self._waist = optimize_waist(self.geometry).waist
            else:
                self._waist = float(configured)
        return self._waist

    def amplitude(self) -> AngularAmplitude:
        return apodize(BeamProfile(self.waist()), self.geometry)

    def overlap(self) -> dict[str, Any]:
        """η from the config, or the computed doughnut overlap with the Strehl factor."""
        budget = self.config.budget
        if budget.eta != COMPUTE:
            return {"eta": float(budget.eta), "source": "config"}
        eta_mode = dipole_overlap(self.amplitude())
        return {
            "eta": apply_strehl(eta_mode, budget.strehl),
            "eta_mode": eta_mode,
            "strehl": budget.strehl,
            "waist_m": self.waist(),
            "source": "computed",
        }

    def budget(self) -> tuple[CouplingBudget, dict[str, Any]]:
        details = self.overlap()
        return (
            CouplingBudget(self.geometry.omega, details["eta"], self.config.budget.loss),
            details,
        )

    def geometry_section(self) -> dict[str, Any]:
        g = self.geometry
        return {
            "focal_length_m": g.focal_length,
            "theta_min_rad": g.theta_min,
            "theta_max_rad": g.theta_max,
            "hole_radius_m": g.hole_radius,
            "aperture_radius_m": g.aperture_radius,
            "omega": g.omega,
            "reflectivity": g.reflectivity,
        }


class PredictCommand(_PhysicsCommand):
    """Minimal and expected saturation powers for the configured budget."""

    name = "predict"

    def run(self, **kwargs: Any) -> Report:
        transition = self.transition
        p_tls = saturation_power(replace(transition, multiplicity=1.0), self.delta)
        p_min = saturation_power(transition, self.delta)
        budget, overlap = self.budget()
        g = budget_efficiency(budget)
        report = self.new_report()
        report.add_section(
            "transition",
            {
                "wavelength_m": transition.wavelength,
                "gamma_rad_per_s": transition.gamma,
                "multiplicity": transition.multiplicity,
                "detuning_delta": self.delta,
                "doppler_temperature_K": doppler_temperature(transition),
            },
        )
        report.add_section("mirror", self.geometry_section())
        report.add_section(
            "budget", {**budget.to_dict(), "G_expected": g, "overlap": overlap}
        )
        powers = {"p_min_tls_pW": p_tls / PW, "p_min_pW": p_min / PW}
        if g > 0:
            p_ion = expected_power(p_min, g)
            powers["p_expected_at_ion_pW"] = p_ion / PW
            if self.geometry.reflectivity > 0:
                powers["p_expected_at_mirror_pW"] = (
                    p_ion / self.geometry.reflectivity / PW
                )
        else:
            logger.warning("Budget efficiency is zero; no expected power")
        report.add_section("powers", powers)
        return report


class FitCommand(_PhysicsCommand):
    """Fit a saturation curve and derive the coupling efficiency."""

    name = "fit"

    def run(self, csv_path: str | Path | None = None, **kwargs: Any) -> Report:
        path = Path(csv_path) if csv_path is not None else bundled_dataset()
        raw = load_dataset_csv(path, detuning_delta=self.delta)
        raw, merged = merge_duplicate_powers(raw)
        fit = fit_saturation(
            subtract_background(raw), float_offset=self.config.fit.float_offset
        )
        at_ion = p_quarter_at_ion(fit, self.geometry)
        calibration = self.config.fit.power_sigma_at_ion_pW * PW
        p_min = PowerMeasurement(saturation_power(self.transition, self.delta))
        budget, overlap = self.budget()
        coupling = CouplingReport(
            p_min=p_min,
            p_exp=at_ion,
            p_exp_fit_sigma=at_ion.uncertainty,
            p_exp_calibration_sigma=calibration,
            budget=budget,
            provenance=_provenance(path),
        )
        report = self.new_report()
        report.add_section(
            "data",
            {"path": str(path), "points": len(raw), "duplicates_merged": merged},
        )
        report.add_section("fit", fit.to_dict())
        report.add_section(
            "p_quarter_at_ion",
            {"value_pW": at_ion.value / PW, "fit_sigma_pW": at_ion.uncertainty / PW},
        )
        report.add_section("coupling", coupling.to_dict())
        report.add_section("overlap", overlap)
        return report


class CouplingReportCommand(_PhysicsCommand):
    """Measured vs expected coupling from a known ρ=1/4 power."""

    name = "coupling-report"

    def run(
        self,
        p_exp_pw: float | None = None,
        fit_sigma_pw: float = 0.0,
        at_mirror: bool = False,
        **kwargs: Any,
    ) -> Report:
        if p_exp_pw is not None and kwargs.get("csv_path") is not None:
            raise InvalidInputError("give either a measured power or a CSV to fit")
        if p_exp_pw is None:
            report = FitCommand(self.config).run(**kwargs)
            report.title = self.name
            return report
        factor = self.geometry.reflectivity if at_mirror else 1.0
        p_exp = PowerMeasurement(p_exp_pw * PW, fit_sigma_pw * PW).scaled(factor)
        budget, overlap = self.budget()
        coupling = CouplingReport(
            p_min=PowerMeasurement(saturation_power(self.transition, self.delta)),
            p_exp=p_exp,
            p_exp_fit_sigma=p_exp.uncertainty,
            p_exp_calibration_sigma=self.config.fit.power_sigma_at_ion_pW * PW,
            budget=budget,
            provenance=_provenance(None, at_mirror),
        )
        report = self.new_report()
        for section, values in coupling.to_dict().items():
            report.add_section(section, values)
        report.add_section("overlap", overlap)
        return report


def _provenance(path: Path | None, at_mirror: bool = False) -> dict[str, str]:
    if path is not None:
        source = f"fitted P1/4 from {path}, times mirror reflectivity"
    elif at_mirror:
        source = "given power at the mirror, times mirror reflectivity"
    else:
        source = "given power at the ion"
    return {
        "p_min": "saturation_power(transition, delta) including multiplicity, g=1",
        "p_exp": source,
        "p_exp_calibration_sigma": "config fit.power_sigma_at_ion_pW",
        "G_expected": "omega * eta^2 * (1 - loss)",
    }


class OptimizeWaistCommand(_PhysicsCommand):
    """Doughnut waist that maximizes the dipole-mode overlap."""

    name = "optimize-waist"

    def run(self, **kwargs: Any) -> Report:
        optimum = optimize_waist(self.geometry)
        beam = BeamProfile(optimum.waist)
        report = self.new_report()
        report.add_section("mirror", self.geometry_section())
        report.add_section(
            "waist",
            {
                "waist_m": optimum.waist,
                "waist_over_focal_length": optimum.waist / self.geometry.focal_length,
                "eta_mode": optimum.eta,
                "eta_with_strehl": apply_strehl(optimum.eta, self.config.budget.strehl),
                "captured_power_fraction": input_power(beam, self.geometry)
                / beam.power(),
            },
        )
        return report


class _ScanCommand(_PhysicsCommand):
    def predicted_fwhm(self) -> float:
        axis = "z" if self.config.scan.axis == "z" else "x"
        return focal_fwhm(self.amplitude(), self.transition.wavelength, axis=axis)

    def axes(self) -> tuple[str, str]:
        return ("z", "y") if self.config.scan.axis == "z" else ("x", "y")

    def truth(self) -> FocalField:
        scan = self.config.scan
        if scan.axis == "z":
            grid = FocalGrid.line("z", scan.nx, scan.pitch_m)
        else:
            grid = FocalGrid.plane(scan.nx, scan.ny, scan.pitch_m)
        field = intensity_map(
            self.amplitude(), grid, self.transition.wavelength, workers=scan.workers
        )
        return blurred_field(field, scan.blur_sigma_m)


class ScanSimulateCommand(_ScanCommand):
    """Forward-simulate a saturation scan across the focus."""

    name = "scan simulate"

    def run(self, out_dir: str | Path = ".", **kwargs: Any) -> Report:
        scan = self.config.scan
        truth = self.truth()
        p_quarter_peak = scan.p_quarter_peak_pW * PW
        probes = probe_schedule(
            p_quarter_peak, scan.probe_count, scan.probe_min_factor, scan.probe_max_factor
        )
        datasets = forward_scan(
            truth,
            probes,
            asymptote=scan.asymptote_cps,
            duration=scan.duration_s,
            seed=scan.seed,
            p_quarter_peak=p_quarter_peak,
            noiseless=scan.noiseless,
            background_rate=scan.background_cps,
            workers=scan.workers,
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_scan_csv(datasets, out / SCAN_CSV)
        truth.to_csv(out / TRUTH_CSV)
        ny, nx = datasets.grid.shape
        report = self.new_report()
        report.add_section(
            "scan",
            {
                "nx": nx,
                "ny": ny,
                "pitch_m": datasets.grid.pitch,
                "axis": scan.axis,
                "probe_powers_pW": probes / PW,
                "blur_sigma_m": scan.blur_sigma_m,
                "seed": scan.seed,
            },
        )
        report.add_file(out / SCAN_CSV).add_file(out / TRUTH_CSV)
        return report


class ScanReconstructCommand(_ScanCommand):
    """Fit a forward-scan CSV pixel by pixel and summarize the focal map."""

    name = "scan reconstruct"

    def run(
        self,
        scan_path: str | Path | None = None,
        out_dir: str | Path = ".",
        **kwargs: Any,
    ) -> Report:
        out = Path(out_dir)
        path = Path(scan_path) if scan_path is not None else out / SCAN_CSV
        datasets = read_scan_csv(path, detuning_delta=self.delta)
        scan_map = reconstruct_scan(datasets, workers=self.config.scan.workers)
        scan = self.config.scan
        wavepacket = IonWavepacket.from_atomic_mass(
            scan.ion_mass_u, scan.trap_frequency_hz, doppler_temperature(self.transition)
        )
        summary = scan_summary(
            scan_map, self.predicted_fwhm(), wavepacket.sigma, axes=self.axes()
        )
        out.mkdir(parents=True, exist_ok=True)
        write_map_csv(scan_map, out / MAP_CSV)
        write_summary(summary, out / SUMMARY_JSON)
        report = self.new_report()
        report.add_section("summary", summary)
        report.add_file(out / MAP_CSV).add_file(out / SUMMARY_JSON)
        return report


COMMANDS: dict[str, type[CommandHandler]] = {
    cls.name: cls
    for cls in (
        PredictCommand,
        FitCommand,
        ScanSimulateCommand,
        ScanReconstructCommand,
        OptimizeWaistCommand,
        CouplingReportCommand,
    )
}


def create_command(name: str, config: Config | None = None) -> CommandHandler:
    """Instantiate the command registered under name."""
    return COMMANDS[name](config)
