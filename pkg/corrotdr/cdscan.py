"""
Chromatic dispersion from round-trip latency measured at several wavelengths.

All latencies are round-trip times in seconds; dispersion divides the
wavelength derivative of the RTT by twice the fiber length.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from corrotdr.fibersim import DispersionParams
from utils.error_handling import (
    AnalysisError,
    DegenerateDriftError,
    ErrorHandler,
    InvalidArgumentError,
    RankDeficientError,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA0 = 1550.0
C_BAND = (1530.0, 1565.0)


@dataclass
class WavelengthEntry:
    wavelength: float
    latencies: List[Tuple[float, float]]  # (wall_clock s, end_rtt s)


@dataclass
class WavelengthScan:
    entries: List[WavelengthEntry]
    fiber_length: float  # km

    @property
    def scan_start(self):
        return min(t for entry in self.entries for t, _ in entry.latencies)


@dataclass
class DriftModel:
    rate: float  # seconds of RTT per second of wall clock
    offsets: Dict[float, float]
    residual_rms: float
    scan_start: float = 0.0

    @property
    def rate_ps_per_hour(self):
        return self.rate * 1e12 * 3600.0

    @classmethod
    def zero(cls, scan_start=0.0):
        return cls(0.0, {}, 0.0, scan_start)


@dataclass
class LatencyPolynomial:
    """RTT(λ) = b0 + b1·(λ − λ0) + b2·(λ − λ0)², seconds and nm"""

    b0: float
    b1: float
    b2: float
    lambda0: float = DEFAULT_LAMBDA0
    fit_rms: float = 0.0

    def __call__(self, wavelength):
        dl = np.asarray(wavelength, dtype=float) - self.lambda0
        return self.b0 + self.b1 * dl + self.b2 * dl**2

    def derivative(self, wavelength):
        return self.b1 + 2.0 * self.b2 * (np.asarray(wavelength, dtype=float) - self.lambda0)


@dataclass
class ReferenceCurve:
    """Tabulated reference dispersion, ps/(nm·km) against nm"""

    wavelengths: np.ndarray
    dispersion: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.wavelengths)
        self.wavelengths = np.asarray(self.wavelengths, dtype=float)[order]
        self.dispersion = np.asarray(self.dispersion, dtype=float)[order]


@dataclass
class DispersionResult:
    poly: LatencyPolynomial
    fit_rms: float
    d_curve: List[Tuple[float, float]]
    drift: Optional[DriftModel] = None
    latencies: List[Tuple[float, float]] = field(default_factory=list)
    max_reference_error: Optional[float] = None

    def as_dict(self):
        return {
            "poly": {
                "b0_ns": self.poly.b0 * 1e9,
                "b1_ps_per_nm": self.poly.b1 * 1e12,
                "b2_ps_per_nm2": self.poly.b2 * 1e12,
                "lambda0_nm": self.poly.lambda0,
            },
            "fit_rms_ps": self.fit_rms * 1e12,
            "d_curve": [{"wavelength_nm": w, "d_ps_nm_km": d} for w, d in self.d_curve],
            "drift_model": None
            if self.drift is None
            else {
                "rate_ps_per_hour": self.drift.rate_ps_per_hour,
                "residual_ps": self.drift.residual_rms * 1e12,
            },
            "latencies": [{"wavelength_nm": w, "rtt_s": t} for w, t in self.latencies],
            "max_reference_error_ps_nm_km": self.max_reference_error,
        }


class DispersionScanner:
    """
    Drift compensation, latency polynomial and dispersion curve.
    """

    @staticmethod
    def estimate_drift(scan):
        """
        Fit one linear-in-time drift shared by all wavelengths

        Each wavelength keeps a free constant; the drift rate is common.

        Args:
            scan (WavelengthScan): Per-subset latencies of every wavelength

        Returns:
            DriftModel: Rate, per-wavelength offsets and residual RMS

        Raises:
            AnalysisError: A wavelength has fewer than 2 subset latencies
            DegenerateDriftError: Time and wavelength offsets cannot be separated
        """
        entries = scan.entries
        ErrorHandler.validate_input(len(entries) > 0, "scan has no wavelengths")
        for entry in entries:
            ErrorHandler.validate_input(
                len(entry.latencies) >= 2,
                f"wavelength {entry.wavelength} nm needs at least 2 subsets for drift estimation",
                AnalysisError,
            )
        start = scan.scan_start
        rows, values = [], []
        for column, entry in enumerate(entries):
            for wall_clock, rtt in entry.latencies:
                row = np.zeros(len(entries) + 1)
                row[column] = 1.0
                row[-1] = wall_clock - start
                rows.append(row)
                values.append(rtt)
        design = np.array(rows)
        values = np.array(values)

        # scale the time column for conditioning
        span = np.ptp(design[:, -1]) or 1.0
        design[:, -1] /= span
        reference = values.mean()
        solution, _, rank, _ = np.linalg.lstsq(design, values - reference, rcond=None)
        if rank < design.shape[1]:
            raise DegenerateDriftError(
                "drift is not separable from the per-wavelength offsets (all subsets simultaneous?)"
            )
        residual = values - reference - design @ solution
        rate = solution[-1] / span
        offsets = {entry.wavelength: float(solution[i] + reference) for i, entry in enumerate(entries)}
        model = DriftModel(float(rate), offsets, float(np.sqrt(np.mean(residual**2))), start)
        logger.info(
            "drift %.2f ps/h, residual %.3f ps", model.rate_ps_per_hour, model.residual_rms * 1e12
        )
        return model

    @staticmethod
    def implied_temperature_change(delta_rtt, coeff, base_rtt):
        """Temperature change (degC) that explains an RTT change on a fiber of given base RTT"""
        ErrorHandler.validate_input(coeff > 0 and base_rtt > 0, "coeff and base RTT must be positive")
        return delta_rtt / (coeff * base_rtt)

    @staticmethod
    def compensate_drift(scan, drift):
        """
        Remove the drift from every subset latency and average per wavelength

        Args:
            scan (WavelengthScan): Per-subset latencies
            drift (DriftModel): Drift to subtract

        Returns:
            list: (wavelength nm, corrected RTT s) per wavelength
        """
        start = scan.scan_start
        corrected = []
        for entry in scan.entries:
            values = [rtt - drift.rate * (t - start) for t, rtt in entry.latencies]
            corrected.append((entry.wavelength, float(np.mean(values))))
        return corrected

    @staticmethod
    def fit_latency_polynomial(pairs, lambda0=DEFAULT_LAMBDA0):
        """
        Ordinary least-squares quadratic of RTT against centered wavelength

        Args:
            pairs (list): (wavelength nm, RTT s)
            lambda0 (float): Centering wavelength, nm

        Returns:
            LatencyPolynomial: Coefficients and RMS fit error (seconds)
        """
        pairs = list(pairs)
        wavelengths = np.array([w for w, _ in pairs], dtype=float)
        rtts = np.array([t for _, t in pairs], dtype=float)
        ErrorHandler.validate_input(
            len(np.unique(wavelengths)) >= 3, "need at least 3 distinct wavelengths for a quadratic fit"
        )
        dl = wavelengths - lambda0
        vander = np.vander(dl, 3, increasing=True)
        # fit relative to the mean RTT so the ns-scale offset does not swamp ps residuals
        reference = rtts.mean()
        coeffs, _, rank, singular = np.linalg.lstsq(vander, rtts - reference, rcond=None)
        if rank < 3:
            raise RankDeficientError("wavelength design matrix is rank deficient")
        residual = rtts - reference - vander @ coeffs
        fit_rms = float(np.sqrt(np.mean(residual**2)))
        return LatencyPolynomial(coeffs[0] + reference, coeffs[1], coeffs[2], lambda0, fit_rms)

    @staticmethod
    def compute_dispersion(poly, fiber_length, wavelengths):
        """
        Dispersion curve from the RTT polynomial

        Args:
            poly (LatencyPolynomial): Fitted RTT(λ)
            fiber_length (float): Fiber length, km
            wavelengths (array-like): Grid in nm

        Returns:
            list: (wavelength nm, D ps/(nm·km))
        """
        ErrorHandler.validate_input(fiber_length > 0, "fiber length must be positive")
        grid = np.asarray(wavelengths, dtype=float)
        # round trip: the light crosses the fiber twice
        d = poly.derivative(grid) * 1e12 / (2.0 * fiber_length)
        return [(float(w), float(v)) for w, v in zip(grid, d)]

    @staticmethod
    def compare_with_reference(d_curve, reference):
        """
        Largest deviation from a reference dispersion

        Args:
            d_curve (list): (wavelength nm, D) pairs
            reference (DispersionParams or ReferenceCurve): Reference dispersion

        Returns:
            float: max |D_measured − D_ref| over the overlapping wavelengths, ps/(nm·km)
        """
        grid = np.array([w for w, _ in d_curve], dtype=float)
        measured = np.array([d for _, d in d_curve], dtype=float)
        ErrorHandler.validate_input(len(grid) > 0, "empty dispersion curve")
        if isinstance(reference, DispersionParams):
            expected = reference.dispersion(grid)
            keep = np.ones(len(grid), dtype=bool)
        else:
            lo, hi = reference.wavelengths[0], reference.wavelengths[-1]
            keep = (grid >= lo) & (grid <= hi)
            expected = np.interp(grid, reference.wavelengths, reference.dispersion)
        if not keep.any():
            raise InvalidArgumentError("measured and reference wavelength ranges do not overlap")
        return float(np.max(np.abs(measured[keep] - expected[keep])))

    @staticmethod
    def analyze_scan(scan, compensate=True, grid=None, reference=None, lambda0=DEFAULT_LAMBDA0):
        """
        Full dispersion chain of a wavelength scan

        Args:
            scan (WavelengthScan): Per-subset latencies
            compensate (bool): Estimate and remove the common drift first
            grid (array-like): Wavelengths for the D curve; C band in 0.5 nm steps if None
            reference (DispersionParams or ReferenceCurve): Optional comparison
            lambda0 (float): Centering wavelength

        Returns:
            DispersionResult: Polynomial, D curve, drift and reference deviation
        """
        if compensate:
            drift = DispersionScanner.estimate_drift(scan)
        else:
            drift = DriftModel.zero(scan.scan_start)
        latencies = DispersionScanner.compensate_drift(scan, drift)
        poly = DispersionScanner.fit_latency_polynomial(latencies, lambda0)
        if grid is None:
            grid = np.arange(C_BAND[0], C_BAND[1] + 0.25, 0.5)
        d_curve = DispersionScanner.compute_dispersion(poly, scan.fiber_length, grid)
        deviation = None
        if reference is not None:
            deviation = DispersionScanner.compare_with_reference(d_curve, reference)
        return DispersionResult(
            poly, poly.fit_rms, d_curve, drift if compensate else None, latencies, deviation
        )
