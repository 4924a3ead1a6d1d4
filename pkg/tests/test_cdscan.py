import unittest

import numpy as np

from corrotdr.cdscan import (
    DispersionScanner,
    DriftModel,
    LatencyPolynomial,
    ReferenceCurve,
    WavelengthEntry,
    WavelengthScan,
)
from corrotdr.fibersim import DispersionParams, FiberModel, FiberSimulator, TemperatureProfile
from utils.error_handling import AnalysisError, DegenerateDriftError, InvalidArgumentError

WAVELENGTHS = [1530.0 + i * 35.0 / 6.0 for i in range(7)]
ORDER = [3, 0, 6, 1, 5, 2, 4]
BASE_RTT = 21638.9586e-9
SWEEP_SECONDS = 3.5 * 3600.0


def drifting_scan(offsets, rate, subsets=4):
    """Latencies offset(λ) + rate·t, wavelengths measured in ORDER"""
    per_wavelength = SWEEP_SECONDS / len(ORDER)
    entries = []
    for m, index in enumerate(ORDER):
        wavelength = WAVELENGTHS[index]
        clocks = [m * per_wavelength + (k + 0.5) * per_wavelength / subsets for k in range(subsets)]
        entries.append(WavelengthEntry(wavelength, [(t, offsets(wavelength) + rate * t) for t in clocks]))
    return WavelengthScan(entries, 2.2)


class TestDriftCompensation(unittest.TestCase):
    """Test cases for drift estimation and removal"""

    def test_recovers_injected_drift(self):
        """120 ps over 3.5 h is 34.3 ps/h, about 0.8 degC on the 2.2 km fiber"""
        rate = 120e-12 / SWEEP_SECONDS
        scan = drifting_scan(lambda w: BASE_RTT + 1e-12 * (w - 1550.0) ** 2, rate)
        drift = DispersionScanner.estimate_drift(scan)
        self.assertAlmostEqual(drift.rate_ps_per_hour, 34.29, delta=0.05 * 34.29)
        self.assertLess(drift.residual_rms, 1e-18)
        change = DispersionScanner.implied_temperature_change(drift.rate * SWEEP_SECONDS, 7e-6, BASE_RTT)
        self.assertAlmostEqual(change, 0.8, delta=0.05)

    def test_zero_drift(self):
        scan = drifting_scan(lambda w: BASE_RTT + 1e-12 * w, 0.0)
        drift = DispersionScanner.estimate_drift(scan)
        self.assertAlmostEqual(drift.rate_ps_per_hour, 0.0, delta=1e-6)

    def test_pure_drift_compensates_to_constant(self):
        scan = drifting_scan(lambda w: BASE_RTT, 1e-15)
        drift = DispersionScanner.estimate_drift(scan)
        corrected = DispersionScanner.compensate_drift(scan, drift)
        values = np.array([t for _, t in corrected])
        self.assertLess(np.ptp(values), 1e-15)

    def test_zero_model_is_plain_average(self):
        scan = WavelengthScan([WavelengthEntry(1550.0, [(0.0, 1.0), (10.0, 3.0)])], 1.0)
        self.assertEqual(DispersionScanner.compensate_drift(scan, DriftModel.zero()), [(1550.0, 2.0)])

    def test_simultaneous_subsets_are_degenerate(self):
        entries = [WavelengthEntry(w, [(0.0, 1e-5), (0.0, 1e-5)]) for w in WAVELENGTHS]
        with self.assertRaises(DegenerateDriftError):
            DispersionScanner.estimate_drift(WavelengthScan(entries, 2.2))

    def test_needs_two_subsets(self):
        entries = [WavelengthEntry(w, [(float(i), 1e-5)]) for i, w in enumerate(WAVELENGTHS)]
        with self.assertRaises(AnalysisError):
            DispersionScanner.estimate_drift(WavelengthScan(entries, 2.2))


class TestLatencyPolynomial(unittest.TestCase):
    """Test cases for the quadratic fit and dispersion curve"""

    def test_exact_quadratic(self):
        truth = LatencyPolynomial(BASE_RTT, 72.6e-12, 0.1276e-12)
        pairs = [(w, float(truth(w))) for w in WAVELENGTHS]
        poly = DispersionScanner.fit_latency_polynomial(pairs)
        self.assertAlmostEqual(poly.b0, truth.b0, delta=1e-10 * truth.b0)
        self.assertAlmostEqual(poly.b1, truth.b1, delta=1e-8 * truth.b1)
        self.assertAlmostEqual(poly.b2, truth.b2, delta=1e-8 * truth.b2)
        self.assertLess(poly.fit_rms, 1e-18)

    def test_constant_latency(self):
        poly = DispersionScanner.fit_latency_polynomial([(w, BASE_RTT) for w in WAVELENGTHS])
        self.assertLess(abs(poly.b1), 1e-24)
        self.assertLess(abs(poly.b2), 1e-25)

    def test_needs_three_wavelengths(self):
        with self.assertRaises(InvalidArgumentError):
            DispersionScanner.fit_latency_polynomial([(1550.0, 1e-5), (1550.0, 1e-5), (1560.0, 1e-5)])

    def test_noise_sets_fit_rms(self):
        rng = np.random.default_rng(5)
        truth = LatencyPolynomial(BASE_RTT, 72.6e-12, 0.1276e-12)
        grid = np.linspace(1530.0, 1565.0, 7)
        ratios = []
        for _ in range(400):
            pairs = [(w, float(truth(w)) + rng.normal(0, 2e-12)) for w in grid]
            ratios.append(DispersionScanner.fit_latency_polynomial(pairs).fit_rms ** 2)
        expected = (2e-12) ** 2 * (7 - 3) / 7
        self.assertAlmostEqual(np.mean(ratios), expected, delta=0.2 * expected)

    def test_dispersion_from_linear_model(self):
        params = DispersionParams(16.5, 0.058)
        length = 2.2
        truth = LatencyPolynomial(BASE_RTT, 2 * length * params.d0 * 1e-12, length * params.s0 * 1e-12)
        curve = DispersionScanner.compute_dispersion(truth, length, [1530.0, 1550.0, 1565.0])
        for wavelength, d in curve:
            self.assertAlmostEqual(d, float(params.dispersion(wavelength)), places=9)

    def test_zero_and_scaling(self):
        flat = LatencyPolynomial(BASE_RTT, 0.0, 0.0)
        self.assertEqual([d for _, d in DispersionScanner.compute_dispersion(flat, 2.2, [1550.0])], [0.0])
        poly = LatencyPolynomial(BASE_RTT, 70e-12, 0.1e-12)
        short = DispersionScanner.compute_dispersion(poly, 1.0, [1540.0])[0][1]
        long = DispersionScanner.compute_dispersion(poly, 2.0, [1540.0])[0][1]
        self.assertAlmostEqual(long, short / 2)

    def test_curve_matches_numerical_derivative(self):
        poly = LatencyPolynomial(BASE_RTT, 72.6e-12, 0.1276e-12)
        h = 1e-3
        for wavelength, d in DispersionScanner.compute_dispersion(poly, 2.2, [1535.0, 1560.0]):
            numeric = (float(poly(wavelength + h)) - float(poly(wavelength - h))) / (2 * h) * 1e12 / 4.4
            self.assertAlmostEqual(numeric, d, delta=1e-4 * abs(d))


class TestReferenceComparison(unittest.TestCase):
    """Test cases for the reference comparison"""

    def setUp(self):
        """Set up test environment"""
        self.params = DispersionParams()
        self.curve = [(w, float(self.params.dispersion(w))) for w in np.arange(1530.0, 1565.5, 0.5)]

    def test_identical(self):
        self.assertEqual(DispersionScanner.compare_with_reference(self.curve, self.params), 0.0)

    def test_constant_offset(self):
        shifted = [(w, d + 0.1) for w, d in self.curve]
        self.assertAlmostEqual(DispersionScanner.compare_with_reference(shifted, self.params), 0.1)

    def test_tabulated_reference(self):
        reference = ReferenceCurve(np.array([1565.0, 1540.0]), self.params.dispersion([1565.0, 1540.0]))
        self.assertLess(DispersionScanner.compare_with_reference(self.curve, reference), 1e-9)

    def test_disjoint_ranges(self):
        reference = ReferenceCurve(np.array([1300.0, 1310.0]), np.array([0.0, 1.0]))
        with self.assertRaises(InvalidArgumentError):
            DispersionScanner.compare_with_reference(self.curve, reference)


class TestScanAnalysis(unittest.TestCase):
    """Dispersion chain on channel-model latencies"""

    def setUp(self):
        """2.2 km fiber warming by 120 ps of round trip over the sweep"""
        coeff = 7e-6
        rate = 120e-12 / (coeff * BASE_RTT * 3.5)
        self.model = FiberModel.from_round_trip(
            2200.0, BASE_RTT, temperature=TemperatureProfile(drift_rate=rate, coeff=coeff)
        )

        def end_rtt(wavelength, wall_clock):
            return self.model.lead_in_delay + FiberSimulator.group_delay_rtt(self.model, wavelength, wall_clock)

        per_wavelength = SWEEP_SECONDS / len(ORDER)
        entries = []
        for m, index in enumerate(ORDER):
            wavelength = WAVELENGTHS[index]
            clocks = [m * per_wavelength + (k + 0.5) * per_wavelength / 4 for k in range(4)]
            entries.append(WavelengthEntry(wavelength, [(t, end_rtt(wavelength, t)) for t in clocks]))
        self.scan = WavelengthScan(entries, 2.2)

    def test_compensated_scan_matches_truth(self):
        result = DispersionScanner.analyze_scan(self.scan, reference=self.model.dispersion)
        self.assertLess(result.max_reference_error, 0.01)
        self.assertLess(result.fit_rms, 0.05e-12)
        self.assertAlmostEqual(result.drift.rate_ps_per_hour, 120.0 / 3.5, delta=0.5)
        self.assertEqual(len(result.latencies), 7)

    def test_drift_inflates_uncompensated_fit(self):
        compensated = DispersionScanner.analyze_scan(self.scan, compensate=True)
        raw = DispersionScanner.analyze_scan(self.scan, compensate=False)
        self.assertIsNone(raw.drift)
        self.assertGreater(raw.fit_rms, compensated.fit_rms)
        self.assertGreater(raw.fit_rms, 1e-12)

    def test_result_document(self):
        document = DispersionScanner.analyze_scan(self.scan, grid=[1550.0]).as_dict()
        self.assertEqual(len(document["d_curve"]), 1)
        self.assertAlmostEqual(document["d_curve"][0]["d_ps_nm_km"], 16.5, delta=0.01)
        self.assertIn("rate_ps_per_hour", document["drift_model"])


if __name__ == '__main__':
    unittest.main()
