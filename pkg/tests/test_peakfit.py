import dataclasses
import json
import unittest

import numpy as np

from corrotdr.corrproc import CorrelationProcessor, CorrelationResult
from corrotdr.fibersim import CaptureSettings, FiberModel, FiberSimulator, ReflectionEvent
from corrotdr.peakfit import LatencyPipeline, LatencyReport, PeakEstimate, PeakFitter, PipelineConfig
from corrotdr.seqgen import BurstSpec, SequenceGenerator
from utils.config import RunConfig
from utils.error_handling import FitDegenerateError, InsufficientPeaksError, InvalidArgumentError

FS = 40e9


def estimate(center):
    return PeakEstimate(center, 1e-11, 1.0, 0.0, 0.0, True, 5)


def short_fiber(lead_in=25e-9, fiber_rtt=200e-9, events=None):
    """20 m fiber: input, end and triple reflections at 25, 225 and 425 ns"""
    if events is None:
        events = (ReflectionEvent(0.0, 0.0398, "air-gap"), ReflectionEvent(20.0, 0.9, "fiber-end"))
    return FiberModel.from_round_trip(20.0, fiber_rtt, lead_in_delay=lead_in, events=events)


class TestPeakDetection(unittest.TestCase):
    """Test cases for peak detection"""

    def test_flat_correlation(self):
        self.assertEqual(PeakFitter.detect_peaks(CorrelationResult(np.zeros(500), FS)), [])

    def test_close_peaks_keep_the_larger(self):
        values = np.zeros(2000)
        values[100] = 1.0
        values[120] = 0.5
        values[1500] = 0.3
        peaks = PeakFitter.detect_peaks(CorrelationResult(values, FS), 0.1, 10e-9, 3)
        self.assertEqual([i for i, _ in peaks], [100, 1500])

    def test_max_peaks_keeps_strongest_in_time_order(self):
        values = np.zeros(3000)
        values[[500, 1000, 1500, 2000]] = [0.2, 1.0, 0.5, 0.05]
        peaks = PeakFitter.detect_peaks(CorrelationResult(values, FS), 0.01, 10e-9, 3)
        self.assertEqual([i for i, _ in peaks], [500, 1000, 1500])

    def test_threshold_range(self):
        with self.assertRaises(InvalidArgumentError):
            PeakFitter.detect_peaks(CorrelationResult(np.zeros(5), FS), 0.0)


class TestGaussianFit(unittest.TestCase):
    """Test cases for the 4-parameter Gaussian fit"""

    def test_exact_gaussian_recovered(self):
        x = np.arange(200, dtype=float)
        truth = (100.37, 2.3, 3.0, 0.5)
        values = PeakFitter.gaussian_model(truth, x)
        fit = PeakFitter.fit_gaussian(CorrelationResult(values, FS, 1e-6), 100, 12)
        self.assertTrue(fit.converged)
        self.assertAlmostEqual(fit.center, 1e-6 + truth[0] / FS, delta=1e-8 * truth[0] / FS)
        self.assertAlmostEqual(fit.width, truth[1] / FS, delta=1e-8 * truth[1] / FS)
        self.assertAlmostEqual(fit.amplitude, truth[2], delta=1e-8 * truth[2])
        self.assertAlmostEqual(fit.offset, truth[3], delta=1e-8)
        self.assertLess(fit.residual_rms, 1e-9)

    def test_residual_orthogonal_to_jacobian(self):
        rng = np.random.default_rng(3)
        x = np.arange(-12.0, 13.0)
        y = PeakFitter.gaussian_model((0.2, 2.0, 1.0, 0.1), x) + rng.normal(0, 0.01, len(x))
        values = np.zeros(100)
        values[38:63] = y
        fit = PeakFitter.fit_gaussian(CorrelationResult(values, 1.0), 50, 12)
        params = (fit.center - 50, fit.width, fit.amplitude, fit.offset)
        residual = PeakFitter.gaussian_model(params, x) - y
        gradient = PeakFitter.gaussian_jacobian(params, x).T @ residual
        self.assertTrue(np.all(np.abs(gradient) < 1e-6 * np.linalg.norm(residual) + 1e-12))

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        x = np.linspace(-10, 10, 41)
        for _ in range(5):
            params = np.array([rng.uniform(-2, 2), rng.uniform(1, 3), rng.uniform(0.5, 2), rng.uniform(-1, 1)])
            analytic = PeakFitter.gaussian_jacobian(params, x)
            numeric = np.empty_like(analytic)
            for j in range(4):
                step = 1e-7 * max(1.0, abs(params[j]))
                up, down = params.copy(), params.copy()
                up[j] += step
                down[j] -= step
                numeric[:, j] = (PeakFitter.gaussian_model(up, x) - PeakFitter.gaussian_model(down, x)) / (2 * step)
            np.testing.assert_allclose(numeric, analytic, rtol=1e-5, atol=1e-5 * np.abs(analytic).max())

    def test_center_matches_grid_search(self):
        """Profile the squared error over the center with width fixed, amplitude and offset solved linearly"""
        rng = np.random.default_rng(8)
        x = np.arange(200, dtype=float)
        values = PeakFitter.gaussian_model((100.3, 2.2, 1.0, 0.1), x) + rng.normal(0, 0.02, len(x))
        fit = PeakFitter.fit_gaussian(CorrelationResult(values, FS), 100, 12)
        window = x[88:113]
        y = values[88:113]
        width = fit.width * FS
        best, best_sse = None, np.inf
        for center in 100.0 + np.arange(-0.5, 0.5, 0.001):
            bell = PeakFitter.gaussian_model((center, width, 1.0, 0.0), window)
            design = np.column_stack([bell, np.ones(len(window))])
            _, sse, _, _ = np.linalg.lstsq(design, y, rcond=None)
            if sse[0] < best_sse:
                best, best_sse = center, sse[0]
        self.assertAlmostEqual(fit.center, best / FS, delta=0.1e-12)

    def test_estimate_serializes_to_json(self):
        x = np.arange(100, dtype=float)
        values = PeakFitter.gaussian_model((50.2, 2.0, 1.0, 0.0), x)
        fit = PeakFitter.fit_gaussian(CorrelationResult(values, FS), 50, 12)
        self.assertIs(type(fit.converged), bool)
        document = json.loads(json.dumps(dataclasses.asdict(fit)))
        self.assertTrue(document["converged"])
        self.assertAlmostEqual(document["center"], 50.2 / FS, delta=1e-16)

    def test_constant_window_is_degenerate(self):
        with self.assertRaises(FitDegenerateError):
            PeakFitter.fit_gaussian(CorrelationResult(np.ones(100), FS), 50, 12)

    def test_window_outside_correlation(self):
        with self.assertRaises(InvalidArgumentError):
            PeakFitter.fit_gaussian(CorrelationResult(np.arange(20.0), FS), 5, 12)


class TestLatencyReport(unittest.TestCase):
    """Test cases for latency bookkeeping"""

    def test_measured_triple_consistency(self):
        """94.2372, 21,733.1958 and 43,372.1563 ns: the triple is 1.9 ps late"""
        report = PeakFitter.latency_report(
            [estimate(94.2372e-9), estimate(21733.1958e-9), estimate(43372.1563e-9)]
        )
        self.assertAlmostEqual(report.predicted_triple_rtt, 43372.1544e-9, delta=1e-16)
        self.assertAlmostEqual(report.consistency_error * 1e12, 1.9, places=4)
        self.assertAlmostEqual(report.fiber_rtt, 21638.9586e-9, delta=1e-16)

    def test_two_peaks(self):
        report = PeakFitter.latency_report([estimate(1e-7), estimate(2e-7)])
        self.assertIsNone(report.triple_rtt)
        self.assertIsNone(report.consistency_error)
        self.assertAlmostEqual(report.fiber_rtt, 1e-7)

    def test_insufficient_peaks(self):
        with self.assertRaises(InsufficientPeaksError):
            PeakFitter.latency_report([estimate(1e-7)])

    def test_order_enforced(self):
        with self.assertRaises(InvalidArgumentError):
            LatencyReport(2e-7, 1e-7)


class TestLatencyPipeline(unittest.TestCase):
    """End-to-end tests against the simulated channel"""

    def setUp(self):
        """Set up test environment"""
        self.seq = SequenceGenerator.gen_prbs(7)
        self.burst = SequenceGenerator.build_burst(self.seq, BurstSpec(period=1e-6))
        self.quiet = CaptureSettings(noise_sigma=0.0, backscatter_level=0.0)
        self.config = PipelineConfig()

    def run_pipeline(self, model, settings=None):
        trace = FiberSimulator.simulate_trace(model, self.burst, settings or self.quiet)
        return LatencyPipeline.from_burst(self.burst, self.config).run(trace.waveform)

    def test_three_peaks_recovered(self):
        result = self.run_pipeline(short_fiber())
        self.assertEqual(len(result.peaks), 3)
        report = result.report
        self.assertAlmostEqual(report.input_rtt, 25e-9, delta=1e-12)
        self.assertAlmostEqual(report.end_rtt, 225e-9, delta=1e-12)
        self.assertAlmostEqual(report.triple_rtt, 425e-9, delta=1e-12)
        self.assertAlmostEqual(report.fiber_rtt, 200e-9, delta=0.2e-12)
        self.assertLess(abs(report.consistency_error), 0.2e-12)

    def test_sub_sample_delays(self):
        """Delays swept across one full sample period in 20 steps"""
        for step in range(20):
            lead_in = 25e-9 + step / (20 * FS)
            report = self.run_pipeline(short_fiber(lead_in=lead_in)).report
            self.assertAlmostEqual(report.input_rtt, lead_in, delta=0.5e-12)
            self.assertAlmostEqual(report.end_rtt, lead_in + 200e-9, delta=0.5e-12)

    def test_filter_keeps_peak_center(self):
        """A reflection on the sample grid: raw correlation apex and fitted filtered center agree"""
        events = (ReflectionEvent(0.0, 0.0398, "air-gap"),)
        trace = FiberSimulator.simulate_trace(short_fiber(events=events), self.burst, self.quiet)
        pipeline = LatencyPipeline.from_burst(self.burst, self.config)
        raw = CorrelationProcessor.cross_correlate(trace.waveform, pipeline.reference)
        apex = int(np.argmax(raw.values))
        self.assertAlmostEqual(raw.lag_axis[apex], 25e-9, delta=1e-15)
        filtered = pipeline.filtered_correlation(trace.waveform)
        fit = PeakFitter.fit_gaussian(filtered, int(np.argmax(filtered.values)), pipeline.window_halfwidth)
        self.assertAlmostEqual(fit.center, raw.lag_axis[apex], delta=0.1e-12)

    def test_default_geometry_consistency(self):
        """2.2 km fiber with the default burst, noiseless"""
        config = RunConfig.load(overrides={"capture": {"noise_sigma": 0.0}})
        burst = SequenceGenerator.build_burst(config.sequence(), config.burst_spec())
        trace = FiberSimulator.simulate_trace(config.fiber_model(), burst, config.capture_settings())
        report = LatencyPipeline.from_burst(burst, config.pipeline_config()).run(trace.waveform).report
        self.assertLess(abs(report.consistency_error), 0.2e-12)
        self.assertAlmostEqual(report.fiber_rtt, 21638.9586e-9, delta=0.5e-12)

    def test_open_end_gives_two_peaks(self):
        events = (ReflectionEvent(0.0, 0.0398, "air-gap"), ReflectionEvent(20.0, 0.035, "open"))
        config = PipelineConfig(max_peaks=2)
        trace = FiberSimulator.simulate_trace(short_fiber(events=events), self.burst, self.quiet)
        result = LatencyPipeline.from_burst(self.burst, config).run(trace.waveform)
        self.assertIsNone(result.report.triple_rtt)
        self.assertAlmostEqual(result.report.fiber_rtt, 200e-9, delta=1e-12)

    def test_single_reflection_has_no_report(self):
        events = (ReflectionEvent(0.0, 0.0398, "air-gap"),)
        trace = FiberSimulator.simulate_trace(short_fiber(events=events), self.burst, self.quiet)
        result = LatencyPipeline.from_burst(self.burst, PipelineConfig(threshold_rel=0.5)).run(trace.waveform)
        self.assertIsNone(result.report)
        self.assertEqual(len(result.peaks), 1)

    def test_subset_rms_noiseless(self):
        model = short_fiber()
        traces = list(FiberSimulator.simulate_traces(model, self.burst, self.quiet, [0.0] * 4))
        row = PeakFitter.subset_rms(traces, self.burst, 2, self.config)
        self.assertEqual(row.n_subsets, 2)
        self.assertEqual(row.n_excluded, 0)
        self.assertLess(row.rms_error, 0.1e-12)

    def test_subset_rms_needs_two_subsets(self):
        traces = list(FiberSimulator.simulate_traces(short_fiber(), self.burst, self.quiet, [0.0] * 3))
        with self.assertRaises(InvalidArgumentError):
            PeakFitter.subset_rms(traces, self.burst, 2, self.config)

    def test_subset_latencies_wall_clock(self):
        traces = list(
            FiberSimulator.simulate_traces(short_fiber(), self.burst, self.quiet, [0.0, 1.0, 2.0, 3.0])
        )
        results = PeakFitter.subset_latencies(traces, self.burst, 2, PipelineConfig(jobs=2))
        self.assertEqual([t for t, _ in results], [0.5, 2.5])


class TestNoiseCalibration(unittest.TestCase):
    """Test cases for noisy subset averages and the noise search"""

    def setUp(self):
        """Clean received waveform of the 20 m fiber"""
        self.burst = SequenceGenerator.build_burst(SequenceGenerator.gen_prbs(7), BurstSpec(period=1e-6))
        quiet = CaptureSettings(noise_sigma=0.0, backscatter_level=0.0)
        self.clean = FiberSimulator.simulate_trace(short_fiber(), self.burst, quiet).waveform
        self.pipeline = LatencyPipeline.from_burst(self.burst, PipelineConfig())

    def test_noiseless_rms(self):
        row = PeakFitter.averaged_noise_rms(self.clean, self.pipeline, 0.0, 4, 3)
        self.assertEqual(row.n_excluded, 0)
        self.assertLess(row.rms_error, 0.1e-12)

    def test_rms_halves_with_four_times_the_averages(self):
        small = PeakFitter.averaged_noise_rms(self.clean, self.pipeline, 0.05, 4, 100, seed=1)
        large = PeakFitter.averaged_noise_rms(self.clean, self.pipeline, 0.05, 16, 100, seed=2)
        self.assertEqual(small.n_excluded + large.n_excluded, 0)
        self.assertAlmostEqual(small.rms_error / large.rms_error, 2.0, delta=0.3 * 2.0)

    def test_search_lands_in_target(self):
        calibration = PeakFitter.calibrate_noise(
            self.clean, self.pipeline, subset_size=4, start_sigma=0.1, n_subsets=20, seed=3
        )
        self.assertTrue(calibration.within_target)
        self.assertGreater(calibration.noise_sigma, 0.0)
        self.assertEqual(calibration.history[-1][0], calibration.noise_sigma)
        self.assertLessEqual(len(calibration.history), 8)

    def test_target_must_be_ordered(self):
        with self.assertRaises(InvalidArgumentError):
            PeakFitter.calibrate_noise(self.clean, self.pipeline, target=(4e-12, 3e-12))


if __name__ == '__main__':
    unittest.main()
