"""
Reflection peak detection, 4-parameter Gaussian fitting and latency reports.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from bitarray import frozenbitarray
from scipy import optimize, signal

from corrotdr.corrproc import DEFAULT_REGULARIZATION, CorrelationProcessor
from corrotdr.seqgen import BitSequence, SampledWaveform, SequenceGenerator
from utils.error_handling import (
    ErrorHandler,
    FitDegenerateError,
    InsufficientPeaksError,
    InvalidArgumentError,
)

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass
class PeakEstimate:
    center: float
    width: float
    amplitude: float
    offset: float
    residual_rms: float
    converged: bool
    iterations: int


@dataclass
class LatencyReport:
    input_rtt: float
    end_rtt: float
    triple_rtt: Optional[float] = None

    def __post_init__(self):
        ErrorHandler.validate_input(
            self.end_rtt > self.input_rtt, "end reflection must come after the input reflection"
        )
        ErrorHandler.validate_input(
            self.triple_rtt is None or self.triple_rtt > self.end_rtt,
            "triple reflection must come after the end reflection",
        )

    @property
    def fiber_rtt(self):
        return self.end_rtt - self.input_rtt

    @property
    def predicted_triple_rtt(self):
        return 2.0 * self.end_rtt - self.input_rtt

    @property
    def consistency_error(self):
        if self.triple_rtt is None:
            return None
        return self.triple_rtt - self.predicted_triple_rtt

    def as_dict(self):
        return {
            "input_rtt_s": self.input_rtt,
            "end_rtt_s": self.end_rtt,
            "triple_rtt_s": self.triple_rtt,
            "fiber_rtt_s": self.fiber_rtt,
            "consistency_error_s": self.consistency_error,
        }


@dataclass
class SubsetRmsRow:
    subset_size: int
    n_subsets: int
    rms_error: float
    n_excluded: int = 0


@dataclass
class NoiseCalibration:
    noise_sigma: float
    row: SubsetRmsRow
    target: tuple
    history: List[tuple] = field(default_factory=list)  # (noise_sigma, rms_error) per round

    @property
    def within_target(self):
        lo, hi = self.target
        return lo <= self.row.rms_error <= hi


@dataclass(frozen=True)
class PipelineConfig:
    bit_rate: float = 10e9
    prbs_order: int = 7
    threshold_rel: float = 0.01
    min_separation: float = 30e-9
    max_peaks: int = 3
    window_halfwidth: Optional[int] = None
    regularization: float = DEFAULT_REGULARIZATION
    filter_response: str = "link"
    jobs: int = 1


@dataclass
class PipelineResult:
    report: Optional[LatencyReport]
    peaks: List[PeakEstimate]
    indices: List[int]
    filtered: object = field(repr=False, default=None)
    excluded: int = 0


class PeakFitter:
    """
    Peak detection, Gaussian fit and latency bookkeeping.
    """

    @staticmethod
    def detect_peaks(corr, threshold_rel=0.01, min_separation=30e-9, max_peaks=3):
        """
        Find the dominant reflection peaks

        Heights are measured above the median baseline of the correlation.

        Args:
            corr (CorrelationResult): Filtered correlation
            threshold_rel (float): Fraction of the highest peak a peak must reach
            min_separation (float): Minimum spacing between accepted peaks, seconds
            max_peaks (int): Maximum number of peaks returned

        Returns:
            list: (index, value) tuples sorted by lag
        """
        ErrorHandler.validate_input(0 < threshold_rel < 1, "threshold_rel must be in (0, 1)")
        values = np.asarray(corr.values, dtype=np.float64)
        if len(values) == 0:
            return []
        baseline = float(np.median(values))
        top = float(values.max()) - baseline
        if top <= 0:
            return []
        distance = max(1, int(round(min_separation * corr.sample_rate)))
        indices, _ = signal.find_peaks(
            values, height=baseline + threshold_rel * top, distance=distance
        )
        if len(indices) == 0:
            return []
        strongest = indices[np.argsort(values[indices])[::-1][:max_peaks]]
        return [(int(i), float(values[i])) for i in sorted(strongest)]

    @staticmethod
    def gaussian_model(params, x):
        """offset + amplitude * exp(-(x - center)^2 / (2 width^2)); params = (center, width, amplitude, offset)"""
        center, width, amplitude, offset = params
        return offset + amplitude * np.exp(-((x - center) ** 2) / (2.0 * width**2))

    @staticmethod
    def gaussian_jacobian(params, x):
        """Analytic Jacobian of gaussian_model, columns ordered (center, width, amplitude, offset)"""
        center, width, amplitude, offset = params
        dx = x - center
        bell = np.exp(-(dx**2) / (2.0 * width**2))
        jac = np.empty((len(x), 4))
        jac[:, 0] = amplitude * bell * dx / width**2
        jac[:, 1] = amplitude * bell * dx**2 / width**3
        jac[:, 2] = bell
        jac[:, 3] = 1.0
        return jac

    @staticmethod
    def initial_guess(x, y, apex):
        """Apex position, apex minus median, median, and width from the half-maximum crossings"""
        offset = float(np.median(y))
        amplitude = float(y[apex] - offset)
        half = offset + 0.5 * amplitude

        def crossing(step):
            k = apex
            while 0 <= k + step < len(y) and y[k + step] > half:
                k += step
            if not 0 <= k + step < len(y):
                return x[k]
            # linear interpolation between k and k + step
            y0, y1 = y[k], y[k + step]
            frac = (y0 - half) / (y0 - y1) if y0 != y1 else 0.0
            return x[k] + frac * (x[k + step] - x[k])

        fwhm = crossing(1) - crossing(-1)
        width = fwhm / FWHM_PER_SIGMA if fwhm > 0 else 1.0
        return np.array([x[apex], width, amplitude, offset])

    @staticmethod
    def fit_gaussian(corr, peak_index, window_halfwidth=12):
        """
        Fit a 4-parameter Gaussian to one correlation peak

        The fit runs in sample units relative to the apex and is converted to
        seconds at the end.

        Args:
            corr (CorrelationResult): Filtered correlation
            peak_index (int): Apex index from detect_peaks
            window_halfwidth (int): Samples either side of the apex

        Returns:
            PeakEstimate: Fitted parameters with convergence diagnostics

        Raises:
            InvalidArgumentError: Window leaves the correlation
            FitDegenerateError: Window values are constant
        """
        lo, hi = peak_index - window_halfwidth, peak_index + window_halfwidth + 1
        ErrorHandler.validate_input(
            window_halfwidth >= 2 and lo >= 0 and hi <= len(corr.values),
            f"fit window [{lo}, {hi}) does not fit inside the correlation",
        )
        y = np.asarray(corr.values[lo:hi], dtype=np.float64)
        if np.ptp(y) == 0:
            raise FitDegenerateError(f"constant values in the fit window at index {peak_index}")
        x = np.arange(-window_halfwidth, window_halfwidth + 1, dtype=np.float64)
        apex = int(np.argmax(y))
        guess = PeakFitter.initial_guess(x, y, apex)

        result = optimize.least_squares(
            lambda p: PeakFitter.gaussian_model(p, x) - y,
            guess,
            jac=lambda p: PeakFitter.gaussian_jacobian(p, x),
            method="lm",
            xtol=STEP_TOLERANCE,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=MAX_ITERATIONS,
        )
        center, width, amplitude, offset = result.x
        converged = bool(result.status > 0 and amplitude > 0)
        if not converged:
            logger.warning("Gaussian fit at index %d did not converge (%s)", peak_index, result.message)
        residual_rms = float(np.sqrt(np.mean(result.fun**2)))
        return PeakEstimate(
            center=corr.t0 + (peak_index + center) / corr.sample_rate,
            width=abs(width) / corr.sample_rate,
            amplitude=float(amplitude),
            offset=float(offset),
            residual_rms=residual_rms,
            converged=converged,
            iterations=int(result.nfev),
        )

    @staticmethod
    def latency_report(peaks):
        """
        Assign input, end and (optionally) triple reflections by time order

        Args:
            peaks (list): PeakEstimate objects with ascending centers

        Returns:
            LatencyReport: Latencies and triple-reflection consistency

        Raises:
            InsufficientPeaksError: Fewer than two peaks
        """
        peaks = list(peaks)
        if len(peaks) < 2:
            raise InsufficientPeaksError(f"need at least 2 reflection peaks, found {len(peaks)}")
        centers = [p.center for p in peaks]
        ErrorHandler.validate_input(
            all(b > a for a, b in zip(centers, centers[1:])), "peak centers must be ascending"
        )
        triple = centers[2] if len(centers) >= 3 else None
        return LatencyReport(centers[0], centers[1], triple)

    @staticmethod
    def subset_latencies(traces, reference, subset_size, config):
        """
        Evaluate consecutive disjoint subsets of traces separately

        Args:
            traces (list): Trace objects
            reference (SampledWaveform): Transmitted burst
            subset_size (int): Traces per subset
            config (PipelineConfig): Pipeline parameters

        Returns:
            list: (mean wall clock, PipelineResult) per subset
        """
        traces = list(traces)
        ErrorHandler.validate_input(subset_size >= 1, "subset size must be >= 1")
        n_subsets = len(traces) // subset_size
        pipeline = LatencyPipeline.from_burst(reference, config)

        def one(i):
            chunk = traces[i * subset_size : (i + 1) * subset_size]
            averaged = CorrelationProcessor.average_traces(chunk)
            wall_clock = float(np.mean([t.wall_clock for t in chunk]))
            return wall_clock, pipeline.run(averaged)

        with ThreadPoolExecutor(max_workers=max(1, config.jobs)) as pool:
            return list(pool.map(one, range(n_subsets)))

    @staticmethod
    def subset_rms(traces, reference, subset_size, config):
        """
        RMS of the triple-reflection consistency error over trace subsets

        Args:
            traces (list): Trace objects
            reference (SampledWaveform): Transmitted burst
            subset_size (int): Traces per subset
            config (PipelineConfig): Pipeline parameters

        Returns:
            SubsetRmsRow: Subset size, subset count and RMS error in seconds
        """
        traces = list(traces)
        n_subsets = len(traces) // max(1, subset_size)
        ErrorHandler.validate_input(
            n_subsets >= 2,
            f"subset size {subset_size} leaves {n_subsets} subsets of {len(traces)} traces, need 2",
        )
        errors = []
        excluded = 0
        for _, result in PeakFitter.subset_latencies(traces, reference, subset_size, config):
            if result.report is None or result.report.consistency_error is None:
                excluded += 1
                continue
            errors.append(result.report.consistency_error)
        if excluded:
            logger.warning("%d of %d subsets excluded from the RMS (subset size %d)",
                           excluded, n_subsets, subset_size)
        rms = float(np.sqrt(np.mean(np.square(errors)))) if errors else float("nan")
        return SubsetRmsRow(subset_size, n_subsets, rms, excluded)

    @staticmethod
    def averaged_noise_rms(clean, pipeline, noise_sigma, subset_size, n_subsets, seed=0):
        """
        Consistency RMS of noisy subset averages without simulating every trace

        The receiver noise is white and Gaussian, so the mean of `subset_size`
        traces equals the clean waveform plus noise of std noise_sigma / sqrt(subset_size).

        Args:
            clean (SampledWaveform): Noise-free received waveform
            pipeline (LatencyPipeline): Pipeline for the burst of `clean`
            noise_sigma (float): Per-trace receiver noise
            subset_size (int): Traces per subset
            n_subsets (int): Number of subsets
            seed (int): Noise seed, reused across calls for comparable results

        Returns:
            SubsetRmsRow: RMS of the triple-reflection consistency error
        """
        ErrorHandler.validate_input(noise_sigma >= 0, "noise sigma must be >= 0")
        ErrorHandler.validate_input(subset_size >= 1 and n_subsets >= 2, "need 2 or more subsets")
        rng = np.random.default_rng(seed)
        sigma = noise_sigma / math.sqrt(subset_size)
        errors, excluded = [], 0
        for _ in range(n_subsets):
            samples = clean.samples + rng.normal(0.0, sigma, len(clean.samples))
            result = pipeline.run(SampledWaveform(samples, clean.sample_rate, clean.t0))
            if result.report is None or result.report.consistency_error is None:
                excluded += 1
                continue
            errors.append(result.report.consistency_error)
        rms = float(np.sqrt(np.mean(np.square(errors)))) if errors else float("nan")
        return SubsetRmsRow(subset_size, n_subsets, rms, excluded)

    @staticmethod
    def calibrate_noise(clean, pipeline, subset_size=100, target=(3e-12, 4e-12), start_sigma=0.1,
                        n_subsets=40, seed=0, max_rounds=8):
        """
        Find the receiver noise whose subset consistency RMS falls in `target`

        The RMS grows linearly with the noise while every peak is still found,
        so each round rescales the noise towards the middle of the target.

        Args:
            clean (SampledWaveform): Noise-free received waveform
            pipeline (LatencyPipeline): Pipeline for the burst of `clean`
            subset_size (int): Traces per subset, 100 for the reference point
            target (tuple): (low, high) RMS bounds in seconds
            start_sigma (float): First noise level tried
            n_subsets (int): Subsets per round
            seed (int): Noise seed shared by all rounds
            max_rounds (int): Give up after this many rounds

        Returns:
            NoiseCalibration: Last noise level tried, its RMS row and the history
        """
        lo, hi = target
        ErrorHandler.validate_input(0 < lo < hi, "target must be (low, high) with 0 < low < high")
        ErrorHandler.validate_input(start_sigma > 0, "start sigma must be positive")
        ErrorHandler.validate_input(max_rounds >= 1, "max_rounds must be >= 1")
        middle = 0.5 * (lo + hi)
        sigma = start_sigma
        history = []
        for _ in range(max_rounds):
            row = PeakFitter.averaged_noise_rms(clean, pipeline, sigma, subset_size, n_subsets, seed)
            history.append((sigma, row.rms_error))
            logger.info("noise sigma %.4g: rms %.3f ps, %d excluded", sigma, row.rms_error * 1e12, row.n_excluded)
            if not math.isfinite(row.rms_error) or 2 * row.n_excluded > n_subsets:
                # peaks lost in the noise
                sigma /= 4.0
                continue
            if lo <= row.rms_error <= hi:
                break
            sigma *= middle / max(row.rms_error, lo * 1e-3)
        return NoiseCalibration(history[-1][0], row, (lo, hi), history)


class LatencyPipeline:
    """
    correlate -> filter -> detect -> fit -> report for one averaged waveform.
    """

    def __init__(self, bits, samples_per_bit, sample_rate, config):
        self.config = config
        self.samples_per_bit = samples_per_bit
        self.sequence = BitSequence(bits, config.prbs_order, 0)
        self.reference = CorrelationProcessor.bipolar_reference(bits, samples_per_bit, sample_rate)
        self.filter = CorrelationProcessor.design_sidelobe_filter(
            self.sequence, config.regularization, samples_per_bit, config.filter_response
        )
        self.window_halfwidth = config.window_halfwidth or 3 * samples_per_bit

    @classmethod
    def from_burst(cls, burst, config):
        """
        Build the pipeline from the transmitted burst

        Args:
            burst (SampledWaveform): Transmitted burst, PRBS bits at its start
            config (PipelineConfig): Pipeline parameters

        Returns:
            LatencyPipeline: Pipeline with the decoded reference and cached filter
        """
        ratio = burst.sample_rate / config.bit_rate
        ErrorHandler.validate_input(
            abs(ratio - round(ratio)) < 1e-9, "sample rate is not a multiple of the bit rate"
        )
        spb = int(round(ratio))
        n_bits = (1 << config.prbs_order) - 1
        bits = frozenbitarray(SequenceGenerator.decode_burst(burst, n_bits, spb))
        return cls(bits, spb, burst.sample_rate, config)

    def filtered_correlation(self, averaged):
        corr = CorrelationProcessor.cross_correlate(averaged, self.reference)
        return CorrelationProcessor.apply_filter(corr, self.filter, self.config.bit_rate)

    def run(self, averaged):
        """
        Analyze one averaged waveform

        Args:
            averaged (SampledWaveform): Averaged receiver waveform

        Returns:
            PipelineResult: Report (None when fewer than two usable peaks), peaks and filtered correlation
        """
        filtered = self.filtered_correlation(averaged)
        found = PeakFitter.detect_peaks(
            filtered, self.config.threshold_rel, self.config.min_separation, self.config.max_peaks
        )
        peaks, indices, excluded = [], [], 0
        for index, _ in found:
            try:
                estimate = PeakFitter.fit_gaussian(filtered, index, self.window_halfwidth)
            except (FitDegenerateError, InvalidArgumentError) as e:
                logger.warning("peak at index %d skipped: %s", index, e)
                excluded += 1
                continue
            if not estimate.converged:
                excluded += 1
                continue
            peaks.append(estimate)
            indices.append(index)
        try:
            report = PeakFitter.latency_report(peaks)
        except (InsufficientPeaksError, InvalidArgumentError) as e:
            logger.warning("no latency report: %s", e)
            report = None
        return PipelineResult(report, peaks, indices, filtered, excluded)
