"""
Trace averaging, PRBS cross-correlation and sidelobe deconvolution.
"""
import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from corrotdr.seqgen import SampledWaveform, SequenceGenerator
from utils.error_handling import ErrorHandler

logger = logging.getLogger(__name__)

DEFAULT_REGULARIZATION = 1e-3
# "autocorrelation": ±1 sequence against itself; "link": on/off transmitted bits against the ±1 reference
FILTER_RESPONSES = ("autocorrelation", "link")


@dataclass
class CorrelationResult:
    """Correlation value per lag; lag k corresponds to delay t0 + k / sample_rate"""

    values: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __len__(self):
        return len(self.values)

    @property
    def lag_axis(self):
        return self.t0 + np.arange(len(self.values)) / self.sample_rate


@dataclass(frozen=True)
class SidelobeFilter:
    """
    Bit-spaced deconvolution filter.

    taps[center] multiplies lag 0; neighbouring taps sit tap_spacing samples apart.
    """

    taps: tuple
    tap_spacing: int
    regularization: float
    condition_number: float = float("nan")
    response: str = "autocorrelation"

    @property
    def center(self):
        return len(self.taps) // 2

    def kernel(self):
        """Full-rate sparse kernel with zeros between the taps"""
        spacing = self.tap_spacing
        kernel = np.zeros((len(self.taps) - 1) * spacing + 1)
        kernel[::spacing] = self.taps
        return kernel


class CorrelationProcessor:
    """
    Average -> correlate -> deconvolve chain of the correlation OTDR.
    """

    @staticmethod
    def average_traces(traces):
        """
        Pointwise mean of a set of traces

        Args:
            traces (list): Trace objects of equal length, sample rate and wavelength

        Returns:
            SampledWaveform: Averaged waveform
        """
        traces = list(traces)
        ErrorHandler.validate_input(len(traces) > 0, "cannot average an empty trace list")
        first = traces[0].waveform
        total = np.zeros(len(first.samples), dtype=np.float64)
        for trace in traces:
            wf = trace.waveform
            ErrorHandler.validate_input(
                len(wf.samples) == len(first.samples), "traces have mismatched lengths"
            )
            ErrorHandler.validate_input(
                wf.sample_rate == first.sample_rate, "traces have mismatched sample rates"
            )
            ErrorHandler.validate_input(
                trace.wavelength == traces[0].wavelength, "traces have mismatched wavelengths"
            )
            total += wf.samples
        return SampledWaveform(total / len(traces), first.sample_rate, first.t0)

    @staticmethod
    def bipolar_reference(bits, samples_per_bit, sample_rate):
        """
        Zero-mean (±1) NRZ rendering of the transmitted sequence

        Args:
            bits (bitarray or BitSequence): Probe bits
            samples_per_bit (int): Samples per bit period
            sample_rate (float): Samples per second

        Returns:
            SampledWaveform: Reference of len(bits) * samples_per_bit samples
        """
        raw = getattr(bits, "bits", bits)
        levels = 2.0 * np.frombuffer(raw.unpack(), dtype=np.uint8).astype(np.float64) - 1.0
        return SampledWaveform(np.repeat(levels, samples_per_bit), sample_rate, 0.0)

    @staticmethod
    def cross_correlate(received, reference):
        """
        Same-size cross-correlation c[k] = sum_j received[j + k] * reference[j]

        Args:
            received (SampledWaveform): Averaged receiver waveform
            reference (SampledWaveform): Zero-mean burst segment

        Returns:
            CorrelationResult: One value per lag of the received waveform
        """
        rec = np.asarray(received.samples, dtype=np.float64)
        ref = np.asarray(reference.samples, dtype=np.float64)
        ErrorHandler.validate_input(
            len(ref) <= len(rec), "reference is longer than the received waveform"
        )
        full = signal.oaconvolve(rec, ref[::-1], mode="full")
        values = full[len(ref) - 1 : len(ref) - 1 + len(rec)]
        return CorrelationResult(values, received.sample_rate, received.t0)

    @staticmethod
    def cross_correlate_direct(received, reference):
        """Direct O(N·M) summation of cross_correlate, used as an oracle"""
        rec = np.asarray(received.samples, dtype=np.float64)
        ref = np.asarray(reference.samples, dtype=np.float64)
        ErrorHandler.validate_input(
            len(ref) <= len(rec), "reference is longer than the received waveform"
        )
        values = np.zeros(len(rec))
        for k in range(len(rec)):
            span = min(len(ref), len(rec) - k)
            values[k] = np.dot(rec[k : k + span], ref[:span])
        return CorrelationResult(values, received.sample_rate, received.t0)

    @staticmethod
    def aperiodic_autocorrelation(seq):
        """Autocorrelation of the ±1 sequence at bit lags -(n-1)..(n-1)"""
        bipolar = SequenceGenerator.to_bipolar(seq)
        return np.correlate(bipolar, bipolar, mode="full")

    @staticmethod
    def link_response(seq):
        """
        Correlation of the transmitted on/off bits with the ±1 reference, bit lags -(n-1)..(n-1)

        This is what a single reflection produces after cross_correlate (up to
        a constant from the extinction-ratio floor). Unlike the ±1
        autocorrelation it has no spectral null at DC.
        """
        bipolar = SequenceGenerator.to_bipolar(seq)
        return np.correlate((bipolar + 1.0) / 2.0, bipolar, mode="full")

    @staticmethod
    def filter_response(seq, response="autocorrelation"):
        ErrorHandler.validate_input(
            response in FILTER_RESPONSES, f"filter response must be one of {FILTER_RESPONSES}"
        )
        if response == "link":
            return CorrelationProcessor.link_response(seq)
        return CorrelationProcessor.aperiodic_autocorrelation(seq)

    @staticmethod
    def design_from_autocorrelation(acf, regularization=DEFAULT_REGULARIZATION, n_taps=None):
        """
        Regularized least-squares inverse of a correlation response

        Minimizes ||A g - delta||^2 + reg ||g||^2 with A the convolution
        operator of acf normalized to a unit center. Only the output lags
        within ±(len(acf) + 1) / 2 of the center enter the fit; further lags
        are left free.

        Args:
            acf (numpy.ndarray): Response, odd length, peak in the middle (need not be symmetric)
            regularization (float): Tikhonov weight relative to the center
            n_taps (int): Odd tap count; len(acf) + 2 if None

        Returns:
            tuple: (taps, condition_number)
        """
        acf = np.asarray(acf, dtype=np.float64)
        ErrorHandler.validate_input(len(acf) % 2 == 1, "autocorrelation length must be odd")
        ErrorHandler.validate_input(regularization >= 0, "regularization must be >= 0")
        if n_taps is None:
            n_taps = len(acf) + 2
        peak = acf[len(acf) // 2]
        ErrorHandler.validate_input(peak > 0, "autocorrelation center must be positive")

        full = linalg.convolution_matrix(acf / peak, n_taps, mode="full")
        middle = (full.shape[0] - 1) // 2
        half = min((len(acf) + 1) // 2, middle)
        system = full[middle - half : middle + half + 1]
        target = np.zeros(system.shape[0])
        target[half] = 1.0
        if regularization > 0:
            system = np.vstack([system, np.sqrt(regularization) * np.eye(n_taps)])
            target = np.concatenate([target, np.zeros(n_taps)])
        taps, _, rank, singular = linalg.lstsq(system, target)
        condition = float(singular[0] / singular[-1]) if singular[-1] > 0 else float("inf")
        if rank < n_taps or condition > 1e12:
            logger.warning(
                "sidelobe filter system is ill-conditioned (rank %d of %d, cond %.3g)",
                rank,
                n_taps,
                condition,
            )
        return taps / peak, condition

    @staticmethod
    def design_sidelobe_filter(seq, regularization=DEFAULT_REGULARIZATION, samples_per_bit=4,
                               response="autocorrelation"):
        """
        Pre-calculate the bit-spaced filter that removes the burst's pre- and post-cursors

        Designs are cached per (sequence, regularization, samples_per_bit, response).

        Args:
            seq (BitSequence): Probe sequence
            regularization (float): Tikhonov weight relative to the response peak
            samples_per_bit (int): Tap spacing in samples
            response (str): "autocorrelation" inverts the ±1 autocorrelation; "link"
                inverts the on/off burst against the ±1 reference, as received

        Returns:
            SidelobeFilter: 2 * len(seq) + 1 taps
        """
        ErrorHandler.validate_input(
            response in FILTER_RESPONSES, f"filter response must be one of {FILTER_RESPONSES}"
        )
        return _cached_design(seq, float(regularization), int(samples_per_bit), response)

    @staticmethod
    def sidelobe_metrics(filt, seq, response=None):
        """
        Quality of a filter applied to the response it was designed for

        Args:
            filt (SidelobeFilter): Filter to assess
            seq (BitSequence): Sequence it was designed for
            response (str): Response to apply it to; the filter's own if None

        Returns:
            tuple: (center_gain, peak_sidelobe_db) where the sidelobe level is
            measured over lags within ±len(seq) of the center
        """
        acf = CorrelationProcessor.filter_response(seq, response or filt.response)
        out = np.convolve(acf, np.asarray(filt.taps))
        center = (len(out) - 1) // 2
        window = out[center - len(seq) : center + len(seq) + 1].copy()
        center_gain = float(window[len(seq)])
        window[len(seq)] = 0.0
        worst = float(np.max(np.abs(window)))
        psl_db = 20.0 * np.log10(worst / abs(center_gain)) if worst > 0 else -np.inf
        return center_gain, psl_db

    @staticmethod
    def apply_filter(corr, filt, bit_rate):
        """
        Convolve the correlation with the bit-spaced taps, lag axis preserved

        Args:
            corr (CorrelationResult): Correlation at full sample rate
            filt (SidelobeFilter): Pre-calculated filter
            bit_rate (float): Bit rate of the burst

        Returns:
            CorrelationResult: Filtered correlation of the same length
        """
        spacing = corr.sample_rate / bit_rate
        ErrorHandler.validate_input(
            abs(spacing - filt.tap_spacing) < 1e-9,
            f"filter tap spacing {filt.tap_spacing} does not match {spacing:g} samples per bit",
        )
        # the kernel has odd length and its center is lag 0, so "same" keeps peak positions
        values = signal.oaconvolve(np.asarray(corr.values, dtype=np.float64), filt.kernel(), mode="same")
        return CorrelationResult(values, corr.sample_rate, corr.t0)


@functools.lru_cache(maxsize=32)
def _cached_design(seq, regularization, samples_per_bit, response):
    acf = CorrelationProcessor.filter_response(seq, response)
    taps, condition = CorrelationProcessor.design_from_autocorrelation(
        acf, regularization, n_taps=2 * len(seq) + 1
    )
    filt = SidelobeFilter(tuple(taps), samples_per_bit, regularization, condition, response)
    center_gain, psl_db = CorrelationProcessor.sidelobe_metrics(filt, seq)
    logger.info(
        "%s sidelobe filter: %d taps, reg %.3g, center gain %.4f, peak sidelobe %.1f dB, cond %.3g",
        response,
        len(taps),
        regularization,
        center_gain,
        psl_db,
        condition,
    )
    return filt
