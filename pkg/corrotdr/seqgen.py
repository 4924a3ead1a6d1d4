"""
PRBS generation and NRZ burst rendering.

The LFSR is a Fibonacci register: the feedback bit is the XOR of the register
bits selected by the tap mask, shifted in at the LSB. Bit k of the mask
(counting from 1) stands for the term x^k of the feedback polynomial.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from bitarray import bitarray, frozenbitarray

from utils.error_handling import ErrorHandler, InvalidArgumentError, InvalidPolynomialError

logger = logging.getLogger(__name__)

# Primitive feedback polynomials, given as their exponents (constant term implied)
PRIMITIVE_TAPS = {
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 11, 10, 4),
    13: (13, 12, 11, 8),
    14: (14, 13, 12, 2),
    15: (15, 14),
    16: (16, 15, 13, 4),
    17: (17, 14),
    18: (18, 11),
    19: (19, 18, 17, 14),
    20: (20, 17),
    21: (21, 19),
    22: (22, 21),
    23: (23, 18),
    24: (24, 23, 22, 17),
    25: (25, 22),
    26: (26, 6, 2, 1),
    27: (27, 5, 2, 1),
    28: (28, 25),
    29: (29, 27),
    30: (30, 6, 4, 1),
    31: (31, 28),
}

MIN_ORDER = 3
MAX_ORDER = 31


def taps_to_mask(taps):
    """Tap exponents -> integer mask (bit k-1 set for x^k)"""
    mask = 0
    for tap in taps:
        mask |= 1 << (tap - 1)
    return mask


def default_polynomial(order):
    """Mask of the tabulated primitive polynomial for `order` (x^7+x^6+1 for PRBS-7)"""
    if order not in PRIMITIVE_TAPS:
        raise InvalidArgumentError(f"no tabulated polynomial for PRBS order {order}")
    return taps_to_mask(PRIMITIVE_TAPS[order])


@dataclass(frozen=True)
class BitSequence:
    """One full period of a maximal-length LFSR sequence"""

    bits: frozenbitarray
    order: int
    generator_polynomial: int

    def __len__(self):
        return len(self.bits)

    def popcount(self):
        return self.bits.count(1)

    def to_numpy(self):
        return np.frombuffer(self.bits.unpack(), dtype=np.uint8).astype(np.int8)


@dataclass(frozen=True)
class BurstSpec:
    """Timing and levels of the transmitted burst"""

    bit_rate: float = 10e9
    period: float = 50e-6
    sample_rate: float = 40e9
    extinction_ratio: float = 13.0
    peak_level: float = 1.0

    @property
    def samples_per_bit(self):
        return int(round(self.sample_rate / self.bit_rate))

    @property
    def n_samples(self):
        return int(round(self.period * self.sample_rate))

    @property
    def zero_level(self):
        if math.isinf(self.extinction_ratio):
            return 0.0
        return self.peak_level * 10.0 ** (-self.extinction_ratio / 10.0)


@dataclass
class SampledWaveform:
    """Uniformly sampled waveform; sample k sits at t0 + k / sample_rate"""

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __len__(self):
        return len(self.samples)

    def time_axis(self):
        return self.t0 + np.arange(len(self.samples)) / self.sample_rate


class SequenceGenerator:
    """
    PRBS generation and rendering of the transmitted burst.
    """

    @staticmethod
    def gen_prbs(order=7, polynomial=None, seed=None):
        """
        Generate one full period of a maximal-length LFSR sequence

        Args:
            order (int): PRBS order, 3..31
            polynomial (int): Feedback tap mask; tabulated primitive polynomial if None
            seed (int): Nonzero initial register state; all ones if None

        Returns:
            BitSequence: 2^order - 1 bits starting from the seed state

        Raises:
            InvalidArgumentError: Order out of range or zero seed
            InvalidPolynomialError: The register state repeats before 2^order - 1 steps
        """
        ErrorHandler.validate_input(
            isinstance(order, int) and MIN_ORDER <= order <= MAX_ORDER,
            f"PRBS order must be an integer in [{MIN_ORDER}, {MAX_ORDER}], got {order!r}",
        )
        state_mask = (1 << order) - 1
        if polynomial is None:
            polynomial = default_polynomial(order)
        if seed is None:
            seed = state_mask
        ErrorHandler.validate_input(seed & state_mask != 0, "LFSR seed must be nonzero")
        ErrorHandler.validate_input(
            polynomial & state_mask == polynomial and polynomial >> (order - 1) & 1,
            f"polynomial mask {polynomial:#x} must have its x^{order} term and no higher terms",
            InvalidPolynomialError,
        )

        length = state_mask
        bits = bitarray(length)
        state = seed & state_mask
        start = state
        for i in range(length):
            bits[i] = state >> (order - 1) & 1
            feedback = bin(state & polynomial).count("1") & 1
            state = ((state << 1) | feedback) & state_mask
            if state == start and i < length - 1:
                raise InvalidPolynomialError(
                    f"polynomial mask {polynomial:#x} repeats after {i + 1} steps, "
                    f"expected {length}"
                )
        if state != start:
            raise InvalidPolynomialError(f"polynomial mask {polynomial:#x} is not maximal")

        logger.debug("generated PRBS-%d (mask %#x, seed %#x)", order, polynomial, seed)
        return BitSequence(frozenbitarray(bits), order, polynomial)

    @staticmethod
    def build_burst(seq, spec):
        """
        Render the sequence as an NRZ intensity burst followed by the zero floor

        Args:
            seq (BitSequence): Bits to transmit
            spec (BurstSpec): Bit rate, period, sample rate and levels

        Returns:
            SampledWaveform: One burst period, round(period * sample_rate) samples
        """
        ratio = spec.sample_rate / spec.bit_rate
        ErrorHandler.validate_input(
            abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1,
            f"sample rate {spec.sample_rate:g} is not an integer multiple of bit rate {spec.bit_rate:g}",
        )
        ErrorHandler.validate_input(
            spec.period * spec.bit_rate >= len(seq) - 1e-9,
            f"period {spec.period:g} s is too short for {len(seq)} bits at {spec.bit_rate:g} bit/s",
        )
        ErrorHandler.validate_input(spec.peak_level > 0, "peak level must be positive")
        ErrorHandler.validate_input(
            spec.extinction_ratio > 0, "extinction ratio must be positive (dB)"
        )

        spb = spec.samples_per_bit
        floor = spec.zero_level
        samples = np.full(spec.n_samples, floor, dtype=np.float64)
        levels = np.where(seq.to_numpy() == 1, spec.peak_level, floor)
        samples[: len(seq) * spb] = np.repeat(levels, spb)
        return SampledWaveform(samples, spec.sample_rate, 0.0)

    @staticmethod
    def decode_burst(waveform, n_bits, samples_per_bit):
        """
        Recover the transmitted bits by thresholding at the mid level

        Args:
            waveform (SampledWaveform): Burst as produced by build_burst
            n_bits (int): Number of sequence bits at the start of the burst
            samples_per_bit (int): Samples per bit period

        Returns:
            bitarray: Decoded bits
        """
        span = n_bits * samples_per_bit
        ErrorHandler.validate_input(
            len(waveform.samples) >= span, "waveform shorter than the sequence it should carry"
        )
        # sample in the middle of every bit slot
        centers = np.asarray(waveform.samples[samples_per_bit // 2 : span : samples_per_bit])
        threshold = 0.5 * (centers.max() + centers.min())
        bits = bitarray()
        bits.pack((centers > threshold).astype(np.uint8).tobytes())
        return bits

    @staticmethod
    def to_bipolar(seq):
        """Map bits {0, 1} -> {-1, +1}"""
        return 2.0 * seq.to_numpy().astype(np.float64) - 1.0
