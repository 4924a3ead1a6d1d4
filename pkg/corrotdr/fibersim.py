"""
Reflective fiber channel simulation.

All delays are round-trip times in seconds. Optical paths superpose in
intensity; the receiver is direct detection.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from corrotdr.seqgen import SampledWaveform
from utils.error_handling import ErrorHandler

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
MIN_WAVELENGTH_NM = 1260.0
MAX_WAVELENGTH_NM = 1650.0
AIR_GAP_REFLECTIVITY = 10.0 ** (-14.0 / 10.0)


@dataclass(frozen=True)
class ReflectionEvent:
    position: float
    reflectivity: float
    label: str = ""


@dataclass(frozen=True)
class DispersionParams:
    """Linear dispersion D(λ) = d0 + s0·(λ − λ0) in ps/(nm·km)"""

    d0: float = 16.5
    s0: float = 0.058
    lambda0: float = 1550.0

    def dispersion(self, wavelength):
        return self.d0 + self.s0 * (np.asarray(wavelength, dtype=float) - self.lambda0)

    def relative_delay_ps_per_km(self, wavelength):
        """One-way group delay relative to λ0, ps/km (integral of D)"""
        dl = np.asarray(wavelength, dtype=float) - self.lambda0
        return self.d0 * dl + 0.5 * self.s0 * dl**2


@dataclass(frozen=True)
class TemperatureProfile:
    """
    Fiber temperature over wall-clock time.

    Either a constant drift rate (degC/hour) from t_ref at wall clock 0, or a
    piecewise-linear list of (wall_clock seconds, degC) points.
    """

    t_ref: float = 20.0
    drift_rate: float = 0.0
    coeff: float = 7e-6
    points: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        times = [p[0] for p in self.points]
        ErrorHandler.validate_input(
            all(b > a for a, b in zip(times, times[1:])),
            "temperature points must have strictly ascending wall clocks",
        )

    def temperature_at(self, wall_clock):
        if self.points:
            times, temps = zip(*self.points)
            return float(np.interp(wall_clock, times, temps))
        return self.t_ref + self.drift_rate * wall_clock / 3600.0

    def delay_scale(self, wall_clock):
        return 1.0 + self.coeff * (self.temperature_at(wall_clock) - self.t_ref)


@dataclass(frozen=True)
class FiberModel:
    length: float
    group_index: float
    attenuation: float = 0.2
    lead_in_delay: float = 94.2372e-9
    events: Tuple[ReflectionEvent, ...] = ()
    dispersion: DispersionParams = field(default_factory=DispersionParams)
    temperature: TemperatureProfile = field(default_factory=TemperatureProfile)
    max_bounce_order: int = 3
    backscatter_seed: int = 0

    def __post_init__(self):
        ErrorHandler.validate_input(self.length > 0, "fiber length must be positive")
        ErrorHandler.validate_input(
            1.0 < self.group_index < 2.0, f"group index {self.group_index} outside (1, 2)"
        )
        ErrorHandler.validate_input(self.max_bounce_order >= 1, "max_bounce_order must be >= 1")
        ErrorHandler.validate_input(self.temperature.coeff > 0, "temperature coefficient must be > 0")
        ErrorHandler.validate_input(self.lead_in_delay >= 0, "lead-in delay must be >= 0")
        previous = -np.inf
        for event in self.events:
            ErrorHandler.validate_input(
                0.0 < event.reflectivity <= 1.0,
                f"reflectivity of {event.label or event.position} must be in (0, 1]",
            )
            ErrorHandler.validate_input(
                0.0 <= event.position <= self.length,
                f"event position {event.position} m outside the fiber",
            )
            ErrorHandler.validate_input(
                event.position > previous, "event positions must be strictly increasing"
            )
            previous = event.position

    @property
    def base_rtt(self):
        """Fiber round-trip time at λ0 and t_ref, excluding the lead-in"""
        return 2.0 * self.length * self.group_index / SPEED_OF_LIGHT

    @classmethod
    def from_round_trip(cls, length, fiber_rtt, **kwargs):
        """
        Build a model whose fiber round trip (at λ0, t_ref) equals `fiber_rtt`

        Args:
            length (float): Fiber length in meters
            fiber_rtt (float): End-reflection RTT minus input-reflection RTT, seconds
            **kwargs: Remaining FiberModel fields

        Returns:
            FiberModel: Model with the matching group index
        """
        group_index = fiber_rtt * SPEED_OF_LIGHT / (2.0 * length)
        return cls(length=length, group_index=group_index, **kwargs)


@dataclass(frozen=True)
class CaptureSettings:
    sample_rate: float = 40e9
    noise_sigma: float = 0.115
    clock_error: float = 0.0
    receiver_bandwidth: Optional[float] = 7.5e9
    backscatter_level: float = 1e-6
    rng_seed: int = 1
    delay_method: str = "fft"
    delay_taps: int = 31
    kaiser_beta: float = 8.0


@dataclass
class Trace:
    waveform: SampledWaveform
    wall_clock: float
    wavelength: float


@dataclass(frozen=True)
class ReflectionPath:
    delay: float
    amplitude: float
    label: str
    bounces: int


class FiberSimulator:
    """
    Round-trip delay model, multi-bounce path enumeration and receiver capture.
    """

    @staticmethod
    def group_delay_rtt(model, wavelength, wall_clock=0.0):
        """
        Round-trip group delay of the full fiber

        Args:
            model (FiberModel): Fiber under test
            wavelength (float): Wavelength in nm
            wall_clock (float): Seconds since scan start (sets the temperature)

        Returns:
            float: Round-trip delay in seconds, lead-in excluded
        """
        ErrorHandler.validate_input(
            MIN_WAVELENGTH_NM <= wavelength <= MAX_WAVELENGTH_NM,
            f"wavelength {wavelength} nm outside [{MIN_WAVELENGTH_NM}, {MAX_WAVELENGTH_NM}]",
        )
        length_km = model.length / 1000.0
        dispersion_term = 2.0 * length_km * model.dispersion.relative_delay_ps_per_km(wavelength)
        rtt = model.base_rtt + float(dispersion_term) * 1e-12
        return rtt * model.temperature.delay_scale(wall_clock)

    @staticmethod
    def enumerate_paths(model, wavelength, wall_clock=0.0):
        """
        Enumerate all reflection paths with at most max_bounce_order reflections

        A path alternates backward reflections (at events further out) and
        forward reflections (at events closer in) and always returns to the
        fiber input, so it has an odd number of reflections.

        Args:
            model (FiberModel): Fiber under test
            wavelength (float): Wavelength in nm
            wall_clock (float): Seconds since scan start

        Returns:
            list: ReflectionPath entries sorted by delay
        """
        events = model.events
        if not events:
            return []

        rtt = FiberSimulator.group_delay_rtt(model, wavelength, wall_clock)
        # one-way delay per meter, uniform along the fiber
        per_meter = rtt / (2.0 * model.length)
        att_per_m = model.attenuation / 1000.0
        reflect = [e.reflectivity for e in events]
        transmit = [1.0 - r for r in reflect]
        positions = [e.position for e in events]

        def passed(lo, hi):
            # product of transmittances of events strictly between indices lo and hi
            return float(np.prod(transmit[lo + 1 : hi])) if hi - lo > 1 else 1.0

        paths = []

        def walk(chain):
            # chain: event indices of reflections so far; len(chain) is odd here
            last = chain[-1]
            distance = positions[chain[0]]
            amplitude = float(np.prod(transmit[: chain[0]])) if chain[0] else 1.0
            for a, b in zip(chain, chain[1:]):
                distance += abs(positions[a] - positions[b])
                amplitude *= passed(min(a, b), max(a, b))
            distance += positions[last]
            amplitude *= float(np.prod(transmit[:last])) if last else 1.0
            for index in chain:
                amplitude *= reflect[index]
            amplitude *= 10.0 ** (-att_per_m * distance / 10.0)
            label = "+".join(events[i].label or f"@{positions[i]:g}m" for i in chain)
            paths.append(
                ReflectionPath(
                    delay=model.lead_in_delay + distance * per_meter,
                    amplitude=amplitude,
                    label=label,
                    bounces=len(chain),
                )
            )
            if len(chain) + 2 > model.max_bounce_order:
                return
            for back in range(0, last):
                for out in range(back + 1, len(events)):
                    walk(chain + [back, out])

        for first in range(len(events)):
            walk([first])

        paths.sort(key=lambda p: p.delay)
        return paths

    @staticmethod
    def backscatter(model, burst, settings, rng=None):
        """
        Frozen Rayleigh backscatter contribution

        One exponentially distributed reflectivity per resolved segment (one
        sample of round-trip time) along the fiber, drawn from the model's
        backscatter seed, convolved with the transmitted burst.

        Args:
            model (FiberModel): Fiber under test
            burst (SampledWaveform): Transmitted burst (one period)
            settings (CaptureSettings): Capture settings (level, sample rate)
            rng (numpy.random.Generator): Source of the speckle; model seed if None

        Returns:
            numpy.ndarray: Intensity contribution, same length as the burst
        """
        ErrorHandler.validate_input(settings.backscatter_level >= 0, "backscatter level must be >= 0")
        n = len(burst.samples)
        if settings.backscatter_level == 0:
            return np.zeros(n)
        if rng is None:
            rng = np.random.default_rng(model.backscatter_seed)

        fs = settings.sample_rate
        start = int(round(model.lead_in_delay * fs))
        n_segments = max(1, int(round(model.base_rtt * fs)))
        # segment k sits k samples of round trip past the input
        distance = np.arange(n_segments) * model.length / n_segments
        loss = 10.0 ** (-2.0 * model.attenuation * distance / 1000.0 / 10.0)
        speckle = rng.exponential(1.0, n_segments) * settings.backscatter_level * loss

        impulse = np.zeros(n)
        index = (start + np.arange(n_segments)) % n
        np.add.at(impulse, index, speckle)
        return np.fft.irfft(np.fft.rfft(burst.samples) * np.fft.rfft(impulse), n)

    @staticmethod
    def receiver_response(n_samples, sample_rate, bandwidth):
        """Zero-phase single-pole magnitude response on the rfft grid"""
        freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
        if not bandwidth:
            return np.ones_like(freqs)
        return 1.0 / np.sqrt(1.0 + (freqs / bandwidth) ** 2)

    @staticmethod
    def sinc_delay(samples, delay_samples, taps=31, beta=8.0):
        """
        Circular fractional delay by a Kaiser-windowed sinc

        Args:
            samples (numpy.ndarray): Periodic input
            delay_samples (float): Delay in samples (may be fractional)
            taps (int): Odd kernel length
            beta (float): Kaiser window shape

        Returns:
            numpy.ndarray: Delayed samples
        """
        whole = int(np.floor(delay_samples))
        frac = delay_samples - whole
        half = taps // 2
        offsets = np.arange(-half, half + 1)
        x = offsets - frac
        window = np.i0(beta * np.sqrt(np.clip(1.0 - (x / (half + 1)) ** 2, 0.0, None))) / np.i0(beta)
        kernel = np.sinc(x) * window
        out = np.zeros_like(samples, dtype=np.float64)
        for offset, weight in zip(offsets, kernel):
            if weight != 0.0:
                out += weight * np.roll(samples, whole + offset)
        return out

    @staticmethod
    def simulate_trace(model, burst, settings, wall_clock=0.0, wavelength=1550.0, trace_index=0,
                       backscatter=None):
        """
        Simulate one captured receiver trace (one burst period)

        Args:
            model (FiberModel): Fiber under test
            burst (SampledWaveform): Transmitted burst
            settings (CaptureSettings): Receiver and ADC settings
            wall_clock (float): Seconds since scan start
            wavelength (float): Wavelength in nm
            trace_index (int): Selects the noise stream (rng_seed, trace_index)
            backscatter (numpy.ndarray): Precomputed frozen backscatter, computed if None

        Returns:
            Trace: Captured waveform with its wall clock and wavelength
        """
        ErrorHandler.validate_input(
            abs(burst.sample_rate - settings.sample_rate) <= 1e-6 * settings.sample_rate,
            "burst and capture sample rates differ",
        )
        n = len(burst.samples)
        fs = settings.sample_rate
        scale = 1.0 + settings.clock_error * 1e-6
        paths = FiberSimulator.enumerate_paths(model, wavelength, wall_clock)
        FiberSimulator._check_wrapping(paths, burst, n / fs)

        if settings.delay_method == "fft":
            freqs = np.fft.rfftfreq(n, 1.0 / fs)
            channel = np.zeros(len(freqs), dtype=np.complex128)
            for path in paths:
                channel += path.amplitude * np.exp(-2j * np.pi * freqs * path.delay * scale)
            spectrum = np.fft.rfft(burst.samples) * channel
        elif settings.delay_method == "sinc":
            received = np.zeros(n)
            for path in paths:
                received += path.amplitude * FiberSimulator.sinc_delay(
                    burst.samples, path.delay * scale * fs, settings.delay_taps, settings.kaiser_beta
                )
            spectrum = np.fft.rfft(received)
        else:
            raise ValueError(f"unknown delay method {settings.delay_method!r}")

        if backscatter is None:
            backscatter = FiberSimulator.backscatter(model, burst, settings)
        if np.any(backscatter):
            spectrum = spectrum + np.fft.rfft(backscatter)

        spectrum *= FiberSimulator.receiver_response(n, fs, settings.receiver_bandwidth)
        samples = np.fft.irfft(spectrum, n)

        if settings.noise_sigma > 0:
            rng = np.random.default_rng([settings.rng_seed, trace_index])
            samples = samples + rng.normal(0.0, settings.noise_sigma, n)

        return Trace(SampledWaveform(samples, fs, burst.t0), wall_clock, wavelength)

    @staticmethod
    def simulate_traces(model, burst, settings, wall_clocks, wavelength=1550.0, first_index=0,
                        jobs=1, progress=False):
        """
        Simulate a set of traces, fanned out over a thread pool

        Args:
            model (FiberModel): Fiber under test
            burst (SampledWaveform): Transmitted burst
            settings (CaptureSettings): Receiver and ADC settings
            wall_clocks (list): Wall clock of every trace, non-decreasing
            wavelength (float): Wavelength in nm
            first_index (int): Trace index of the first trace (noise stream selection)
            jobs (int): Worker threads
            progress (bool): Show a progress bar

        Yields:
            Trace: Traces in wall-clock order
        """
        wall_clocks = list(wall_clocks)
        ErrorHandler.validate_input(
            all(b >= a for a, b in zip(wall_clocks, wall_clocks[1:])),
            "wall clocks must be non-decreasing",
        )
        frozen = FiberSimulator.backscatter(model, burst, settings)
        FiberSimulator.check_bandwidth(settings)

        def one(i):
            return FiberSimulator.simulate_trace(
                model, burst, settings, wall_clocks[i], wavelength, first_index + i, frozen
            )

        bar = tqdm(total=len(wall_clocks), unit="traces", disable=not progress)
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            # bounded window keeps memory flat for full-size traces
            window = max(1, jobs) * 2
            for start in range(0, len(wall_clocks), window):
                for trace in pool.map(one, range(start, min(start + window, len(wall_clocks)))):
                    bar.update(1)
                    yield trace
        bar.close()

    @staticmethod
    def check_bandwidth(settings):
        if settings.receiver_bandwidth and settings.sample_rate <= 2.0 * settings.receiver_bandwidth:
            logger.warning(
                "sample rate %.3g S/s does not exceed twice the receiver bandwidth %.3g Hz",
                settings.sample_rate,
                settings.receiver_bandwidth,
            )

    @staticmethod
    def _check_wrapping(paths, burst, period):
        if not paths:
            return
        burst_span = FiberSimulator._burst_span(burst)
        longest = paths[-1].delay + burst_span
        if longest > period:
            logger.warning(
                "path %s at %.4f us wraps past the %.4f us burst period",
                paths[-1].label,
                paths[-1].delay * 1e6,
                period * 1e6,
            )

    @staticmethod
    def _burst_span(burst):
        floor = burst.samples.min()
        active = np.nonzero(burst.samples > floor)[0]
        return (active[-1] + 1) / burst.sample_rate if len(active) else 0.0
