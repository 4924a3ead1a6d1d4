"""
Run configuration: built-in presets, JSON schema validation and domain object construction.

Resolution order: built-in defaults <- lite preset (optional) <- config file <- command-line flags.
Every key a config file may set appears in DEFAULTS; anything else is rejected.
"""
import copy
import hashlib
import json
import logging
import math
from pathlib import Path

from corrotdr.corrproc import DEFAULT_REGULARIZATION, FILTER_RESPONSES
from corrotdr.fibersim import (
    AIR_GAP_REFLECTIVITY,
    CaptureSettings,
    DispersionParams,
    FiberModel,
    ReflectionEvent,
    TemperatureProfile,
)
from corrotdr.peakfit import PipelineConfig
from corrotdr.seqgen import BurstSpec, SequenceGenerator
from utils.error_handling import ConfigError, CorrOtdrError

logger = logging.getLogger(__name__)

C_BAND_SWEEP = [1530.0 + i * 35.0 / 6.0 for i in range(7)]

DEFAULTS = {
    "traces": 1000,                     # traces per simulated set
    "wavelength": 1550.0,               # nm, single-wavelength runs
    "trace_interval": 1.0,              # s of wall clock between captured traces
    "seed": 1,                          # receiver noise seed
    "fiber": {
        "length": 2200.0,               # m
        "group_index": None,            # derived from fiber_rtt when None
        "fiber_rtt": 21638.9586e-9,     # s, end minus input reflection at lambda0 and t_ref
        "attenuation": 0.2,             # dB/km
        "lead_in_delay": 94.2372e-9,    # s, RTT of the input (air gap) reflection
        "input_reflectivity": AIR_GAP_REFLECTIVITY,
        "end_reflectivity": 0.9,        # mirrored fiber end
        "events": None,                 # [{"position", "reflectivity", "label"}] replaces the two above
        "max_bounce_order": 3,
        "backscatter_seed": 7,
        "dispersion": {"d0": 16.5, "s0": 0.058, "lambda0": 1550.0},
        "temperature": {"t_ref": 20.0, "drift_rate": 0.0, "coeff": 7e-6, "points": None},
    },
    "burst": {
        "order": 7,
        "polynomial": None,             # tap mask; x^7 + x^6 + 1 for order 7 when None
        "lfsr_seed": None,              # all-ones register when None
        "bit_rate": 10e9,
        "period": 50e-6,
        "sample_rate": 40e9,
        "extinction_ratio": 13.0,       # dB, or "inf"
        "peak_level": 1.0,
    },
    "capture": {
        "noise_sigma": 0.115,           # per-sample receiver noise, units of peak_level; see calibrate-noise
        "clock_error": 0.0,             # ppm
        "receiver_bandwidth": 7.5e9,    # Hz, null for no band limit
        "backscatter_level": 1e-6,      # per resolved segment, 0 disables
        "delay_method": "fft",          # "fft" or "sinc"
        "delay_taps": 31,
        "kaiser_beta": 8.0,
    },
    "pipeline": {
        "threshold_rel": 0.01,
        "min_separation": 30e-9,        # s, above the 25.4 ns burst so no sidelobe is taken for a peak
        "max_peaks": 3,
        "window_halfwidth": None,       # samples; 3 bit periods when None
        "regularization": DEFAULT_REGULARIZATION,
        "filter_response": "link",      # "link" or "autocorrelation"
        "subset_sizes": [50, 100, 250, 500],
    },
    "sweep": {
        "wavelengths": C_BAND_SWEEP,
        "measurement_order": [3, 0, 6, 1, 5, 2, 4],  # indices into wavelengths
        "traces_per_wavelength": 1000,
        "subset_size": 250,
        "duration_hours": 3.5,
        "injected_drift": 120e-12,      # s of RTT over the whole sweep
        "end_reflectivity": 0.035,      # open connector
        "max_peaks": 2,
        "noise_sigma": 0.01,            # receiver noise of the sweep captures; capture.noise_sigma when null
        "compensate_drift": True,
        "reference_file": None,         # two-column (nm, ps/nm/km) text file
        "trace_sets": None,             # recorded trace-set directories, one per measurement
        "grid_step": 0.5,               # nm
    },
    "output": {
        "dump_correlation": False,
    },
}

LITE_OVERRIDES = {
    "traces": 100,
    "fiber": {"length": 550.0, "fiber_rtt": 21638.9586e-9 / 4.0},
    "burst": {"period": 12.5e-6},
    "pipeline": {"subset_sizes": [10, 25, 50]},
}

# dispersion accuracy scales with fiber length, so the sweep keeps the full fiber;
# 10x fewer traces per subset at sqrt(10)x less noise keep the full sweep's per-subset latency error
SWEEP_LITE_OVERRIDES = {
    "sweep": {"traces_per_wavelength": 100, "subset_size": 25, "noise_sigma": 0.003},
}


def deep_merge(base, override, path=""):
    """Merge `override` into a copy of `base`, rejecting keys `base` does not have"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be an object")
            merged[key] = deep_merge(default, value, where)
        else:
            check_type(where, default, value)
            merged[key] = copy.deepcopy(value)
    return merged


def check_type(where, default, value):
    if value is None or default is None:
        return
    if where.endswith("extinction_ratio") and value == "inf":
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"'{where}' has the wrong type ({type(value).__name__})")


class RunConfig:
    """
    Resolved run configuration and the domain objects built from it.
    """

    def __init__(self, data):
        self.data = data

    @classmethod
    def load(cls, path=None, lite=False, sweep=False, overrides=None, base=None):
        """
        Resolve the configuration

        Args:
            path (str): JSON config file, optional
            lite (bool): Apply the desk-scale preset
            sweep (bool): Use the dispersion-sweep variant of the lite preset
            overrides (dict): Final overrides (command-line flags)
            base (dict): Merged over the built-in defaults (e.g. the config stored with a trace set)

        Returns:
            RunConfig: Validated configuration

        Raises:
            ConfigError: Unreadable file, unknown key or wrong type
        """
        data = copy.deepcopy(DEFAULTS)
        if base is not None:
            data = deep_merge(data, base)
        if lite:
            data = deep_merge(data, SWEEP_LITE_OVERRIDES if sweep else LITE_OVERRIDES)
        if path is not None:
            try:
                document = json.loads(Path(path).read_text())
            except (OSError, ValueError) as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            if not isinstance(document, dict):
                raise ConfigError("config root must be an object")
            data = deep_merge(data, document)
        if overrides:
            data = deep_merge(data, {k: v for k, v in overrides.items() if v is not None})
        config = cls(data)
        config.validate()
        return config

    def validate(self):
        """Build every domain object once so bad values surface as ConfigError"""
        if self.data["traces"] < 1:
            raise ConfigError("traces must be at least 1")
        try:
            self.fiber_model()
            self.sequence()
            self.burst_spec()
            self.pipeline_config()
            self.capture_settings()
        except ConfigError:
            raise
        except (CorrOtdrError, ValueError, TypeError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e
        capture = self.data["capture"]
        if capture["delay_method"] not in ("fft", "sinc"):
            raise ConfigError("capture.delay_method must be 'fft' or 'sinc'")
        if self.data["pipeline"]["filter_response"] not in FILTER_RESPONSES:
            raise ConfigError(f"pipeline.filter_response must be one of {FILTER_RESPONSES}")
        sweep = self.data["sweep"]
        if sweep["noise_sigma"] is not None and sweep["noise_sigma"] < 0:
            raise ConfigError("sweep.noise_sigma must be >= 0")
        if len(sweep["wavelengths"]) < 3:
            raise ConfigError("sweep.wavelengths needs at least 3 entries")
        if sorted(sweep["measurement_order"]) != list(range(len(sweep["wavelengths"]))):
            raise ConfigError("sweep.measurement_order must be a permutation of the wavelength indices")

    def config_hash(self):
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def fiber_model(self, end_reflectivity=None, drift_rate=None):
        fiber = self.data["fiber"]
        if fiber["events"] is not None:
            events = tuple(
                ReflectionEvent(float(e["position"]), float(e["reflectivity"]), str(e.get("label", "")))
                for e in fiber["events"]
            )
        else:
            end = fiber["end_reflectivity"] if end_reflectivity is None else end_reflectivity
            events = (
                ReflectionEvent(0.0, fiber["input_reflectivity"], "air-gap"),
                ReflectionEvent(fiber["length"], end, "fiber-end"),
            )
        temp = fiber["temperature"]
        points = tuple(tuple(p) for p in temp["points"]) if temp["points"] else ()
        temperature = TemperatureProfile(
            t_ref=temp["t_ref"],
            drift_rate=temp["drift_rate"] if drift_rate is None else drift_rate,
            coeff=temp["coeff"],
            points=points,
        )
        common = dict(
            attenuation=fiber["attenuation"],
            lead_in_delay=fiber["lead_in_delay"],
            events=events,
            dispersion=DispersionParams(**fiber["dispersion"]),
            temperature=temperature,
            max_bounce_order=fiber["max_bounce_order"],
            backscatter_seed=fiber["backscatter_seed"],
        )
        if fiber["group_index"] is not None:
            return FiberModel(length=fiber["length"], group_index=fiber["group_index"], **common)
        if fiber["fiber_rtt"] is None:
            raise ConfigError("fiber needs either group_index or fiber_rtt")
        return FiberModel.from_round_trip(fiber["length"], fiber["fiber_rtt"], **common)

    def burst_spec(self):
        burst = self.data["burst"]
        er = burst["extinction_ratio"]
        return BurstSpec(
            bit_rate=burst["bit_rate"],
            period=burst["period"],
            sample_rate=burst["sample_rate"],
            extinction_ratio=math.inf if er in (None, "inf") else float(er),
            peak_level=burst["peak_level"],
        )

    def sequence(self):
        burst = self.data["burst"]
        return SequenceGenerator.gen_prbs(burst["order"], burst["polynomial"], burst["lfsr_seed"])

    def capture_settings(self):
        capture = self.data["capture"]
        return CaptureSettings(
            sample_rate=self.data["burst"]["sample_rate"],
            noise_sigma=capture["noise_sigma"],
            clock_error=capture["clock_error"],
            receiver_bandwidth=capture["receiver_bandwidth"],
            backscatter_level=capture["backscatter_level"],
            rng_seed=self.data["seed"],
            delay_method=capture["delay_method"],
            delay_taps=capture["delay_taps"],
            kaiser_beta=capture["kaiser_beta"],
        )

    def pipeline_config(self, jobs=1, max_peaks=None):
        pipeline = self.data["pipeline"]
        return PipelineConfig(
            bit_rate=self.data["burst"]["bit_rate"],
            prbs_order=self.data["burst"]["order"],
            threshold_rel=pipeline["threshold_rel"],
            min_separation=pipeline["min_separation"],
            max_peaks=pipeline["max_peaks"] if max_peaks is None else max_peaks,
            window_halfwidth=pipeline["window_halfwidth"],
            regularization=pipeline["regularization"],
            filter_response=pipeline["filter_response"],
            jobs=jobs,
        )

    def wall_clocks(self, count=None, start_index=0):
        count = self.data["traces"] if count is None else count
        interval = self.data["trace_interval"]
        return [(start_index + i) * interval for i in range(count)]
