"""
`cd-sweep`: chromatic dispersion from a drifting multi-wavelength latency scan.
"""
import dataclasses
import itertools
import json
import logging
from pathlib import Path

import numpy as np

from corrotdr.cdscan import DispersionScanner, WavelengthEntry, WavelengthScan
from corrotdr.corrproc import CorrelationProcessor
from corrotdr.fibersim import DispersionParams, FiberSimulator
from corrotdr.peakfit import LatencyPipeline, PeakFitter
from corrotdr.seqgen import SequenceGenerator
from utils.config import RunConfig
from utils.error_handling import EXIT_OK, ConfigError, ErrorHandler
from utils.trace_handler import TraceHandler

logger = logging.getLogger(__name__)


def injected_drift_rate(model, sweep):
    """Temperature ramp (degC/h) that shifts the end RTT by `injected_drift` over the sweep"""
    if not sweep["injected_drift"]:
        return 0.0
    return sweep["injected_drift"] / (
        model.temperature.coeff * model.base_rtt * sweep["duration_hours"]
    )


def simulated_entries(config, jobs=1, progress=True):
    """
    Simulate every wavelength of the sweep in measurement order

    Returns:
        tuple: (list of WavelengthEntry, FiberModel used)
    """
    sweep = config.data["sweep"]
    end = sweep["end_reflectivity"]
    base = config.fiber_model(end_reflectivity=end)
    model = config.fiber_model(end_reflectivity=end, drift_rate=injected_drift_rate(base, sweep))
    seq = config.sequence()
    burst = SequenceGenerator.build_burst(seq, config.burst_spec())
    settings = config.capture_settings()
    if sweep["noise_sigma"] is not None:
        settings = dataclasses.replace(settings, noise_sigma=sweep["noise_sigma"])
    pipeline = LatencyPipeline.from_burst(burst, config.pipeline_config(jobs, sweep["max_peaks"]))

    order = [sweep["wavelengths"][i] for i in sweep["measurement_order"]]
    per = sweep["traces_per_wavelength"]
    size = sweep["subset_size"]
    ErrorHandler.validate_input(
        per // size >= 2, "sweep needs at least 2 subsets per wavelength for drift estimation", ConfigError
    )
    interval = sweep["duration_hours"] * 3600.0 / (per * len(order))

    entries = []
    for m, wavelength in enumerate(order):
        clocks = [(m * per + i) * interval for i in range(per)]
        generated = FiberSimulator.simulate_traces(
            model, burst, settings, clocks, wavelength, first_index=m * per, jobs=jobs, progress=progress
        )
        latencies = []
        while True:
            chunk = list(itertools.islice(generated, size))
            if len(chunk) < size:
                break
            result = pipeline.run(CorrelationProcessor.average_traces(chunk))
            if result.report is None:
                logger.warning(
                    "subset at %.1f s of %.2f nm has no latency report", chunk[0].wall_clock, wavelength
                )
                continue
            latencies.append((float(np.mean([t.wall_clock for t in chunk])), result.report.end_rtt))
        logger.info("%.2f nm: %d subset latencies", wavelength, len(latencies))
        entries.append(WavelengthEntry(wavelength, latencies))
    return entries, model


def recorded_entries(config, jobs=1):
    """Per-subset end latencies of the configured trace sets"""
    sweep = config.data["sweep"]
    pipeline_config = config.pipeline_config(jobs, sweep["max_peaks"])
    entries = []
    for path in sweep["trace_sets"]:
        fileset = TraceHandler.read_trace_set(path)
        results = PeakFitter.subset_latencies(
            fileset.to_traces(), fileset.reference_waveform(), sweep["subset_size"], pipeline_config
        )
        latencies = [(t, r.report.end_rtt) for t, r in results if r.report is not None]
        if len(latencies) < len(results):
            logger.warning("%s: %d subsets without a latency report", path, len(results) - len(latencies))
        entries.append(WavelengthEntry(float(fileset.metadata["wavelength"]), latencies))
    return entries


def cmd_cd_sweep(out, config_path=None, lite=False, seed=None, jobs=1, compensate=None, progress=True):
    """
    Measure latency against wavelength and derive the dispersion curve

    Args:
        out (str): Output directory for result.json, dispersion.csv and latencies.csv
        config_path (str): JSON config file, optional
        lite (bool): Fewer traces per wavelength
        seed (int): Noise seed override
        jobs (int): Worker threads
        compensate (bool): Override sweep.compensate_drift
        progress (bool): Show progress bars

    Returns:
        int: Exit code
    """
    overrides = {"seed": seed}
    if compensate is not None:
        overrides["sweep"] = {"compensate_drift": compensate}
    config = RunConfig.load(config_path, lite=lite, sweep=True, overrides=overrides)
    sweep = config.data["sweep"]
    model = config.fiber_model(end_reflectivity=sweep["end_reflectivity"])

    if sweep["trace_sets"]:
        entries = recorded_entries(config, jobs)
    else:
        entries, model = simulated_entries(config, jobs, progress)
    scan = WavelengthScan(entries, model.length / 1000.0)

    if sweep["reference_file"]:
        reference = TraceHandler.load_reference_curve(sweep["reference_file"])
    else:
        reference = model.dispersion
    lo, hi = min(sweep["wavelengths"]), max(sweep["wavelengths"])
    grid = np.arange(lo, hi + sweep["grid_step"] / 2.0, sweep["grid_step"])

    compensate = sweep["compensate_drift"]
    result = DispersionScanner.analyze_scan(
        scan, compensate, grid, reference, model.dispersion.lambda0
    )
    document = result.as_dict()
    document["config_hash"] = config.config_hash()
    document["fiber_length_km"] = scan.fiber_length
    if compensate:
        uncompensated = DispersionScanner.analyze_scan(scan, False, grid, None, model.dispersion.lambda0)
        document["fit_rms_uncompensated_ps"] = uncompensated.fit_rms * 1e12
        span = max(t for e in entries for t, _ in e.latencies) - scan.scan_start
        document["implied_temperature_change_degC"] = DispersionScanner.implied_temperature_change(
            result.drift.rate * span, model.temperature.coeff, model.base_rtt
        )

    out_dir = Path(out)
    TraceHandler.write_json(out_dir / "result.json", document)
    if isinstance(reference, DispersionParams):
        expected = reference.dispersion(grid)
    else:
        expected = np.interp(grid, reference.wavelengths, reference.dispersion, left=np.nan, right=np.nan)
    TraceHandler.write_csv(
        out_dir / "dispersion.csv",
        ["wavelength_nm", "d_measured_ps_nm_km", "d_reference_ps_nm_km"],
        [[w, d, float(r)] for (w, d), r in zip(result.d_curve, expected)],
    )
    TraceHandler.write_csv(
        out_dir / "latencies.csv",
        ["wavelength_nm", "wall_clock_s", "end_rtt_s"],
        [[e.wavelength, t, rtt] for e in entries for t, rtt in e.latencies],
    )

    summary = {
        "out": str(out_dir),
        "fit_rms_ps": document["fit_rms_ps"],
        "fit_rms_uncompensated_ps": document.get("fit_rms_uncompensated_ps"),
        "max_reference_error_ps_nm_km": result.max_reference_error,
        "drift_ps_per_hour": None if result.drift is None else result.drift.rate_ps_per_hour,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK
