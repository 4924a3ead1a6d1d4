"""
`analyze` and `rms-study`: latency reports from a recorded or simulated trace set.
"""
import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from corrotdr.corrproc import CorrelationProcessor
from corrotdr.peakfit import LatencyPipeline, PeakFitter
from utils.config import RunConfig
from utils.error_handling import (
    EXIT_ANALYSIS,
    EXIT_OK,
    ConfigError,
    ErrorHandler,
    InvalidArgumentError,
    TraceIOError,
)
from utils.trace_handler import TraceHandler

logger = logging.getLogger(__name__)


REQUIRED_METADATA = ("sample_rate", "bit_rate", "prbs_order", "wavelength")


def open_trace_set(traceset):
    """
    Read a trace set that holds traces and the metadata the pipeline needs

    Args:
        traceset (str): Trace-set directory

    Returns:
        TraceFileSet: The opened set

    Raises:
        TraceIOError: Unreadable, empty or incomplete set
    """
    fileset = TraceHandler.read_trace_set(traceset)
    missing = [key for key in REQUIRED_METADATA if key not in fileset.metadata]
    ErrorHandler.validate_input(
        not missing, f"trace set {traceset} metadata lacks {', '.join(missing)}", TraceIOError
    )
    ErrorHandler.validate_input(
        len(fileset.traces) > 0, f"trace set {traceset} holds no traces", TraceIOError
    )
    return fileset


def load_set_config(fileset, config_path=None, overrides=None):
    """Config stored with the trace set, then the config file, then flags"""
    stored = fileset.metadata.get("config")
    try:
        RunConfig.load(base=stored)
    except ConfigError as e:
        raise TraceIOError(f"trace set carries an invalid config: {e}") from e
    return RunConfig.load(config_path, overrides=overrides, base=stored)


def pipeline_config_for(fileset, config, jobs=1):
    """Pipeline parameters with the burst taken from the trace-set metadata"""
    meta = fileset.metadata
    return dataclasses.replace(
        config.pipeline_config(jobs),
        bit_rate=float(meta["bit_rate"]),
        prbs_order=int(meta["prbs_order"]),
    )


def window_rows(filtered, result, halfwidth):
    """Correlation samples around every fitted peak next to the fitted Gaussian"""
    fs = filtered.sample_rate
    rows = []
    for n, (index, peak) in enumerate(zip(result.indices, result.peaks)):
        lo, hi = max(0, index - halfwidth), min(len(filtered.values), index + halfwidth + 1)
        x = np.arange(lo, hi, dtype=float)
        params = ((peak.center - filtered.t0) * fs, peak.width * fs, peak.amplitude, peak.offset)
        model = PeakFitter.gaussian_model(params, x)
        lags = filtered.t0 + x / fs
        rows.extend([n, lag, filtered.values[k], m] for k, lag, m in zip(range(lo, hi), lags, model))
    return rows


def cmd_analyze(traceset, out=None, config_path=None, dump_correlation=False, jobs=1):
    """
    Average a trace set and report the reflection latencies

    Args:
        traceset (str): Trace-set directory
        out (str): Output directory; `<traceset>_analysis` if None
        config_path (str): JSON config with pipeline overrides
        dump_correlation (bool): Also write the filtered correlation as CSV
        jobs (int): Worker threads

    Returns:
        int: Exit code (4 when fewer than two peaks could be fitted)

    Raises:
        TraceIOError: Unreadable, empty or incomplete trace set
    """
    fileset = open_trace_set(traceset)
    overrides = {"output": {"dump_correlation": True}} if dump_correlation else None
    config = load_set_config(fileset, config_path, overrides)
    pipeline_config = pipeline_config_for(fileset, config, jobs)
    traces = fileset.to_traces()

    averaged = CorrelationProcessor.average_traces(traces)
    pipeline = LatencyPipeline.from_burst(fileset.reference_waveform(), pipeline_config)
    result = pipeline.run(averaged)

    out_dir = Path(out or TraceHandler.save_output_path(traceset))
    report = {
        "status": "ok" if result.report is not None else "insufficient-peaks",
        "config_hash": config.config_hash(),
        "trace_set_hash": fileset.metadata.get("config_hash"),
        "n_traces": len(traces),
        "trace_set": TraceHandler.get_trace_set_info(traceset),
        "wavelength_nm": float(fileset.metadata["wavelength"]),
        "latency": result.report.as_dict() if result.report is not None else None,
        "peaks": [dataclasses.asdict(p) for p in result.peaks],
        "excluded_fits": result.excluded,
        "ground_truth": fileset.metadata.get("ground_truth"),
    }
    TraceHandler.write_json(out_dir / "report.json", report)

    filtered = result.filtered
    lags = filtered.lag_axis
    rows = [
        [n, index, lags[index], filtered.values[index], p.center, p.width, p.amplitude, p.residual_rms]
        for n, (index, p) in enumerate(zip(result.indices, result.peaks))
    ]
    TraceHandler.write_csv(
        out_dir / "peaks.csv",
        ["peak", "index", "lag_s", "value", "center_s", "width_s", "amplitude", "residual_rms"],
        rows,
    )
    TraceHandler.write_csv(
        out_dir / "peak_windows.csv",
        ["peak", "lag_s", "value", "model"],
        window_rows(filtered, result, pipeline.window_halfwidth),
    )
    if config.data["output"]["dump_correlation"]:
        TraceHandler.write_csv(
            out_dir / "correlation.csv", ["lag_s", "value"], zip(lags, filtered.values)
        )

    if result.report is None:
        logger.error("fewer than two reflection peaks in %s", traceset)
        print(json.dumps({"status": report["status"], "out": str(out_dir)}, indent=2))
        return EXIT_ANALYSIS

    latency = result.report
    summary = {
        "status": "ok",
        "out": str(out_dir),
        "input_rtt_ns": latency.input_rtt * 1e9,
        "end_rtt_ns": latency.end_rtt * 1e9,
        "fiber_rtt_ns": latency.fiber_rtt * 1e9,
        "consistency_error_ps": None
        if latency.consistency_error is None
        else latency.consistency_error * 1e12,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_rms_study(traceset, subset_sizes=None, out=None, config_path=None, jobs=1):
    """
    Triple-reflection consistency RMS against the number of averaged traces

    Args:
        traceset (str): Trace-set directory
        subset_sizes (list): Traces per subset; the configured sizes if None
        out (str): CSV path; `<traceset>_rms.csv` if None
        config_path (str): JSON config with pipeline overrides
        jobs (int): Worker threads

    Returns:
        int: Exit code
    """
    fileset = open_trace_set(traceset)
    config = load_set_config(fileset, config_path)
    pipeline_config = pipeline_config_for(fileset, config, jobs)
    sizes = list(subset_sizes or config.data["pipeline"]["subset_sizes"])
    for size in sizes:
        ErrorHandler.validate_input(
            isinstance(size, int) and size >= 1, f"invalid subset size {size!r}", InvalidArgumentError
        )
    traces = fileset.to_traces()
    reference = fileset.reference_waveform()

    rows = []
    for size in sizes:
        if len(traces) // size < 2:
            logger.warning(
                "subset size %d leaves fewer than 2 subsets of %d traces, skipped", size, len(traces)
            )
            continue
        row = PeakFitter.subset_rms(traces, reference, size, pipeline_config)
        logger.info("subset size %d: %d subsets, rms %.3f ps", size, row.n_subsets, row.rms_error * 1e12)
        rows.append(row)

    out_path = out or TraceHandler.save_output_path(traceset, "_rms.csv")
    config_hash = config.config_hash()
    TraceHandler.write_csv(
        out_path,
        ["subset_size", "n_subsets", "rms_ps", "n_excluded", "config_hash"],
        [[r.subset_size, r.n_subsets, r.rms_error * 1e12, r.n_excluded, config_hash] for r in rows],
    )
    summary = {
        "out": str(out_path),
        "rows": [{"subset_size": r.subset_size, "rms_ps": r.rms_error * 1e12} for r in rows],
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK
