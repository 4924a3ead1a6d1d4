"""
`simulate`: write a synthetic trace set for one fiber and wavelength.
"""
import dataclasses
import json
import logging

import numpy as np

from corrotdr.fibersim import FiberSimulator
from corrotdr.seqgen import SequenceGenerator
from utils.config import RunConfig
from utils.error_handling import EXIT_OK
from utils.trace_handler import TraceHandler

logger = logging.getLogger(__name__)


def ground_truth(model, wavelength, wall_clock):
    """Noise-free reflection paths at the given wall clock, for the metadata"""
    return [
        {"label": p.label, "delay_s": p.delay, "amplitude": p.amplitude, "bounces": p.bounces}
        for p in FiberSimulator.enumerate_paths(model, wavelength, wall_clock)
    ]


def cmd_simulate(out, config_path=None, lite=False, seed=None, traces=None, jobs=1, progress=True):
    """
    Simulate a trace set and write it to `out`

    Args:
        out (str): Trace-set directory
        config_path (str): JSON config file, optional
        lite (bool): Desk-scale preset
        seed (int): Noise seed override
        traces (int): Trace count override
        jobs (int): Worker threads
        progress (bool): Show a progress bar

    Returns:
        int: Exit code
    """
    config = RunConfig.load(config_path, lite=lite, overrides={"seed": seed, "traces": traces})
    seq = config.sequence()
    spec = config.burst_spec()
    burst = SequenceGenerator.build_burst(seq, spec)
    model = config.fiber_model()
    settings = config.capture_settings()
    wavelength = config.data["wavelength"]
    wall_clocks = config.wall_clocks()

    logger.info(
        "simulating %d traces of %d samples at %.2f nm", len(wall_clocks), spec.n_samples, wavelength
    )
    metadata = {
        "sample_rate": spec.sample_rate,
        "bit_rate": spec.bit_rate,
        "prbs_order": seq.order,
        "polynomial": seq.generator_polynomial,
        "lfsr_seed": config.data["burst"]["lfsr_seed"],
        "wavelength": wavelength,
        "wall_clocks": wall_clocks,
        "t0": burst.t0,
        "capture": dataclasses.asdict(settings),
        "config": config.data,
        "config_hash": config.config_hash(),
        # the average of a linearly drifting set sees the mid-set geometry
        "ground_truth": ground_truth(model, wavelength, float(np.mean(wall_clocks))),
    }
    generated = FiberSimulator.simulate_traces(
        model, burst, settings, wall_clocks, wavelength, first_index=0, jobs=jobs, progress=progress
    )
    document = TraceHandler.write_trace_set(
        out, metadata, burst.samples, (trace.waveform.samples for trace in generated)
    )

    paths = metadata["ground_truth"]
    summary = {
        "out": str(out),
        "n_traces": document["n_traces"],
        "n_samples": document["n_samples"],
        "config_hash": document["config_hash"],
        "paths": [{"label": p["label"], "delay_ns": p["delay_s"] * 1e9} for p in paths[:3]],
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK
