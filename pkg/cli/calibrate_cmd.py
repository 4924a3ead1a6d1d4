"""
`calibrate-noise`: receiver noise level that puts the subset-100 consistency RMS at 3-4 ps.
"""
import dataclasses
import json
import logging

from corrotdr.fibersim import FiberSimulator
from corrotdr.peakfit import LatencyPipeline, PeakFitter
from corrotdr.seqgen import SequenceGenerator
from utils.config import DEFAULTS, RunConfig
from utils.error_handling import EXIT_ANALYSIS, EXIT_OK

logger = logging.getLogger(__name__)

TARGET_PS = (3.0, 4.0)


def cmd_calibrate_noise(config_path=None, lite=False, subset_size=100, n_subsets=40, seed=None, jobs=1):
    """
    Search capture.noise_sigma for the configured fiber

    Args:
        config_path (str): JSON config file, optional
        lite (bool): Desk-scale preset
        subset_size (int): Traces per subset
        n_subsets (int): Subsets per search round
        seed (int): Noise seed override
        jobs (int): Worker threads

    Returns:
        int: Exit code (4 when the search did not reach the target band)
    """
    config = RunConfig.load(config_path, lite=lite, overrides={"seed": seed})
    burst = SequenceGenerator.build_burst(config.sequence(), config.burst_spec())
    quiet = dataclasses.replace(config.capture_settings(), noise_sigma=0.0)
    clean = FiberSimulator.simulate_trace(
        config.fiber_model(), burst, quiet, 0.0, config.data["wavelength"]
    ).waveform
    pipeline = LatencyPipeline.from_burst(burst, config.pipeline_config(jobs))

    start = config.data["capture"]["noise_sigma"] or DEFAULTS["capture"]["noise_sigma"]
    calibration = PeakFitter.calibrate_noise(
        clean,
        pipeline,
        subset_size,
        tuple(v * 1e-12 for v in TARGET_PS),
        start_sigma=start,
        n_subsets=n_subsets,
        seed=config.data["seed"],
    )
    summary = {
        "noise_sigma": calibration.noise_sigma,
        "rms_ps": calibration.row.rms_error * 1e12,
        "subset_size": subset_size,
        "n_subsets": n_subsets,
        "n_excluded": calibration.row.n_excluded,
        "target_ps": list(TARGET_PS),
        "within_target": calibration.within_target,
        "rounds": [{"noise_sigma": s, "rms_ps": r * 1e12} for s, r in calibration.history],
        "config_hash": config.config_hash(),
    }
    print(json.dumps(summary, indent=2))
    if not calibration.within_target:
        logger.error("noise search ended at %.3f ps, outside %s ps", summary["rms_ps"], TARGET_PS)
        return EXIT_ANALYSIS
    return EXIT_OK
