"""
Command line driver: simulate | analyze | rms-study | cd-sweep | calibrate-noise.
"""
import argparse

from utils.error_handling import EXIT_OK, ErrorHandler


def subset_sizes(text):
    """Parse '50,100,250' into a list of positive ints"""
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not sizes or any(size < 1 for size in sizes):
        raise argparse.ArgumentTypeError("subset sizes must be positive integers")
    return sizes


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="corrotdr", description="Correlation OTDR latency and dispersion toolkit"
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: $CORROTDR_LOG)")
    parser.add_argument("--no-progress", action="store_true", help="Hide progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Write a synthetic trace set")
    sim.add_argument("--config", help="JSON config file")
    sim.add_argument("--out", required=True, help="Trace-set directory")
    sim.add_argument("--seed", type=int, help="Receiver noise seed")
    sim.add_argument("--traces", type=positive_int, help="Number of traces")
    sim.add_argument("--jobs", type=positive_int, default=1)
    sim.add_argument("--lite", action="store_true", help="Desk-scale preset")

    ana = sub.add_parser("analyze", help="Latency report of an averaged trace set")
    ana.add_argument("traceset", help="Trace-set directory")
    ana.add_argument("--config", help="JSON config with pipeline overrides")
    ana.add_argument("--out", help="Output directory")
    ana.add_argument("--jobs", type=positive_int, default=1)
    ana.add_argument("--dump-correlation", action="store_true", help="Write correlation.csv")

    rms = sub.add_parser("rms-study", help="Consistency RMS against subset size")
    rms.add_argument("traceset", help="Trace-set directory")
    rms.add_argument("--config", help="JSON config with pipeline overrides")
    rms.add_argument("--out", help="CSV output path")
    rms.add_argument("--subset-sizes", type=subset_sizes, help="e.g. 50,100,250,500")
    rms.add_argument("--jobs", type=positive_int, default=1)

    cd = sub.add_parser("cd-sweep", help="Dispersion from a wavelength sweep")
    cd.add_argument("--config", help="JSON config file")
    cd.add_argument("--out", required=True, help="Output directory")
    cd.add_argument("--seed", type=int, help="Receiver noise seed")
    cd.add_argument("--jobs", type=positive_int, default=1)
    cd.add_argument("--lite", action="store_true", help="Fewer traces per wavelength")
    cd.add_argument(
        "--no-drift-compensation", dest="compensate", action="store_false", default=None,
        help="Fit the raw latencies",
    )

    cal = sub.add_parser("calibrate-noise", help="Receiver noise for a 3-4 ps subset RMS")
    cal.add_argument("--config", help="JSON config file")
    cal.add_argument("--seed", type=int, help="Receiver noise seed")
    cal.add_argument("--subset-size", type=positive_int, default=100, help="Traces per subset")
    cal.add_argument("--subsets", type=positive_int, default=40, help="Subsets per search round")
    cal.add_argument("--jobs", type=positive_int, default=1)
    cal.add_argument("--lite", action="store_true", help="Desk-scale preset")
    return parser


def dispatch(args):
    progress = not args.no_progress
    if args.command == "simulate":
        from cli.simulate_cmd import cmd_simulate

        return cmd_simulate(args.out, args.config, args.lite, args.seed, args.traces, args.jobs, progress)
    if args.command == "analyze":
        from cli.analyze_cmd import cmd_analyze

        return cmd_analyze(args.traceset, args.out, args.config, args.dump_correlation, args.jobs)
    if args.command == "rms-study":
        from cli.analyze_cmd import cmd_rms_study

        return cmd_rms_study(args.traceset, args.subset_sizes, args.out, args.config, args.jobs)
    if args.command == "calibrate-noise":
        from cli.calibrate_cmd import cmd_calibrate_noise

        return cmd_calibrate_noise(args.config, args.lite, args.subset_size, args.subsets, args.seed, args.jobs)
    from cli.sweep_cmd import cmd_cd_sweep

    return cmd_cd_sweep(args.out, args.config, args.lite, args.seed, args.jobs, args.compensate, progress)


def run(argv=None):
    """
    Parse arguments, run one command and map failures to exit codes

    Args:
        argv (list): Arguments without the program name; sys.argv if None

    Returns:
        int: 0 ok, 1 unexpected, 2 config, 3 I/O, 4 analysis
    """
    args = build_parser().parse_args(argv)
    ErrorHandler.configure_logging(args.log_level)
    try:
        return dispatch(args) or EXIT_OK
    except Exception as e:
        return ErrorHandler.handle_error(e, args.command)
