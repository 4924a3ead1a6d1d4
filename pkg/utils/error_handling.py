import logging
import os
import sys
import traceback


LOG_ENV_VAR = "CORROTDR_LOG"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Exit codes are a stable contract of the command line driver
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


class CorrOtdrError(Exception):
    """Base class for all errors raised by the toolkit"""

    exit_code = EXIT_UNEXPECTED


class InvalidArgumentError(CorrOtdrError, ValueError):
    """A precondition on an argument was violated"""

    exit_code = EXIT_CONFIG


class InvalidPolynomialError(InvalidArgumentError):
    """The LFSR feedback polynomial does not generate a maximal-length sequence"""


class ConfigError(CorrOtdrError):
    """The run configuration failed schema validation"""

    exit_code = EXIT_CONFIG


class TraceIOError(CorrOtdrError):
    """A trace set or report could not be read or written"""

    exit_code = EXIT_IO


class AnalysisError(CorrOtdrError):
    """The analysis chain could not produce a result"""

    exit_code = EXIT_ANALYSIS


class FitDegenerateError(AnalysisError):
    """The fit window holds no information (constant values)"""


class InsufficientPeaksError(AnalysisError):
    """Fewer reflection peaks than needed for a latency report"""


class RankDeficientError(AnalysisError):
    """A least-squares system has no unique solution"""


class DegenerateDriftError(RankDeficientError):
    """The drift model cannot be separated from the per-wavelength offsets"""


class ErrorHandler:
    """
    Utility class for error handling and logging
    """

    @staticmethod
    def configure_logging(level=None):
        """
        Install the stream handler used by the command line driver

        Args:
            level (str or int): Log level; defaults to the CORROTDR_LOG environment variable

        Returns:
            int: The effective numeric log level
        """
        if level is None:
            level = os.environ.get(LOG_ENV_VAR, "WARNING")
        numeric = ErrorHandler.parse_level(level)

        root = logging.getLogger()
        for handler in list(root.handlers):
            if getattr(handler, "_corrotdr", False):
                root.removeHandler(handler)

        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._corrotdr = True
        root.addHandler(handler)
        root.setLevel(numeric)
        return numeric

    @staticmethod
    def parse_level(level):
        """
        Convert a level name or number into a numeric logging level

        Args:
            level (str or int): e.g. "DEBUG", "info" or "10"

        Returns:
            int: Numeric logging level (WARNING if the name is unknown)
        """
        if isinstance(level, int):
            return level
        text = str(level).strip()
        if text.isdigit():
            return int(text)
        numeric = logging.getLevelName(text.upper())
        return numeric if isinstance(numeric, int) else logging.WARNING

    @staticmethod
    def handle_error(e, context=""):
        """
        Log an exception and map it to a process exit code

        Args:
            e (Exception): Exception object
            context (str): Context information

        Returns:
            int: Exit code for the exception
        """
        logger = logging.getLogger("corrotdr")
        error_message = f"{context} - {e}" if context else str(e)
        if isinstance(e, CorrOtdrError):
            logger.error(error_message)
            return e.exit_code
        if isinstance(e, OSError):
            logger.error(error_message)
            return EXIT_IO
        logger.error(error_message)
        logger.debug("".join(traceback.format_exception(type(e), e, e.__traceback__)))
        return EXIT_UNEXPECTED

    @staticmethod
    def validate_input(condition, error_message, error=InvalidArgumentError):
        """
        Validate input condition

        Args:
            condition (bool): Condition to validate
            error_message (str): Error message if condition fails
            error (type): Exception class raised on failure

        Raises:
            CorrOtdrError: When the condition does not hold
        """
        if not condition:
            raise error(error_message)
