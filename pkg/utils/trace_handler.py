"""
Trace-set, report and plot-data file I/O.

Trace-set layout (a directory):
    metadata.json   structured metadata, see TraceHandler.write_trace_set
    reference.f32   transmitted burst, little-endian float32
    traces.f32      n_traces x n_samples little-endian float32, trace-major, no header
"""
import csv
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from corrotdr.cdscan import ReferenceCurve
from corrotdr.fibersim import Trace
from corrotdr.seqgen import SampledWaveform
from utils.error_handling import TraceIOError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SAMPLE_DTYPE = np.dtype("<f4")
METADATA_FILE = "metadata.json"
REFERENCE_FILE = "reference.f32"
TRACES_FILE = "traces.f32"


@dataclass
class TraceFileSet:
    metadata: dict
    reference: np.ndarray
    traces: np.ndarray  # (n_traces, n_samples), possibly memory mapped

    @property
    def sample_rate(self):
        return float(self.metadata["sample_rate"])

    def reference_waveform(self):
        return SampledWaveform(np.asarray(self.reference, dtype=np.float64), self.sample_rate, 0.0)

    def to_traces(self):
        """Trace views over the stored rows (no copy for memory-mapped sets)"""
        wavelength = float(self.metadata["wavelength"])
        t0 = float(self.metadata.get("t0", 0.0))
        return [
            Trace(SampledWaveform(row, self.sample_rate, t0), float(wall_clock), wavelength)
            for row, wall_clock in zip(self.traces, self.metadata["wall_clocks"])
        ]


class TraceHandler:
    """
    Utility class for trace-set and report files
    """

    @staticmethod
    def write_trace_set(out_dir, metadata, reference, traces):
        """
        Write a trace set, streaming the traces to disk

        Args:
            out_dir (str): Target directory (created if missing)
            metadata (dict): sample_rate, bit_rate, wavelength, wall_clocks, capture settings, config hash, ...
            reference (numpy.ndarray): Transmitted burst samples
            traces (iterable): Sample arrays, one per trace

        Returns:
            dict: The metadata document as written

        Raises:
            TraceIOError: Directory or files not writable
        """
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            reference = np.asarray(reference, dtype=SAMPLE_DTYPE)
            reference.tofile(out / REFERENCE_FILE)
            count, n_samples = 0, None
            with open(out / TRACES_FILE, "wb") as handle:
                for samples in traces:
                    samples = np.asarray(samples, dtype=SAMPLE_DTYPE)
                    if n_samples is None:
                        n_samples = len(samples)
                    elif len(samples) != n_samples:
                        raise TraceIOError("traces in one set must have equal length")
                    handle.write(samples.tobytes())
                    count += 1
            document = dict(metadata)
            document.update(
                {
                    "format_version": FORMAT_VERSION,
                    "dtype": "float32-le",
                    "layout": "trace-major",
                    "n_traces": count,
                    "n_samples": n_samples if n_samples is not None else 0,
                    "reference_samples": len(reference),
                }
            )
            TraceHandler.write_json(out / METADATA_FILE, document)
        except OSError as e:
            raise TraceIOError(f"cannot write trace set to {out}: {e}") from e
        logger.info("wrote %d traces to %s", count, out)
        return document

    @staticmethod
    def read_trace_set(path, mmap=True):
        """
        Read a trace set

        Args:
            path (str): Trace-set directory
            mmap (bool): Memory-map the traces instead of loading them

        Returns:
            TraceFileSet: Metadata, reference burst and trace matrix

        Raises:
            TraceIOError: Missing files, bad metadata or size mismatch
        """
        root = Path(path)
        try:
            metadata = json.loads((root / METADATA_FILE).read_text())
        except (OSError, ValueError) as e:
            raise TraceIOError(f"cannot read trace-set metadata in {root}: {e}") from e
        try:
            n_traces = int(metadata["n_traces"])
            n_samples = int(metadata["n_samples"])
            if len(metadata["wall_clocks"]) != n_traces:
                raise TraceIOError("metadata wall clock count does not match n_traces")
            reference = np.fromfile(root / REFERENCE_FILE, dtype=SAMPLE_DTYPE)
            if len(reference) != int(metadata["reference_samples"]):
                raise TraceIOError("reference burst size does not match the metadata")
            traces_path = root / TRACES_FILE
            expected = n_traces * n_samples * SAMPLE_DTYPE.itemsize
            if os.path.getsize(traces_path) != expected:
                raise TraceIOError(
                    f"{traces_path} holds {os.path.getsize(traces_path)} bytes, expected {expected}"
                )
            if n_traces == 0:
                traces = np.zeros((0, n_samples), dtype=SAMPLE_DTYPE)
            elif mmap:
                traces = np.memmap(traces_path, dtype=SAMPLE_DTYPE, mode="r", shape=(n_traces, n_samples))
            else:
                traces = np.fromfile(traces_path, dtype=SAMPLE_DTYPE).reshape(n_traces, n_samples)
        except KeyError as e:
            raise TraceIOError(f"trace-set metadata lacks {e}") from e
        except OSError as e:
            raise TraceIOError(f"cannot read trace set {root}: {e}") from e
        return TraceFileSet(metadata, reference, traces)

    @staticmethod
    def get_trace_set_info(path):
        """
        Get basic information about a trace set

        Args:
            path (str): Trace-set directory

        Returns:
            dict: Counts, rates, wavelength and on-disk size, or {"error": ...}
        """
        try:
            fileset = TraceHandler.read_trace_set(path)
        except TraceIOError as e:
            return {"error": str(e)}
        meta = fileset.metadata
        size = os.path.getsize(Path(path) / TRACES_FILE)
        return {
            "n_traces": meta["n_traces"],
            "n_samples": meta["n_samples"],
            "sample_rate": meta["sample_rate"],
            "wavelength": meta["wavelength"],
            "duration": meta["n_samples"] / meta["sample_rate"],
            "file_size_mb": size / (1024 * 1024),
            "config_hash": meta.get("config_hash"),
        }

    @staticmethod
    def save_output_path(input_path, suffix="_analysis"):
        """
        Generate an output path next to an input path

        Args:
            input_path (str): Path of the input trace set
            suffix (str): Suffix to add to the name

        Returns:
            str: Output path
        """
        path = Path(input_path)
        return str(path.parent / (path.name + suffix))

    @staticmethod
    def write_json(path, document):
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
        except OSError as e:
            raise TraceIOError(f"cannot write {path}: {e}") from e

    @staticmethod
    def write_csv(path, header, rows):
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as e:
            raise TraceIOError(f"cannot write {path}: {e}") from e

    @staticmethod
    def load_reference_curve(path):
        """
        Read a two-column reference dispersion file (nm, ps/nm/km)

        Args:
            path (str): Whitespace- or comma-separated text file, '#' comments

        Returns:
            ReferenceCurve: Sorted reference curve
        """
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise TraceIOError(f"cannot read reference curve {path}: {e}") from e
        rows = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].replace(",", " ").strip()
            if line:
                try:
                    rows.append([float(v) for v in line.split()[:2]])
                except ValueError as e:
                    raise TraceIOError(f"bad row in reference curve {path}: {line!r}") from e
        data = np.array(rows, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2 or len(data) < 2:
            raise TraceIOError(f"reference curve {path} needs at least two (nm, D) rows")
        return ReferenceCurve(data[:, 0], data[:, 1])
