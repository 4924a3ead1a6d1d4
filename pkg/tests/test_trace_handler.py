import os
import tempfile
import unittest

import numpy as np

from utils.error_handling import TraceIOError
from utils.trace_handler import TraceHandler


class TestTraceHandler(unittest.TestCase):
    """Test cases for trace-set and report files"""

    def setUp(self):
        """Set up test environment"""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.set_dir = os.path.join(self.temp_dir.name, "set")
        rng = np.random.default_rng(6)
        self.traces = rng.normal(size=(3, 50)).astype(np.float32)
        self.reference = rng.random(50).astype(np.float32)
        self.metadata = {
            "sample_rate": 40e9,
            "bit_rate": 10e9,
            "prbs_order": 7,
            "wavelength": 1550.0,
            "wall_clocks": [0.0, 1.0, 2.0],
            "config_hash": "abc",
        }

    def tearDown(self):
        """Clean up after tests"""
        self.temp_dir.cleanup()

    def test_write_then_read(self):
        document = TraceHandler.write_trace_set(self.set_dir, self.metadata, self.reference, iter(self.traces))
        self.assertEqual(document["n_traces"], 3)
        self.assertEqual(os.path.getsize(os.path.join(self.set_dir, "traces.f32")), 3 * 50 * 4)
        fileset = TraceHandler.read_trace_set(self.set_dir)
        np.testing.assert_array_equal(fileset.traces, self.traces)
        np.testing.assert_array_equal(fileset.reference, self.reference)
        traces = fileset.to_traces()
        self.assertEqual([t.wall_clock for t in traces], [0.0, 1.0, 2.0])
        self.assertEqual(traces[0].waveform.sample_rate, 40e9)

    def test_info(self):
        TraceHandler.write_trace_set(self.set_dir, self.metadata, self.reference, self.traces)
        info = TraceHandler.get_trace_set_info(self.set_dir)
        self.assertEqual(info["n_traces"], 3)
        self.assertEqual(info["config_hash"], "abc")
        self.assertIn("error", TraceHandler.get_trace_set_info(self.temp_dir.name))

    def test_truncated_traces(self):
        TraceHandler.write_trace_set(self.set_dir, self.metadata, self.reference, self.traces)
        path = os.path.join(self.set_dir, "traces.f32")
        with open(path, "r+b") as handle:
            handle.truncate(100)
        with self.assertRaises(TraceIOError):
            TraceHandler.read_trace_set(self.set_dir)

    def test_wall_clock_count_mismatch(self):
        self.metadata["wall_clocks"] = [0.0]
        TraceHandler.write_trace_set(self.set_dir, self.metadata, self.reference, self.traces)
        with self.assertRaises(TraceIOError):
            TraceHandler.read_trace_set(self.set_dir)

    def test_unequal_trace_lengths(self):
        with self.assertRaises(TraceIOError):
            TraceHandler.write_trace_set(
                self.set_dir, self.metadata, self.reference, [np.zeros(5), np.zeros(6)]
            )

    def test_missing_set(self):
        with self.assertRaises(TraceIOError):
            TraceHandler.read_trace_set(os.path.join(self.temp_dir.name, "nowhere"))

    def test_output_path(self):
        self.assertEqual(TraceHandler.save_output_path("/data/run1"), "/data/run1_analysis")

    def test_reference_curve(self):
        path = os.path.join(self.temp_dir.name, "ref.txt")
        with open(path, "w") as handle:
            handle.write("# nm, ps/nm/km\n1560, 17.08\n1540 15.92\n")
        curve = TraceHandler.load_reference_curve(path)
        np.testing.assert_allclose(curve.wavelengths, [1540.0, 1560.0])
        np.testing.assert_allclose(curve.dispersion, [15.92, 17.08])

    def test_bad_reference_curve(self):
        path = os.path.join(self.temp_dir.name, "ref.txt")
        with open(path, "w") as handle:
            handle.write("1550 sixteen\n")
        with self.assertRaises(TraceIOError):
            TraceHandler.load_reference_curve(path)
        with open(path, "w") as handle:
            handle.write("1550 16.5\n")
        with self.assertRaises(TraceIOError):
            TraceHandler.load_reference_curve(path)


if __name__ == '__main__':
    unittest.main()
