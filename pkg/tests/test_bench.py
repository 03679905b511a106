from __future__ import annotations

import json
import math
import sys
import tempfile
import threading
import unittest
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src import __version__
from src.bench import (
    CSV_COLUMNS,
    BoundaryCache,
    _reference,
    boundary_key,
    grid_points,
    records_frame,
    run_point,
    sweep,
    write_csv,
)
from src.boundary_mps import power_converge
from src.config import ConfigError, ExperimentConfig
from src.finetune import load_checkpoint
from src.models import ModelSpec
from src.trotter_net import build_theta


def zero_config(**values: str) -> ExperimentConfig:
    base = {"model": "zero", "tau": "0.1", "beta": "2.0", "chi": "2", "finetune": "off"}
    base.update(values)
    return ExperimentConfig.from_mapping(base)


class RunPointTests(unittest.TestCase):
    def test_zero_hamiltonian_is_exact(self):
        record = run_point(zero_config(), 2.0)
        self.assertEqual(record.status, "ok")
        self.assertEqual(record.K, 20)
        self.assertAlmostEqual(record.f, -np.log(2) / 2.0, places=14)
        self.assertLessEqual(record.delta_f, 1e-12)
        self.assertEqual(record.code_version, __version__)

    def test_finetune_on_a_flat_landscape_converges(self):
        record = run_point(zero_config(finetune="on"), 2.0)
        self.assertEqual(record.finetune_status, "converged")
        self.assertEqual(record.steps, 0)
        self.assertLessEqual(record.delta_f, 1e-12)

    def test_failures_become_records(self):
        record = run_point(zero_config(model="ising:h=0.5", boundary_max_iters="1"), 2.0)
        self.assertEqual(record.status, "failed")
        self.assertRegex(record.error, "ConvergenceError|DegenerateSpectrumError")
        self.assertTrue(math.isnan(record.f))

    def test_unknown_model_becomes_failed_record(self):
        record = run_point(zero_config(model="heisenberg"), 2.0)
        self.assertEqual(record.status, "failed")
        self.assertEqual(record.model, "heisenberg")

    def test_missing_custom_file_becomes_failed_record(self):
        record = run_point(zero_config(model="custom:/nonexistent/bond.npy"), 2.0)
        self.assertEqual(record.status, "failed")
        self.assertRegex(record.error, "^ModelError")

    def test_trace_and_checkpoint_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = zero_config(finetune="on", trace_out=f"{tmp}/traces", checkpoint_dir=f"{tmp}/points")
            record = run_point(config, 2.0)
            trace = pd.read_csv(Path(tmp) / "traces" / "trace-chi2-beta2.csv")
            checkpoint = Path(tmp) / "points" / "chi2-beta2"
            self.assertTrue((checkpoint / "A.npz").exists())
            self.assertTrue((checkpoint / "B.npz").exists())

            resumed_config = config.with_overrides(resume=True)
            with mock.patch("src.bench.load_checkpoint", wraps=load_checkpoint) as loader:
                resumed = run_point(resumed_config, 2.0)
        self.assertEqual(record.status, "ok")
        self.assertEqual(list(trace.columns), ["step", "f", "grad_norm", "seconds"])
        self.assertEqual(len(trace), record.steps + 1)
        loader.assert_called_once()
        self.assertEqual(resumed.status, "ok")
        self.assertAlmostEqual(resumed.f, record.f, places=14)

    def test_resume_needs_a_checkpoint_directory(self):
        with self.assertRaises(ConfigError):
            zero_config(finetune="on", resume="on")

    def test_custom_model_has_no_reference(self):
        custom = ModelSpec.custom(0.25 * np.diag([1.0, -1.0, -1.0, 1.0]), name="zz")
        self.assertTrue(math.isnan(_reference(custom, 2.0)))
        self.assertAlmostEqual(_reference(ModelSpec.zero(), 2.0), -np.log(2) / 2.0, places=15)


class BoundaryCacheTests(unittest.TestCase):
    def test_memory_and_disk_hits(self):
        theta = build_theta(ModelSpec.zero(), 0.1)
        with tempfile.TemporaryDirectory() as tmp:
            cache = BoundaryCache(tmp)
            first = cache.get_or_compute(theta, 4, 1e-12, 10, 0)
            second = cache.get_or_compute(theta, 4, 1e-12, 10, 0)
            self.assertFalse(first.hit)
            self.assertTrue(second.hit)
            self.assertEqual(second.seconds, 0.0)
            self.assertEqual(len(list(Path(tmp).glob("boundary-*.npz"))), 1)

            reloaded = BoundaryCache(tmp).get_or_compute(theta, 4, 1e-12, 10, 0)
        self.assertTrue(reloaded.hit)
        np.testing.assert_array_equal(reloaded.A, first.A)

    def test_distinct_keys_converge_concurrently(self):
        theta = build_theta(ModelSpec.zero(), 0.1)
        both_inside = threading.Barrier(2, timeout=10)

        def converge_when_both_arrive(*args, **kwargs):
            both_inside.wait()
            return power_converge(*args, **kwargs)

        cache = BoundaryCache()
        with mock.patch("src.bench.power_converge", side_effect=converge_when_both_arrive):
            with ThreadPoolExecutor(max_workers=2) as pool:
                futures = [pool.submit(cache.get_or_compute, theta, chi, 1e-12, 10, 0) for chi in (2, 3)]
                entries = [future.result() for future in futures]
        self.assertFalse(any(entry.hit for entry in entries))

    def test_same_key_is_converged_once(self):
        theta = build_theta(ModelSpec.zero(), 0.1)
        cache = BoundaryCache()
        with mock.patch("src.bench.power_converge", wraps=power_converge) as converge:
            with ThreadPoolExecutor(max_workers=4) as pool:
                entries = list(pool.map(lambda _: cache.get_or_compute(theta, 2, 1e-12, 10, 0), range(4)))
        self.assertEqual(converge.call_count, 1)
        self.assertEqual(sum(not entry.hit for entry in entries), 1)

    def test_key_depends_on_every_input(self):
        model = ModelSpec.ising(0.5)
        base = boundary_key(model, 1e-4, 20, 1e-12)
        self.assertNotEqual(base, boundary_key(ModelSpec.ising(0.4), 1e-4, 20, 1e-12))
        self.assertNotEqual(base, boundary_key(model, 1e-3, 20, 1e-12))
        self.assertNotEqual(base, boundary_key(model, 1e-4, 16, 1e-12))
        self.assertNotEqual(base, boundary_key(model, 1e-4, 20, 1e-10))


class SweepTests(unittest.TestCase):
    def test_grid_order(self):
        config = zero_config(chi="1,2", beta="1,2")
        self.assertEqual(grid_points(config), [(1, 1.0), (1, 2.0), (2, 1.0), (2, 2.0)])

    def test_parallel_sweep_keeps_order(self):
        config = zero_config(chi="1,2", beta="0.5,1,2", jobs="3")
        records = sweep(config)
        self.assertEqual([(r.chi, r.beta) for r in records], [(c, b) for c in (1, 2) for b in (0.5, 1.0, 2.0)])
        self.assertTrue(all(r.status == "ok" for r in records))

    def test_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "results" / "sweep.csv"
            json_out = Path(tmp) / "results" / "sweep.json"
            config = zero_config(beta="1,2", out=str(out), json_out=str(json_out))
            records = sweep(config)
            header = out.read_text().splitlines()[0]
            payload = json.loads(json_out.read_text())
        self.assertEqual(header, ",".join(CSV_COLUMNS))
        self.assertEqual(payload["code_version"], __version__)
        self.assertEqual(payload["config"]["model"], "zero")
        self.assertEqual(len(payload["records"]), len(records))
        self.assertEqual(payload["records"][0]["status"], "ok")
        summary = payload["summary"]
        self.assertEqual(len(summary["groups"]), 1)
        self.assertEqual(summary["groups"][0]["points"], 2)
        self.assertEqual(summary["time_ratios"][0]["chi"], 2)
        self.assertEqual(summary["time_ratios"][0]["beta_high"], 2.0)
        self.assertEqual(summary["time_ratios"][0]["beta_low"], 1.0)
        self.assertGreater(summary["time_ratios"][0]["ratio"], 0.0)

    def test_repeated_sweeps_are_bit_identical(self):
        config = ExperimentConfig.from_mapping(
            {"model": "ising:h=1.0", "tau": "0.1", "chi": "2", "beta": "1,2", "finetune": "on", "max_steps": "2"}
        )
        timings = ["boundary_s", "finetune_s", "eval_s", "total_s"]
        first = records_frame(sweep(config)).drop(columns=timings)
        second = records_frame(sweep(config)).drop(columns=timings)
        pd.testing.assert_frame_equal(first, second, check_exact=True)

    def test_failed_rows_are_kept(self):
        good = run_point(zero_config(), 2.0)
        bad = run_point(zero_config(model="heisenberg"), 2.0)
        frame = records_frame([good, bad])
        self.assertEqual(list(frame.columns), list(CSV_COLUMNS))
        self.assertTrue(math.isnan(frame["f"].iloc[1]))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv([good, bad], Path(tmp) / "rows.csv")
            self.assertEqual(len(path.read_text().splitlines()), 3)


if __name__ == "__main__":
    unittest.main()
