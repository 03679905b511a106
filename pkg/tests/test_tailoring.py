from __future__ import annotations

import sys
import unittest
from pathlib import Path

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.boundary_mps import power_converge
from src.exact_solutions import delta_f, ising_free_energy
from src.models import ModelSpec, model_gate
from src.tailoring import (
    TailoredEnsemble,
    TraceSignError,
    channel_matrix,
    free_energy,
    log_trace_power,
    matrix_power_scaled,
    overlap_matrix,
    scissor_and_stitch,
    thermal_energy,
)
from src.tensor_core import ContractionError
from src.trotter_net import build_theta, split_gate

X_STATES = (np.array([1.0, 1.0]) / np.sqrt(2), np.array([1.0, -1.0]) / np.sqrt(2))


def classical_boundaries(tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact boundaries of the zero-field Ising network, diagonal in the S^x basis."""
    split = split_gate(model_gate(ModelSpec.ising(0.0), tau))
    r = split.rank
    A = np.zeros((2, r, 2))
    B = np.zeros((2, r, 2))
    for a, x in enumerate(X_STATES):
        A[a, :, a] = np.einsum("s,spb,p->b", x, split.vL.data, x)
        B[a, :, a] = np.einsum("s,spb,p->b", x, split.vR.data, x)
    return A, B


def random_ensemble(model: ModelSpec, tau: float, K: int, chi: int = 2, seed: int = 0) -> TailoredEnsemble:
    theta = build_theta(model, tau)
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.5, 1.0, size=(chi, theta.rank, chi))
    B = rng.uniform(0.5, 1.0, size=(chi, theta.rank, chi))
    A[:, 1:, :] *= 0.1
    B[:, 1:, :] *= 0.1
    return TailoredEnsemble(A=A, B=B, theta=theta, K=K, tau=tau)


class ScissorTests(unittest.TestCase):
    def test_layer_count_is_rounded(self):
        theta = build_theta(ModelSpec.xy(), 0.3)
        ones = np.ones((1, theta.rank, 1))
        ensemble = scissor_and_stitch(ones, ones, theta, beta_target=1.0, tau=0.3)
        self.assertEqual(ensemble.K, 3)
        self.assertAlmostEqual(ensemble.beta, 0.9, places=14)

    def test_production_depths(self):
        theta = build_theta(ModelSpec.zero(), 1e-4)
        ones = np.ones((1, 1, 1))
        self.assertEqual(scissor_and_stitch(ones, ones, theta, 100.0, 1e-4).K, 1_000_000)
        self.assertEqual(scissor_and_stitch(ones, ones, theta, 32.0, 1e-4).K, 320_000)

    def test_beta_below_one_slice(self):
        theta = build_theta(ModelSpec.xy(), 0.3)
        ones = np.ones((1, theta.rank, 1))
        with self.assertRaises(ValueError):
            scissor_and_stitch(ones, ones, theta, beta_target=0.1, tau=0.3)

    def test_ensemble_validation(self):
        theta = build_theta(ModelSpec.xy(), 0.1)
        good = np.ones((1, theta.rank, 1))
        bad = np.ones((1, theta.rank + 1, 1))
        with self.assertRaises(ContractionError):
            TailoredEnsemble(A=bad, B=good, theta=theta, K=3, tau=0.1)
        with self.assertRaises(ValueError):
            TailoredEnsemble(A=good, B=good, theta=theta, K=0, tau=0.1)

    def test_matrix_sizes(self):
        ensemble = random_ensemble(ModelSpec.ising(0.5), 0.1, K=4, chi=3)
        self.assertEqual(channel_matrix(ensemble).shape, (36, 36))
        self.assertEqual(overlap_matrix(ensemble).shape, (9, 9))


class LogTraceTests(unittest.TestCase):
    def test_identity(self):
        value, sign = log_trace_power(np.eye(3), 5)
        self.assertAlmostEqual(value, np.log(3), places=14)
        self.assertEqual(sign, 1)

    def test_dominant_and_subleading(self):
        value, _ = log_trace_power(np.diag([2.0, 1.0]), 50)
        self.assertAlmostEqual(value, 50 * np.log(2) + np.log1p(2.0**-50), places=12)

    def test_matches_direct_power(self):
        rng = np.random.default_rng(3)
        m = rng.uniform(0.0, 1.0, size=(4, 4))
        value, _ = log_trace_power(m, 7)
        self.assertAlmostEqual(value, np.log(np.trace(np.linalg.matrix_power(m, 7))), places=11)

    def test_million_layers_without_overflow(self):
        m = np.array([[1.0, 0.5], [0.5, 1.0]])
        value, _ = log_trace_power(m, 10**6)
        self.assertAlmostEqual(value / (10**6 * np.log(1.5)), 1.0, places=12)

    def test_negative_trace(self):
        with self.assertRaises(TraceSignError):
            log_trace_power(np.array([[-1.0]]), 1)
        value, sign = log_trace_power(np.array([[-1.0]]), 1, allow_negative=True)
        self.assertEqual(sign, -1)
        self.assertEqual(value, 0.0)

    def test_zero_matrix(self):
        with self.assertRaises(TraceSignError):
            log_trace_power(np.zeros((2, 2)), 3)

    def test_zeroth_power_is_identity(self):
        power = matrix_power_scaled(np.diag([3.0, 4.0]), 0)
        np.testing.assert_array_equal(power.value(), np.eye(2))

    def test_non_square(self):
        with self.assertRaises(ContractionError):
            matrix_power_scaled(np.ones((2, 3)), 2)


class FreeEnergyTests(unittest.TestCase):
    def test_zero_hamiltonian(self):
        theta = build_theta(ModelSpec.zero(), 0.1)
        boundary = power_converge(theta, chi=4)
        for beta in (0.5, 2.0, 40.0):
            ensemble = scissor_and_stitch(boundary.L, boundary.R, theta, beta, 0.1)
            report = free_energy(ensemble)
            self.assertAlmostEqual(report.f, -np.log(2) / ensemble.beta, places=13)

    def test_invariant_under_boundary_scale(self):
        ensemble = random_ensemble(ModelSpec.ising(1.0), 0.1, K=12)
        scaled = ensemble.with_tensors(3.0 * ensemble.A, 0.25 * ensemble.B)
        self.assertAlmostEqual(free_energy(scaled).f, free_energy(ensemble).f, places=12)

    def test_invariant_under_gauge(self):
        ensemble = random_ensemble(ModelSpec.ising(1.0), 0.1, K=12)
        rng = np.random.default_rng(9)
        g = np.eye(2) + 0.2 * rng.standard_normal((2, 2))
        g_inv = np.linalg.inv(g)
        A = np.einsum("ab,bpc,cd->apd", g, ensemble.A, g_inv)
        B = np.einsum("ab,bpc,cd->apd", g_inv, ensemble.B, g)
        gauged = ensemble.with_tensors(A, B)
        self.assertAlmostEqual(free_energy(gauged).f, free_energy(ensemble).f, places=11)

    def test_classical_chain_is_exact_for_every_depth(self):
        tau = 0.01
        A, B = classical_boundaries(tau)
        theta = build_theta(ModelSpec.ising(0.0), tau)
        for K in (1, 10, 100, 1000):
            ensemble = TailoredEnsemble(A=A, B=B, theta=theta, K=K, tau=tau)
            beta = ensemble.beta
            report = free_energy(ensemble)
            with self.subTest(K=K):
                self.assertAlmostEqual(report.f, -np.log(2 * np.cosh(beta / 4)) / beta, places=12)

    def test_classical_chain_energy(self):
        tau = 0.01
        A, B = classical_boundaries(tau)
        theta = build_theta(ModelSpec.ising(0.0), tau)
        ensemble = TailoredEnsemble(A=A, B=B, theta=theta, K=200, tau=tau)
        energy = thermal_energy(ensemble, delta_layers=1)
        self.assertAlmostEqual(energy, -0.25 * np.tanh(ensemble.beta / 4), places=5)

    def test_report_partition_function(self):
        report = free_energy(random_ensemble(ModelSpec.xy(), 0.1, K=5))
        self.assertAlmostEqual(report.log_partition(10), 5 * report.log_lambda, places=12)
        self.assertAlmostEqual(report.f, -report.log_z_per_site / report.beta, places=14)
        self.assertEqual(report.as_dict()["K"], 5)

    def test_energy_stencil_too_small(self):
        ensemble = random_ensemble(ModelSpec.xy(), 0.1, K=1)
        with self.assertRaises(ValueError):
            thermal_energy(ensemble, delta_layers=1)
        with self.assertRaises(ValueError):
            thermal_energy(ensemble.with_layers(5), delta_layers=0)


class PipelineTests(unittest.TestCase):
    def test_converged_boundaries_give_the_exact_free_energy(self):
        tau, beta, h = 0.05, 4.0, 1.0
        theta = build_theta(ModelSpec.ising(h), tau)
        boundary = power_converge(theta, 4, seed=0)
        report = free_energy(scissor_and_stitch(boundary.L, boundary.R, theta, beta, tau))
        self.assertEqual(report.K, 80)
        self.assertLess(delta_f(report.f, ising_free_energy(h, 1.0 / beta)), 1e-2)


if __name__ == "__main__":
    unittest.main()
