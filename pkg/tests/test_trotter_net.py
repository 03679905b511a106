from __future__ import annotations

import sys
import unittest
from pathlib import Path

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.models import ModelSpec, model_gate
from src.trotter_net import (
    ThetaTensor,
    ThetaValidationError,
    build_theta,
    lock_convention,
    split_gate,
    theta_row_operator,
    validate_theta_row,
)
from src.tensor_core import DenseTensor


class SplitGateTests(unittest.TestCase):
    def test_reconstructs_gate(self):
        g = model_gate(ModelSpec.ising(0.5), 0.1)
        split = split_gate(g)
        np.testing.assert_allclose(split.reconstruct(), g.tensor, atol=1e-14)
        self.assertLessEqual(split.rank, 4)

    def test_identity_gate_has_rank_one(self):
        split = split_gate(model_gate(ModelSpec.zero(), 0.1))
        self.assertEqual(split.rank, 1)


class BuildThetaTests(unittest.TestCase):
    def test_shape_and_legs(self):
        theta = build_theta(ModelSpec.ising(0.5), 1e-2)
        self.assertEqual(theta.data.legs, ("alpha", "up", "down", "beta"))
        self.assertEqual(theta.vertical_dim, 4)
        self.assertEqual(theta.array.shape, (theta.rank, 4, 4, theta.rank))

    def test_zero_hamiltonian_theta_is_identity(self):
        theta = build_theta(ModelSpec.zero(), 0.1)
        self.assertEqual(theta.rank, 1)
        np.testing.assert_allclose(theta.array[0, :, :, 0], np.eye(4), atol=1e-14)

    def test_non_positive_tau_rejected(self):
        with self.assertRaises(ValueError):
            build_theta(ModelSpec.xy(), 0.0)

    def test_unknown_convention(self):
        with self.assertRaises(ValueError):
            build_theta(ModelSpec.xy(), 0.1, convention="sideways")


class ThetaRowTests(unittest.TestCase):
    def test_rows_match_dense_layer(self):
        for model in (ModelSpec.ising(0.5), ModelSpec.xy()):
            for tau in (1e-2, 1e-3, 1e-4):
                theta = build_theta(model, tau, validate=False)
                with self.subTest(model=model.label, tau=tau):
                    self.assertLessEqual(validate_theta_row(theta, 4), 1e-12)

    def test_row_error_against_squared_half_step_is_third_order(self):
        model = ModelSpec.ising(0.5)
        errors = []
        for tau in (0.02, 0.01):
            full = theta_row_operator(build_theta(model, tau, validate=False), 2)
            half = theta_row_operator(build_theta(model, tau / 2, validate=False), 2)
            errors.append(np.linalg.norm(full - half @ half))
        self.assertAlmostEqual(errors[0] / errors[1], 8.0, delta=0.6)

    def test_sign_flip_is_detected(self):
        theta = build_theta(ModelSpec.ising(0.5), 1e-2)
        corrupted = theta.array.copy()
        corrupted[1] *= -1.0
        broken = ThetaTensor(DenseTensor(corrupted, theta.data.legs), theta.tau, theta.model)
        self.assertGreater(validate_theta_row(broken, 2), 1e-6)

    def test_bond_gauge_leaves_the_row_unchanged(self):
        theta = build_theta(ModelSpec.ising(0.5), 0.1)
        gauge = np.eye(theta.rank) + 0.3 * np.random.default_rng(1).standard_normal((theta.rank, theta.rank))
        gauged = np.einsum("xa,audb,by->xudy", np.linalg.inv(gauge), theta.array, gauge)
        self.assertGreater(np.max(np.abs(gauged - theta.array)), 1e-3)
        np.testing.assert_allclose(theta_row_operator(gauged, 4), theta_row_operator(theta, 4), atol=1e-12)

    def test_single_column_row(self):
        theta = build_theta(ModelSpec.xy(), 0.1)
        operator = theta_row_operator(theta, 1)
        self.assertEqual(operator.shape, (4, 4))

    def test_odd_column_count_rejected(self):
        theta = build_theta(ModelSpec.xy(), 0.1)
        with self.assertRaises(ValueError):
            validate_theta_row(theta, 3)

    def test_standard_convention_locks_first(self):
        convention, deviation = lock_convention(ModelSpec.xy(), 0.05)
        self.assertEqual(convention, "standard")
        self.assertLessEqual(deviation, 1e-12)

    def test_reversed_time_row_is_transposed(self):
        model = ModelSpec.ising(0.5, field_splitting="left")
        standard = theta_row_operator(build_theta(model, 0.1), 2)
        reversed_row = theta_row_operator(build_theta(model, 0.1, convention="reversed_time", validate=False), 2)
        np.testing.assert_allclose(reversed_row, standard.T, atol=1e-12)

    def test_swapped_split_fails_for_asymmetric_bond(self):
        with self.assertRaises(ThetaValidationError):
            build_theta(ModelSpec.ising(0.5, field_splitting="left"), 0.1, convention="swapped_split")


if __name__ == "__main__":
    unittest.main()
