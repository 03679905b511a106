from __future__ import annotations

import sys
import unittest
from pathlib import Path

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.ed_oracle import dense_hamiltonian, free_energy_ed
from src.exact_solutions import (
    baseline_for,
    delta_f,
    exact_table,
    integrate,
    ising_energy,
    ising_free_energy,
    ising_ground_energy,
    xy_energy,
    xy_free_energy,
    xy_ground_energy,
)
from src.models import ModelError, ModelSpec


def beta_f_derivative(f_of_T, beta: float, step: float = 1e-4) -> float:
    upper, lower = beta + step, beta - step
    return (upper * f_of_T(1 / upper) - lower * f_of_T(1 / lower)) / (2 * step)


class QuadratureTests(unittest.TestCase):
    def test_polynomial(self):
        value, points = integrate(lambda x: x**2, 0.0, 1.0)
        self.assertAlmostEqual(value, 1.0 / 3.0, places=14)
        self.assertGreaterEqual(points, 4000)


class IsingTests(unittest.TestCase):
    def test_zero_field_is_classical(self):
        for T in (0.1, 0.7, 5.0):
            expected = -T * np.log(2 * np.cosh(0.25 / T))
            self.assertAlmostEqual(ising_free_energy(0.0, T), expected, places=13)

    def test_gapped_low_temperature_reaches_ground_energy(self):
        self.assertAlmostEqual(ising_free_energy(1.0, 0.01), ising_ground_energy(1.0), places=12)

    def test_energy_is_derivative_of_beta_f(self):
        for beta in (0.5, 2.0, 8.0):
            numeric = beta_f_derivative(lambda T: ising_free_energy(0.5, T), beta)
            self.assertAlmostEqual(ising_energy(0.5, 1 / beta), numeric, places=7)

    def test_entropy_is_positive(self):
        for T in (0.1, 1.0, 10.0):
            entropy = (ising_energy(0.5, T) - ising_free_energy(0.5, T)) / T
            self.assertGreater(entropy, 0.0)
            self.assertLess(entropy, np.log(2) + 1e-12)

    def test_free_energy_is_concave_in_temperature(self):
        temperatures = np.linspace(0.2, 2.0, 10)
        f = np.array([ising_free_energy(0.5, T) for T in temperatures])
        self.assertTrue(np.all(np.diff(f, 2) < 0))

    def test_matches_exact_diagonalization(self):
        chain = dense_hamiltonian(ModelSpec.ising(0.5), 10)
        self.assertLess(abs(free_energy_ed(chain, 1.0) - ising_free_energy(0.5, 1.0)), 1e-3)


class XYTests(unittest.TestCase):
    def test_zones_agree(self):
        for T in (0.05, 0.5, 3.0):
            self.assertAlmostEqual(xy_free_energy(T, zone="half"), xy_free_energy(T, zone="full"), places=12)

    def test_high_temperature(self):
        T = 1e4
        self.assertAlmostEqual(xy_free_energy(T) / (-T * np.log(2)), 1.0, places=8)

    def test_low_temperature(self):
        self.assertAlmostEqual(xy_ground_energy(), -1 / np.pi, places=15)
        self.assertLess(abs(xy_free_energy(1e-3) - xy_ground_energy()), 1e-5)

    def test_energy_is_derivative_of_beta_f(self):
        for beta in (0.5, 4.0):
            numeric = beta_f_derivative(xy_free_energy, beta)
            self.assertAlmostEqual(xy_energy(1 / beta), numeric, places=7)

    def test_matches_exact_diagonalization(self):
        chain = dense_hamiltonian(ModelSpec.xy(), 10)
        self.assertLess(abs(free_energy_ed(chain, 1.0) - xy_free_energy(1.0)), 1e-3)

    def test_unknown_zone(self):
        with self.assertRaises(ValueError):
            xy_free_energy(1.0, zone="quarter")


class BaselineTests(unittest.TestCase):
    def test_zero_model(self):
        baseline = baseline_for(ModelSpec.zero())
        self.assertAlmostEqual(baseline.f_exact(2.0), -2.0 * np.log(2), places=15)
        self.assertEqual(baseline.energy(2.0), 0.0)

    def test_custom_model_has_no_baseline(self):
        with self.assertRaises(ModelError):
            baseline_for(ModelSpec.custom(np.diag([1.0, -1.0, -1.0, 1.0])))

    def test_non_positive_temperature(self):
        with self.assertRaises(ValueError):
            baseline_for(ModelSpec.xy()).f_exact(0.0)

    def test_table(self):
        table = exact_table(ModelSpec.ising(0.5), [0.5, 1.0, 2.0])
        self.assertEqual(list(table.columns), ["T", "f_exact"])
        self.assertEqual(len(table), 3)


class RelativeErrorTests(unittest.TestCase):
    def test_relative(self):
        self.assertAlmostEqual(delta_f(-1.1, -1.0), 0.1, places=14)

    def test_zero_reference(self):
        with self.assertRaises(ValueError):
            delta_f(0.1, 0.0)


if __name__ == "__main__":
    unittest.main()
