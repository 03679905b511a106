"""Self-checks behind the ``validate`` subcommand.

Each check compares one piece of the pipeline against an independent oracle
and records pass/fail with a short detail string. A check that raises counts
as a failure; the suite always runs to the end.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .analysis import convergence_order
from .boundary_mps import power_converge
from .ed_oracle import dense_hamiltonian, free_energy_ed, trotter_free_energy_dense
from .exact_solutions import baseline_for, ising_free_energy, xy_free_energy
from .finetune import gradient
from .logger import get_logger
from .models import ModelSpec
from .tailoring import TailoredEnsemble, free_energy, scissor_and_stitch
from .tensor_core import DenseTensor, svd_truncated
from .trotter_net import build_theta, validate_theta_row

logger = get_logger("validation")

THETA_TAUS = (1e-2, 1e-3, 1e-4)
THETA_COLUMNS = 4
GRADIENT_TOLERANCE = 1e-6
TAILORED_TAUS = (0.1, 0.05, 0.025)
TROTTER_ORDER_RANGE = (1.8, 2.2)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class ValidationReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(c.name, c.passed, c.detail, c.seconds) for c in self.checks],
            columns=["check", "passed", "detail", "seconds"],
        )


def _svd_oracle() -> Tuple[bool, str]:
    rng = np.random.default_rng(11)
    array = rng.standard_normal((3, 4, 5))
    tensor = DenseTensor(array, ("i", "j", "k"))
    result = svd_truncated(tensor, ["i", "j"], ["k"], max_rank=5)
    rebuilt = np.einsum("ija,a,ak->ijk", result.left_factor.data, result.singular_values, result.right_factor.data)
    error = float(np.max(np.abs(rebuilt - array)))
    return error < 1e-12, f"reconstruction error {error:.2e}"


def _theta_rows(model: ModelSpec) -> Tuple[bool, str]:
    deviations = [
        validate_theta_row(build_theta(model, tau, validate=False), THETA_COLUMNS) for tau in THETA_TAUS
    ]
    worst = max(deviations)
    return worst <= 1e-12, f"worst row deviation {worst:.2e}"


def random_ensemble(chi: int, K: int, tau: float = 0.1, seed: int = 5) -> TailoredEnsemble:
    """Positive random boundaries around an Ising Theta; small enough for finite differences."""
    rng = np.random.default_rng(seed)
    theta = build_theta(ModelSpec.ising(0.5), tau, validate=False)
    r = theta.rank
    A = rng.uniform(0.5, 1.5, size=(chi, r, chi))
    B = rng.uniform(0.5, 1.5, size=(chi, r, chi))
    return TailoredEnsemble(A=A, B=B, theta=theta, K=K, tau=tau)


def gradient_mismatch(e: TailoredEnsemble) -> float:
    """Largest relative analytic-vs-central-difference error over entries with |g| > 1e-10."""
    analytic = gradient(e, "analytic")
    numeric = gradient(e, "finite_difference_debug")
    worst = 0.0
    for exact, approx in zip(analytic, numeric):
        mask = np.abs(exact) > 1e-10
        if np.any(mask):
            worst = max(worst, float(np.max(np.abs(exact[mask] - approx[mask]) / np.abs(exact[mask]))))
    return worst


def _gradient_check() -> Tuple[bool, str]:
    worst = gradient_mismatch(random_ensemble(chi=3, K=7))
    return worst <= GRADIENT_TOLERANCE, f"max relative error {worst:.2e}"


def _ed_against_exact(model: ModelSpec) -> Tuple[bool, str]:
    baseline = baseline_for(model)
    T = 0.5
    errors = [abs(free_energy_ed(dense_hamiltonian(model, n), T) - baseline.f_exact(T)) for n in (6, 8, 10)]
    significant = [error for error in errors if error > 1e-12]
    monotone = all(later < earlier for earlier, later in zip(significant, significant[1:]))
    return monotone and errors[-1] < 1e-3, "errors " + ", ".join(f"{e:.2e}" for e in errors)


def _trotter_order() -> Tuple[bool, str]:
    model = ModelSpec.ising(0.5)
    chain = dense_hamiltonian(model, 8)
    beta = 2.0
    exact = free_energy_ed(chain, 1.0 / beta)
    errors = [
        abs(trotter_free_energy_dense(model, 8, tau, int(round(beta / tau))) - exact) for tau in (0.1, 0.05)
    ]
    ratio = errors[0] / errors[1]
    return 3.0 < ratio < 5.0, f"error ratio on halving tau {ratio:.2f}"


def tailored_free_energies(model: ModelSpec, beta: float, taus: Sequence[float], chi: int) -> List[float]:
    """Un-tuned tailored f at each Trotter slice, each with its own converged boundaries."""
    values = []
    for tau in taus:
        theta = build_theta(model, tau)
        boundary = power_converge(theta, chi, seed=0)
        values.append(free_energy(scissor_and_stitch(boundary.L, boundary.R, theta, beta, tau)).f)
    return values


def _tailored_trotter_order() -> Tuple[bool, str]:
    values = tailored_free_energies(ModelSpec.ising(1.0), 1.0, TAILORED_TAUS, chi=4)
    order = convergence_order(TAILORED_TAUS, values)
    low, high = TROTTER_ORDER_RANGE
    return low <= order <= high, f"order {order:.3f} from successive differences"


def _zero_model() -> Tuple[bool, str]:
    theta = build_theta(ModelSpec.zero(), 0.1)
    ones = np.ones((1, 1, 1))
    report = free_energy(TailoredEnsemble(A=ones, B=ones, theta=theta, K=40, tau=0.1))
    expected = -np.log(2.0) / report.beta
    error = abs(report.f - expected)
    return error < 1e-14, f"|f + T ln 2| = {error:.2e}"


def _analytic_limits() -> Tuple[bool, str]:
    T = 0.7
    classical = -T * np.log(2 * np.cosh(0.25 / T))
    ising_error = abs(ising_free_energy(0.0, T) - classical)
    zone_error = abs(xy_free_energy(T, zone="half") - xy_free_energy(T, zone="full"))
    return max(ising_error, zone_error) < 1e-13, f"h=0 error {ising_error:.1e}, zone error {zone_error:.1e}"


def checks() -> List[Tuple[str, Callable[[], Tuple[bool, str]]]]:
    return [
        ("tensor_core.svd_reconstruction", _svd_oracle),
        ("trotter_net.theta_row.ising", lambda: _theta_rows(ModelSpec.ising(0.5))),
        ("trotter_net.theta_row.xy", lambda: _theta_rows(ModelSpec.xy())),
        ("finetune.gradient_vs_finite_difference", _gradient_check),
        ("tailoring.zero_hamiltonian", _zero_model),
        ("tailoring.trotter_order", _tailored_trotter_order),
        ("exact_solutions.closed_forms", _analytic_limits),
        ("ed_oracle.trotter_order", _trotter_order),
        ("ed_oracle.ising_vs_exact", lambda: _ed_against_exact(ModelSpec.ising(0.5))),
        ("ed_oracle.xy_vs_exact", lambda: _ed_against_exact(ModelSpec.xy())),
    ]


def validate_all() -> ValidationReport:
    report = ValidationReport()
    for name, check in checks():
        start = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        seconds = time.perf_counter() - start
        report.checks.append(CheckResult(name, bool(passed), detail, seconds))
        log = logger.info if passed else logger.error
        log("%s %s (%s, %.2fs)", "PASS" if passed else "FAIL", name, detail, seconds)
    return report
