"""Fine-tuning of the boundary tensors at the target temperature.

The free energy of a tailored ensemble is

    f(A, B) = -(ln Tr M^K - ln Tr m^K) / (2 beta)

and both traces are K-fold products of matrices linear in A and in B, so

    d ln Tr M^K / dM = K (M^(K-1))^T / Tr M^K

contracted with dM/dA (or dM/dB) gives the exact gradient. M^(K-1) comes from
the same scaled binary exponentiation used for the traces.

f does not change when A or B is rescaled or gauge transformed, and with
independent boundaries it is not bounded in either direction. The default
``newton`` method therefore looks for a stationary point: it solves
H d = -g with MINRES on Hessian-vector products from central differences of
the analytic gradient, restricted to moves that keep |A| and |B| fixed, and
accepts a step only if the stationarity residual

    rho = 2 tau sqrt(|A|^2 |g_A|^2 + |B|^2 |g_B|^2)

goes down. rho does not depend on the scale of A or B. The ``gradient``
method moves along g with a fixed learning rate. Both return the iterate
with the smallest rho seen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from opt_einsum import contract
from scipy.sparse.linalg import LinearOperator, minres

from .boundary_mps import UniformMPS, canonicalize
from .config import FineTuneConfig
from .logger import get_logger
from .tailoring import (
    SITES_PER_COLUMN,
    TailoredEnsemble,
    TraceSignError,
    channel_matrix,
    free_energy,
    matrix_power_scaled,
    overlap_matrix,
)
from .tensor_core import DenseTensor, NumericalError, load_tensor, save_tensor

logger = get_logger("finetune")

FD_STEP = 1e-6
HVP_STEP = 1e-5
NEWTON_MAX_STEP = 0.25
TRACE_STATUSES = ("converged", "max_steps", "stalled")
MAX_BACKTRACKS = 20


class DivergenceError(NumericalError):
    """Raised when an update produces non-finite tensors or runs away in f."""


@dataclass
class TraceRecord:
    step: int
    f: float
    grad_norm: float
    seconds: float


@dataclass
class FineTuneTrace:
    records: List[TraceRecord] = field(default_factory=list)
    status: str = "max_steps"
    best_step: int = 0

    @property
    def steps(self) -> int:
        """Productive update steps taken (the initial evaluation is step 0)."""
        return max(0, len(self.records) - 1)

    @property
    def f_values(self) -> np.ndarray:
        return np.array([record.f for record in self.records])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([record.grad_norm for record in self.records])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.step, r.f, r.grad_norm, r.seconds) for r in self.records],
            columns=["step", "f", "grad_norm", "seconds"],
        )

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


def _log_trace_gradient(matrix: np.ndarray, K: int) -> np.ndarray:
    """d ln Tr(matrix^K) / d matrix."""
    power = matrix_power_scaled(matrix, K - 1).matrix
    scaled_trace = float(np.sum(power * matrix.T))
    if scaled_trace <= 0:
        raise TraceSignError(f"Tr m^{K} is not positive while differentiating.")
    return K * power.T / scaled_trace


def _analytic_gradient(e: TailoredEnsemble) -> Tuple[np.ndarray, np.ndarray]:
    A, B, theta = e.A, e.B, e.theta.array
    chi_a, chi_b, d2 = A.shape[0], B.shape[0], theta.shape[1]

    env = _log_trace_gradient(channel_matrix(e), e.K).reshape(chi_a, d2, chi_b, chi_a, d2, chi_b)
    num_a = contract("aubcde,pudq,bqe->apc", env, theta, B)
    num_b = contract("aubcde,apc,pudq->bqe", env, A, theta)

    env = _log_trace_gradient(overlap_matrix(e), e.K).reshape(chi_a, chi_b, chi_a, chi_b)
    den_a = np.einsum("abcd,bpd->apc", env, B)
    den_b = np.einsum("abcd,apc->bpd", env, A)

    scale = -1.0 / (SITES_PER_COLUMN * e.beta)
    return scale * (num_a - den_a), scale * (num_b - den_b)


def _finite_difference_gradient(e: TailoredEnsemble, step: float = FD_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences entry by entry; for checking the analytic route only."""

    def partials(which: str) -> np.ndarray:
        base = e.A if which == "A" else e.B
        grad = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            values = []
            for sign in (1.0, -1.0):
                shifted = base.copy()
                shifted[index] += sign * step
                tensors = (shifted, e.B) if which == "A" else (e.A, shifted)
                values.append(free_energy(e.with_tensors(*tensors)).f)
            grad[index] = (values[0] - values[1]) / (2 * step)
        return grad

    return partials("A"), partials("B")


def gradient(e: TailoredEnsemble, grad_mode: str = "analytic") -> Tuple[np.ndarray, np.ndarray]:
    """df/dA and df/dB, shaped like A and B."""
    if grad_mode == "analytic":
        return _analytic_gradient(e)
    if grad_mode == "finite_difference_debug":
        return _finite_difference_gradient(e)
    raise ValueError(f"Unknown gradient mode {grad_mode!r}.")


def _max_norm(*arrays: np.ndarray) -> float:
    return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in arrays)


def gd_step(
    e: TailoredEnsemble,
    dA: np.ndarray,
    dB: np.ndarray,
    config: FineTuneConfig,
    eta: float | None = None,
) -> TailoredEnsemble:
    """Move A and B along the free-energy gradient.

    ``ascend_lambda`` steps against df (raising log lambda); ``ascend_f``
    steps along it. In ``gradient_normalized`` mode the step is
    (eta / K) * g / max|g| with g the pair (dA, dB).
    """
    if dA.shape != e.A.shape or dB.shape != e.B.shape:
        raise ValueError(
            f"Gradient shapes {dA.shape}, {dB.shape} do not match tensors {e.A.shape}, {e.B.shape}."
        )
    eta = config.eta if eta is None else eta
    if eta == 0:
        return e
    sign = -1.0 if config.direction == "ascend_lambda" else 1.0
    if config.step_mode == "gradient_normalized":
        norm = _max_norm(dA, dB)
        if norm == 0:
            return e
        factor = sign * eta / (e.K * norm)
    else:
        factor = sign * eta
    A = e.A + factor * dA
    B = e.B + factor * dB
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise DivergenceError("Gradient step produced non-finite boundary tensors.")
    return e.with_tensors(A, B)


def _update_masks(config: FineTuneConfig, step: int) -> Tuple[float, float]:
    """Weights on (A, B) moves; ``alternate`` moves A on odd steps and B on even ones."""
    if config.update != "alternate":
        return 1.0, 1.0
    return (1.0, 0.0) if step % 2 else (0.0, 1.0)


def stationarity_residual(e: TailoredEnsemble, grad_mode: str = "analytic") -> float:
    """2 tau sqrt(|A|^2 |g_A|^2 + |B|^2 |g_B|^2); zero exactly at a stationary point of f."""
    dA, dB = gradient(e, grad_mode)
    weighted = np.linalg.norm(e.A) ** 2 * np.sum(dA**2) + np.linalg.norm(e.B) ** 2 * np.sum(dB**2)
    return SITES_PER_COLUMN * e.tau * float(np.sqrt(weighted))


def gauge_fixed(e: TailoredEnsemble) -> TailoredEnsemble:
    """Both boundaries in the canonical gauge with unit transfer eigenvalue; f is unchanged."""
    try:
        A, _ = canonicalize(UniformMPS.from_array(e.A, "L"))
        B, _ = canonicalize(UniformMPS.from_array(e.B, "R"))
    except NumericalError as exc:
        logger.warning("Keeping the incoming gauge: %s", exc)
        return e
    return e.with_tensors(np.array(A.array), np.array(B.array))


def _flatten(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.concatenate([A.ravel(), B.ravel()])


def _split(vector: np.ndarray, e: TailoredEnsemble) -> Tuple[np.ndarray, np.ndarray]:
    size = e.A.size
    return vector[:size].reshape(e.A.shape), vector[size:].reshape(e.B.shape)


def newton_direction(
    e: TailoredEnsemble, config: FineTuneConfig, masks: Tuple[float, float] = (1.0, 1.0)
) -> Tuple[np.ndarray, np.ndarray]:
    """Approximate solution of H d = -g with |A| and |B| held fixed to first order."""
    size_a = e.A.size
    point = _flatten(e.A, e.B)
    weights = np.concatenate([np.full(size_a, masks[0]), np.full(e.B.size, masks[1])])
    scale_a = _flatten(e.A, np.zeros_like(e.B)) / np.linalg.norm(e.A)
    scale_b = _flatten(np.zeros_like(e.A), e.B) / np.linalg.norm(e.B)

    def project(vector: np.ndarray) -> np.ndarray:
        vector = weights * vector
        return vector - (vector @ scale_a) * scale_a - (vector @ scale_b) * scale_b

    step = HVP_STEP * np.linalg.norm(point)

    def hessian_vector(vector: np.ndarray) -> np.ndarray:
        vector = project(np.asarray(vector, dtype=float).ravel())
        length = np.linalg.norm(vector)
        if length == 0:
            return vector
        shift = step * vector / length
        plus = _flatten(*gradient(e.with_tensors(*_split(point + shift, e)), config.grad_mode))
        minus = _flatten(*gradient(e.with_tensors(*_split(point - shift, e)), config.grad_mode))
        return project((plus - minus) * (length / (2 * step)))

    operator = LinearOperator((point.size, point.size), matvec=hessian_vector, dtype=np.float64)
    rhs = -project(_flatten(*gradient(e, config.grad_mode)))
    solution, info = minres(operator, rhs, maxiter=config.krylov_dim)
    if info < 0:
        raise NumericalError(f"MINRES failed on the Newton system (info={info}).")
    direction = project(solution)
    cap = NEWTON_MAX_STEP * np.linalg.norm(point)
    length = np.linalg.norm(direction)
    if length > cap:
        direction *= cap / length
    return _split(direction, e)


def _renormalized(e: TailoredEnsemble, norm_a: float, norm_b: float) -> TailoredEnsemble:
    return e.with_tensors(e.A * (norm_a / np.linalg.norm(e.A)), e.B * (norm_b / np.linalg.norm(e.B)))


def _newton_step(
    e: TailoredEnsemble, config: FineTuneConfig, step: int, residual: float
) -> Tuple[TailoredEnsemble, float, float, bool]:
    """One Newton move with step halving. Returns (ensemble, f, residual, moved)."""
    try:
        dA, dB = newton_direction(e, config, _update_masks(config, step))
    except NumericalError as exc:
        logger.warning("No Newton direction at step %s: %s", step, exc)
        return e, float("nan"), residual, False

    norm_a, norm_b = np.linalg.norm(e.A), np.linalg.norm(e.B)
    length = 1.0
    for _ in range(MAX_BACKTRACKS):
        moved = e.with_tensors(e.A + length * dA, e.B + length * dB)
        if not (np.all(np.isfinite(moved.A)) and np.all(np.isfinite(moved.B))):
            raise DivergenceError("Newton step produced non-finite boundary tensors.")
        candidate = _renormalized(moved, norm_a, norm_b)
        try:
            f_new = free_energy(candidate).f
            new_residual = stationarity_residual(candidate, config.grad_mode)
        except TraceSignError as exc:
            logger.debug("Rejected Newton step of length %s: %s", length, exc)
        else:
            if new_residual < residual:
                return candidate, f_new, new_residual, True
        length *= 0.5
    logger.warning("Step halving found no smaller residual at step %s.", step)
    return e, float("nan"), residual, False


def _gradient_step(
    e: TailoredEnsemble, config: FineTuneConfig, step: int, f_current: float
) -> Tuple[TailoredEnsemble, float, bool]:
    """One gradient move with optional backtracking. Returns (ensemble, f, moved)."""
    dA, dB = gradient(e, config.grad_mode)
    weight_a, weight_b = _update_masks(config, step)
    dA, dB = weight_a * dA, weight_b * dB

    eta = config.eta
    for _ in range(MAX_BACKTRACKS if config.backtrack else 1):
        candidate = gd_step(e, dA, dB, config, eta=eta)
        try:
            f_new = free_energy(candidate).f
        except TraceSignError as exc:
            logger.debug("Rejected step with eta=%s: %s", eta, exc)
        else:
            wrong_way = f_new > f_current if config.direction == "ascend_lambda" else f_new < f_current
            if not config.backtrack or not wrong_way:
                return candidate, f_new, True
        eta *= 0.5
    logger.warning("No acceptable gradient step at step %s.", step)
    return e, f_current, False


def _safe_residual(e: TailoredEnsemble, grad_mode: str) -> float:
    try:
        return stationarity_residual(e, grad_mode)
    except TraceSignError:
        return float("inf")


def finetune_loop(
    e: TailoredEnsemble,
    config: FineTuneConfig,
    checkpoint_dir: str | Path | None = None,
) -> Tuple[TailoredEnsemble, FineTuneTrace]:
    """Iterate until the residual drops below grad_tol, f stays within f_tol for
    ``config.window`` steps, no step is accepted, or max_steps run out.

    Returns the iterate with the smallest stationarity residual, which is
    also what gets checkpointed.
    """
    start = time.perf_counter()
    f_start = free_energy(e).f
    trace = FineTuneTrace()

    if config.f_tol == float("inf") or config.max_steps == 0:
        trace.records.append(TraceRecord(0, f_start, float("nan"), 0.0))
        trace.status = "converged" if config.f_tol == float("inf") else "max_steps"
        return e, trace

    if config.method == "newton":
        e = gauge_fixed(e)
    residual = _safe_residual(e, config.grad_mode)
    trace.records.append(TraceRecord(0, f_start, residual, time.perf_counter() - start))
    best, best_residual = e, residual

    f_current = f_start
    quiet_steps = 0
    trace.status = "max_steps"
    if residual <= config.grad_tol:
        trace.status = "converged"
    for step in range(1, config.max_steps + 1):
        if trace.status == "converged":
            break
        if config.method == "newton":
            e, f_new, residual, moved = _newton_step(e, config, step, residual)
        else:
            e, f_new, moved = _gradient_step(e, config, step, f_current)
            residual = _safe_residual(e, config.grad_mode) if moved else residual
        if not moved:
            trace.status = "stalled"
            break
        trace.records.append(TraceRecord(step, f_new, residual, time.perf_counter() - start))

        if f_start != 0 and abs(f_new) > config.divergence_factor * abs(f_start):
            raise DivergenceError(
                f"Fine-tuning diverged at step {step}: f went from {f_start!r} to {f_new!r} "
                f"(residual {residual:.3e}, eta {config.eta})."
            )
        logger.debug("step %s: f=%.17g residual=%.3e", step, f_new, residual)

        if residual < best_residual:
            best, best_residual, trace.best_step = e, residual, step
            if checkpoint_dir is not None:
                save_checkpoint(best, checkpoint_dir)
        quiet_steps = quiet_steps + 1 if abs(f_new - f_current) < config.f_tol else 0
        f_current = f_new
        if residual <= config.grad_tol or quiet_steps >= config.window:
            trace.status = "converged"

    if checkpoint_dir is not None:
        save_checkpoint(best, checkpoint_dir)
    logger.info(
        "Fine-tuning (%s) finished with status %s after %s steps: f %.17g -> %.17g, residual %.3e at step %s",
        config.method, trace.status, trace.steps, f_start, trace.records[trace.best_step].f,
        best_residual, trace.best_step,
    )
    return best, trace


def save_checkpoint(e: TailoredEnsemble, directory: str | Path) -> Path:
    directory = Path(directory)
    save_tensor(DenseTensor(e.A, ("left", "phys", "right")), directory / "A.npz")
    save_tensor(DenseTensor(e.B, ("left", "phys", "right")), directory / "B.npz")
    return directory


def load_checkpoint(e: TailoredEnsemble, directory: str | Path) -> TailoredEnsemble:
    """Resume from saved (A, B), keeping Theta and K from ``e``."""
    directory = Path(directory)
    A = load_tensor(directory / "A.npz").data
    B = load_tensor(directory / "B.npz").data
    return e.with_tensors(np.array(A), np.array(B))
