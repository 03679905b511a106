"""Scissor K imaginary-time layers out of the infinite network and stitch them
into a ring.

With uniform boundary tensors A (left) and B (right) the stitched sandwich
<L|T^K|R> is the trace of the K-th power of a single-layer channel matrix M,
and the overlap <L|R> the trace of m^K. Powers are taken in the log domain so
K can reach millions of layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
from opt_einsum import contract

from .boundary_mps import UniformMPS
from .logger import get_logger
from .tensor_core import ContractionError, NumericalError
from .trotter_net import ThetaTensor

logger = get_logger("tailoring")

SITES_PER_COLUMN = 2
TRACE_FLOOR = 1e-300


class TraceSignError(NumericalError):
    """Raised when a ring trace is zero or negative, i.e. the ensemble is unphysical."""


def _boundary_array(boundary: UniformMPS | np.ndarray) -> np.ndarray:
    if isinstance(boundary, UniformMPS):
        return boundary.array
    array = np.array(boundary, dtype=np.float64)
    if array.ndim != 3 or array.shape[0] != array.shape[2]:
        raise ContractionError(f"Boundary tensor must have shape (chi, phys, chi), got {array.shape}.")
    return array


@dataclass(frozen=True, eq=False)
class TailoredEnsemble:
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    theta: ThetaTensor
    K: int
    tau: float

    def __post_init__(self) -> None:
        A = _boundary_array(self.A)
        B = _boundary_array(self.B)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.K < 1:
            raise ValueError(f"K must be at least 1, got {self.K}.")
        r = self.theta.rank
        if A.shape[1] != r or B.shape[1] != r:
            raise ContractionError(
                f"Boundary physical dimensions ({A.shape[1]}, {B.shape[1]}) do not match "
                f"Theta's horizontal bond {r}."
            )

    @property
    def beta(self) -> float:
        return self.K * self.tau

    @property
    def chi(self) -> int:
        return max(self.A.shape[0], self.B.shape[0])

    def with_tensors(self, A: np.ndarray, B: np.ndarray) -> "TailoredEnsemble":
        return replace(self, A=A, B=B)

    def with_layers(self, K: int) -> "TailoredEnsemble":
        return replace(self, K=int(K))


@dataclass(frozen=True, eq=False)
class ScaledMatrix:
    """exp(log_scale) * matrix, with max|matrix| kept inside [1/2, 2]."""

    matrix: np.ndarray
    log_scale: float = 0.0

    @classmethod
    def normalized(cls, matrix: np.ndarray, log_scale: float = 0.0) -> "ScaledMatrix":
        peak = float(np.max(np.abs(matrix))) if matrix.size else 0.0
        if not math.isfinite(peak):
            raise NumericalError("Non-finite entry while forming a matrix power.")
        if peak == 0.0:
            raise TraceSignError("Matrix power collapsed to zero.")
        return cls(matrix / peak, log_scale + math.log(peak))

    @classmethod
    def identity(cls, n: int) -> "ScaledMatrix":
        return cls(np.eye(n), 0.0)

    def __matmul__(self, other: "ScaledMatrix") -> "ScaledMatrix":
        return ScaledMatrix.normalized(self.matrix @ other.matrix, self.log_scale + other.log_scale)

    def value(self) -> np.ndarray:
        return math.exp(self.log_scale) * self.matrix


def matrix_power_scaled(m: np.ndarray, K: int) -> ScaledMatrix:
    """m^K by binary exponentiation; K = 0 gives the identity."""
    if K < 0:
        raise ValueError(f"Power must be nonnegative, got {K}.")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractionError(f"Matrix power needs a square matrix, got shape {m.shape}.")
    result: ScaledMatrix | None = None
    base = ScaledMatrix.normalized(m)
    while K:
        if K & 1:
            result = base if result is None else result @ base
        K >>= 1
        if K:
            base = base @ base
    return result if result is not None else ScaledMatrix.identity(m.shape[0])


def log_trace_power(m: np.ndarray, K: int, allow_negative: bool = False) -> Tuple[float, int]:
    """Return (ln|Tr m^K|, sign)."""
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}.")
    power = matrix_power_scaled(m, K)
    trace = float(np.trace(power.matrix))
    if abs(trace) <= TRACE_FLOOR:
        raise TraceSignError(f"Tr m^{K} vanishes after scaling (scaled trace {trace:.3e}).")
    sign = 1 if trace > 0 else -1
    if sign < 0 and not allow_negative:
        raise TraceSignError(f"Tr m^{K} is negative; the ensemble is unphysical.")
    return power.log_scale + math.log(abs(trace)), sign


def scissor_and_stitch(
    L: UniformMPS | np.ndarray,
    R: UniformMPS | np.ndarray,
    theta: ThetaTensor,
    beta_target: float,
    tau: float,
) -> TailoredEnsemble:
    """Cut K = round(beta_target / tau) layers and close them periodically."""
    if not tau > 0:
        raise ValueError(f"Trotter slice must be positive, got {tau}.")
    if beta_target < tau:
        raise ValueError(f"Target beta {beta_target} is below one Trotter slice {tau}.")
    K = max(1, int(round(beta_target / tau)))
    ensemble = TailoredEnsemble(A=_boundary_array(L), B=_boundary_array(R), theta=theta, K=K, tau=tau)
    logger.debug("Stitched %s layers (beta=%s) at chi=%s.", K, ensemble.beta, ensemble.chi)
    return ensemble


def channel_matrix(e: TailoredEnsemble) -> np.ndarray:
    """One layer of <L|T|R> as a (chiL d^2 chiR) square matrix.

    Rows are (A-bond, Theta up, B-bond), columns (A-bond', Theta down, B-bond').
    """
    A, B, theta = e.A, e.B, e.theta.array
    layer = contract("apc,pudq,bqe->aubcde", A, theta, B)
    n = A.shape[0] * theta.shape[1] * B.shape[0]
    return layer.reshape(n, n)


def overlap_matrix(e: TailoredEnsemble) -> np.ndarray:
    """One layer of <L|R> as a (chiL chiR) square matrix."""
    A, B = e.A, e.B
    if A.shape[1] != B.shape[1]:
        raise ContractionError("Boundary physical dimensions differ; cannot form <L|R>.")
    layer = np.einsum("apc,bpd->abcd", A, B)
    n = A.shape[0] * B.shape[0]
    return layer.reshape(n, n)


@dataclass(frozen=True)
class FreeEnergyReport:
    """Free energy per site and the two ring log-traces it is built from."""

    f: float
    log_lambda: float
    log_numerator: float
    log_denominator: float
    beta: float
    K: int
    tau: float
    chi: int
    sites_per_column: int = SITES_PER_COLUMN

    @property
    def log_z_per_site(self) -> float:
        return self.log_lambda / self.sites_per_column

    def log_partition(self, n_sites: int) -> float:
        """ln Z for ``n_sites`` spins; Z itself is never formed."""
        return n_sites * self.log_z_per_site

    def as_dict(self) -> dict:
        return {
            "f": self.f,
            "log_lambda": self.log_lambda,
            "log_numerator": self.log_numerator,
            "log_denominator": self.log_denominator,
            "beta": self.beta,
            "K": self.K,
            "tau": self.tau,
            "chi": self.chi,
            "sites_per_column": self.sites_per_column,
        }


def free_energy(e: TailoredEnsemble) -> FreeEnergyReport:
    log_numerator, _ = log_trace_power(channel_matrix(e), e.K)
    log_denominator, _ = log_trace_power(overlap_matrix(e), e.K)
    log_lambda = log_numerator - log_denominator
    f = -log_lambda / (SITES_PER_COLUMN * e.beta)
    return FreeEnergyReport(
        f=f,
        log_lambda=log_lambda,
        log_numerator=log_numerator,
        log_denominator=log_denominator,
        beta=e.beta,
        K=e.K,
        tau=e.tau,
        chi=e.chi,
    )


def thermal_energy(e: TailoredEnsemble, delta_layers: int) -> float:
    """E = d(beta f)/d(beta) by a centered difference over K +- delta_layers."""
    if delta_layers < 1:
        raise ValueError(f"delta_layers must be positive, got {delta_layers}.")
    if e.K - delta_layers < 1:
        raise ValueError(
            f"K = {e.K} is too small for a stencil of {delta_layers} layers on each side."
        )
    upper = free_energy(e.with_layers(e.K + delta_layers))
    lower = free_energy(e.with_layers(e.K - delta_layers))
    return (upper.beta * upper.f - lower.beta * lower.f) / (2 * delta_layers * e.tau)
