"""Zero-temperature boundary MPS of the infinite Theta network.

|R> and <L| are the dominant right/left eigenvectors of the column transfer MPO
built from Theta. Both are uniform MPS running along imaginary time, found by
power iteration: apply the MPO, bring the grown tensor to canonical form,
truncate to the target bond dimension, repeat until the Schmidt spectrum stops
moving.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigs

from .logger import get_logger
from .tensor_core import ContractionError, DecompositionError, DenseTensor, NumericalError
from .trotter_net import ThetaTensor

logger = get_logger("boundary_mps")

MPS_LEGS = ("left", "phys", "right")
SIDES = ("L", "R")
DENSE_TRANSFER_LIMIT = 400
GAP_TOLERANCE = 1e-8
ENV_CUTOFF = 1e-15
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITERS = 5000


class DegenerateSpectrumError(NumericalError):
    """Raised when the MPS transfer matrix has no unique dominant eigenvalue."""

    def __init__(self, message: str, gap: float) -> None:
        super().__init__(message)
        self.gap = gap


class ConvergenceError(NumericalError):
    """Raised when power iteration exhausts its iteration budget."""

    def __init__(self, message: str, final_delta: float, iterations: int) -> None:
        super().__init__(message)
        self.final_delta = final_delta
        self.iterations = iterations


@dataclass(frozen=True)
class UniformMPS:
    """Translation-invariant MPS tensor with legs (left, phys, right)."""

    tensor: DenseTensor
    side: str
    discarded_weight: float = 0.0

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise ValueError(f"MPS side must be one of {SIDES}, got {self.side!r}.")
        if self.tensor.ndim != 3 or self.tensor.shape[0] != self.tensor.shape[2]:
            raise ValueError(f"Uniform MPS tensor must have shape (chi, phys, chi), got {self.tensor.shape}.")

    @classmethod
    def from_array(cls, array: np.ndarray, side: str, discarded_weight: float = 0.0) -> "UniformMPS":
        return cls(DenseTensor(array, MPS_LEGS), side, discarded_weight)

    @property
    def array(self) -> np.ndarray:
        return self.tensor.data

    @property
    def chi(self) -> int:
        return self.tensor.shape[0]

    @property
    def phys(self) -> int:
        return self.tensor.shape[1]


@dataclass(frozen=True, eq=False)
class CanonicalData:
    schmidt_spectrum: np.ndarray
    left_env: np.ndarray = field(repr=False)
    right_env: np.ndarray = field(repr=False)
    eigenvalue: float = 1.0
    gap: float = 1.0
    raw_fixed_points: Tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def entropy(self) -> float:
        return entanglement_entropy(self.schmidt_spectrum)


def entanglement_entropy(spectrum: np.ndarray) -> float:
    weights = np.asarray(spectrum) ** 2
    weights = weights[weights > 0]
    return float(-np.sum(weights * np.log(weights)))


def apply_transfer_mpo(mps: UniformMPS, theta: ThetaTensor, side: str | None = None) -> UniformMPS:
    """Apply one Theta column to a boundary MPS without truncation.

    For side R the MPS physical leg is contracted with Theta's beta leg and the
    new physical leg is alpha; side L mirrors this. Theta's up/down legs join
    the left/right bonds, so the bond grows from chi to chi * d^2.
    """
    side = side or mps.side
    array = mps.array
    t = theta.array
    r = t.shape[0]
    if mps.phys != r:
        raise ContractionError(
            f"MPS physical dimension {mps.phys} does not match Theta's horizontal bond {r}."
        )
    if side == "R":
        grown = np.einsum("abc,xudb->auxcd", array, t, optimize=True)
    elif side == "L":
        grown = np.einsum("axc,xudb->aubcd", array, t, optimize=True)
    else:
        raise ValueError(f"MPS side must be one of {SIDES}, got {side!r}.")
    chi, d2 = array.shape[0], t.shape[1]
    return UniformMPS.from_array(grown.reshape(chi * d2, r, chi * d2), side)


def _transfer_apply_right(array: np.ndarray, x: np.ndarray) -> np.ndarray:
    # r -> sum_p A_p r A_p^T
    return np.einsum("apb,bc,dpc->ad", array, x, array, optimize=True)


def _transfer_apply_left(array: np.ndarray, x: np.ndarray) -> np.ndarray:
    # l -> sum_p A_p^T l A_p
    return np.einsum("apb,ac,cpd->bd", array, x, array, optimize=True)


def _as_fixed_point(vector: np.ndarray, chi: int) -> np.ndarray:
    matrix = np.real(vector).reshape(chi, chi)
    matrix = 0.5 * (matrix + matrix.T)
    trace = np.trace(matrix)
    if trace < 0 or (trace == 0 and matrix.sum() < 0):
        matrix = -matrix
    return matrix / np.linalg.norm(matrix)


def _dominant_pair(values: np.ndarray) -> Tuple[complex, float]:
    order = np.argsort(-np.abs(values))
    leading = values[order[0]]
    if values.size < 2:
        return leading, 1.0
    second = abs(values[order[1]])
    gap = 1.0 - second / abs(leading) if abs(leading) > 0 else 0.0
    return leading, gap


def _check_gap(leading: complex, gap: float) -> None:
    if gap < GAP_TOLERANCE or abs(np.imag(leading)) > GAP_TOLERANCE * abs(leading):
        raise DegenerateSpectrumError(
            f"MPS transfer matrix has no unique dominant eigenvalue (relative gap {gap:.3e}).",
            gap=gap,
        )
    if np.real(leading) <= 0:
        raise DegenerateSpectrumError(
            f"Dominant transfer eigenvalue {leading} is not positive.", gap=gap
        )


def _dense_fixed_points(array: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, float]:
    chi = array.shape[0]
    transfer = np.einsum("apb,cpd->acbd", array, array).reshape(chi * chi, chi * chi)
    try:
        values, left_vectors, right_vectors = scipy.linalg.eig(transfer, left=True, right=True)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("Dense transfer-matrix diagonalization failed.", exc) from exc
    leading, gap = _dominant_pair(values)
    _check_gap(leading, gap)
    index = int(np.argmax(np.abs(values)))
    left = _as_fixed_point(left_vectors[:, index], chi)
    right = _as_fixed_point(right_vectors[:, index], chi)
    return float(np.real(leading)), left, right, gap


def _iterative_fixed_point(
    array: np.ndarray, side: str, guess: np.ndarray | None
) -> Tuple[complex, np.ndarray, float]:
    chi = array.shape[0]
    n = chi * chi
    apply = _transfer_apply_left if side == "left" else _transfer_apply_right
    operator = LinearOperator(
        (n, n), matvec=lambda v: apply(array, v.reshape(chi, chi)).ravel(), dtype=np.float64
    )
    v0 = guess.ravel() if guess is not None and guess.size == n else None
    try:
        values, vectors = eigs(
            operator, k=2, which="LM", v0=v0, ncv=min(n - 1, 40), tol=1e-14, maxiter=50 * n
        )
    except (ArpackNoConvergence, ArpackError) as exc:
        raise DecompositionError(f"ARPACK failed on the {side} transfer fixed point.", exc) from exc
    leading, gap = _dominant_pair(values)
    _check_gap(leading, gap)
    vector = vectors[:, int(np.argmax(np.abs(values)))]
    return leading, _as_fixed_point(vector, chi), gap


def transfer_fixed_points(
    array: np.ndarray, warm_start: Tuple[np.ndarray, np.ndarray] | None = None
) -> Tuple[float, np.ndarray, np.ndarray, float]:
    """Dominant eigenvalue and left/right fixed points of the MPS transfer map."""
    chi = array.shape[0]
    if chi * chi <= DENSE_TRANSFER_LIMIT:
        return _dense_fixed_points(array)
    left_guess, right_guess = warm_start if warm_start is not None else (None, None)
    eta_left, left, gap_left = _iterative_fixed_point(array, "left", left_guess)
    eta_right, right, gap_right = _iterative_fixed_point(array, "right", right_guess)
    if abs(eta_left - eta_right) > 1e-8 * abs(eta_right):
        logger.warning("Left/right transfer eigenvalues disagree: %s vs %s", eta_left, eta_right)
    return float(np.real(eta_right)), left, right, min(gap_left, gap_right)


def _psd_factor(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return (X, X^+) with matrix ~ X^T X on its numerically nonzero support."""
    weights, vectors = scipy.linalg.eigh(matrix)
    keep = weights > ENV_CUTOFF * max(weights[-1], 0.0)
    if not np.any(keep):
        raise DecompositionError("Transfer fixed point has no positive weight.")
    root = np.sqrt(weights[keep])
    factor = root[:, None] * vectors[:, keep].T
    pseudo_inverse = vectors[:, keep] / root
    return factor, pseudo_inverse


def canonicalize(
    mps: UniformMPS, warm_start: Tuple[np.ndarray, np.ndarray] | None = None
) -> Tuple[UniformMPS, CanonicalData]:
    """Left-canonical gauge with normalized transfer eigenvalue.

    With l = X^T X and r = Y Y^T the bond matrix X Y = U S V^T gives the gauge
    A -> U^T X A X^+ U, after which the left environment is the identity and
    the right environment is diag(S^2).
    """
    array = mps.array
    eta, left, right, gap = transfer_fixed_points(array, warm_start)
    normalized = array / np.sqrt(eta)

    x, x_pinv = _psd_factor(left)
    y_t, _ = _psd_factor(right)
    try:
        u, s, _ = scipy.linalg.svd(x @ y_t.T, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("SVD of the canonical bond matrix failed.", exc) from exc
    s = s / np.linalg.norm(s)

    gauged = np.einsum("ia,ij,jpk,kl,lb->apb", u, x, normalized, x_pinv, u, optimize=True)
    chi = gauged.shape[0]
    data = CanonicalData(
        schmidt_spectrum=s,
        left_env=np.eye(chi),
        right_env=np.diag(s**2),
        eigenvalue=eta,
        gap=gap,
        raw_fixed_points=(left, right),
    )
    return UniformMPS.from_array(gauged, mps.side), data


def truncate(mps: UniformMPS, canonical: CanonicalData, chi_max: int) -> UniformMPS:
    """Keep the ``chi_max`` largest Schmidt values of a canonical MPS."""
    if chi_max < 1:
        raise ValueError(f"chi_max must be at least 1, got {chi_max}.")
    if chi_max >= mps.chi:
        return UniformMPS(mps.tensor, mps.side, 0.0)
    weights = canonical.schmidt_spectrum**2
    discarded = float(np.sum(weights[chi_max:]) / np.sum(weights))
    array = mps.array[:chi_max, :, :chi_max]
    return UniformMPS.from_array(array, mps.side, discarded)


def _spectrum_distance(previous: np.ndarray, current: np.ndarray) -> float:
    size = max(previous.size, current.size)
    a = np.zeros(size)
    b = np.zeros(size)
    a[: previous.size] = previous
    b[: current.size] = current
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True, eq=False)
class SideResult:
    mps: UniformMPS
    iterations: int
    final_delta: float
    spectrum: np.ndarray = field(repr=False)
    discarded_weight: float = 0.0


@dataclass(frozen=True, eq=False)
class BoundaryResult:
    left: SideResult
    right: SideResult

    @property
    def L(self) -> UniformMPS:
        return self.left.mps

    @property
    def R(self) -> UniformMPS:
        return self.right.mps

    @property
    def iterations(self) -> int:
        return max(self.left.iterations, self.right.iterations)

    @property
    def final_delta(self) -> float:
        return max(self.left.final_delta, self.right.final_delta)

    def __iter__(self):
        return iter((self.L, self.R, self.iterations, self.final_delta))


def initial_mps(r: int, side: str, rng: np.random.Generator) -> UniformMPS:
    return UniformMPS.from_array(rng.uniform(0.5, 1.0, size=(1, r, 1)), side)


def converge_side(
    theta: ThetaTensor,
    chi: int,
    side: str,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int | None = 0,
    initial: UniformMPS | None = None,
) -> SideResult:
    """Power iteration for one boundary."""
    if chi < 1:
        raise ValueError(f"chi must be at least 1, got {chi}.")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}.")
    r = theta.rank
    if r == 1:
        # A one-dimensional physical space admits a single product state.
        trivial = UniformMPS.from_array(np.ones((1, 1, 1)), side)
        return SideResult(trivial, 1, 0.0, np.ones(1))

    mps = initial if initial is not None else initial_mps(r, side, np.random.default_rng(seed))
    previous = np.ones(1)
    delta = np.inf
    warm_start = None
    discarded = 0.0
    for iteration in range(1, max_iters + 1):
        grown = apply_transfer_mpo(mps, theta, side)
        canonical, data = canonicalize(grown, warm_start)
        warm_start = data.raw_fixed_points
        mps = truncate(canonical, data, chi)
        discarded = mps.discarded_weight
        kept = data.schmidt_spectrum[:chi]
        kept = kept / np.linalg.norm(kept)
        delta = _spectrum_distance(previous, kept)
        previous = kept
        if iteration % 50 == 0:
            logger.debug(
                "%s boundary iteration %s: delta=%.3e discarded=%.3e", side, iteration, delta, discarded
            )
        if delta < tol:
            break
    else:
        raise ConvergenceError(
            f"{side} boundary did not converge in {max_iters} iterations "
            f"(final spectrum change {delta:.3e}).",
            final_delta=delta,
            iterations=max_iters,
        )

    final, data = canonicalize(mps)
    logger.info(
        "%s boundary converged: chi=%s iterations=%s delta=%.3e entropy=%.6f",
        side, final.chi, iteration, delta, data.entropy,
    )
    return SideResult(
        mps=UniformMPS(final.tensor, side, discarded),
        iterations=iteration,
        final_delta=delta,
        spectrum=data.schmidt_spectrum,
        discarded_weight=discarded,
    )


def power_converge(
    theta: ThetaTensor,
    chi: int,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int | None = 0,
    parallel: bool = False,
) -> BoundaryResult:
    """Converge both boundaries independently; optionally on two threads."""
    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = [
                pool.submit(converge_side, theta, chi, side, tol, max_iters, seed) for side in SIDES
            ]
            left, right = (future.result() for future in futures)
    else:
        left, right = (converge_side(theta, chi, side, tol, max_iters, seed) for side in SIDES)
    return BoundaryResult(left=left, right=right)
