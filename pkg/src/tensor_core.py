"""Dense real tensor algebra shared by every other module.

Tensors are stored row-major (C order) over their legs in listed order, so a
serialized tensor is bit-reproducible. All scalars are float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np
import scipy.linalg

from .logger import get_logger

logger = get_logger("tensor_core")

DEFAULT_CUTOFF = 1e-14
SYMMETRY_TOLERANCE = 1e-10

LegRef = str | int


class NumericalError(RuntimeError):
    """Base class for failures inside the numerical pipeline."""

    def __init__(self, message: str, original_error: Exception | None = None) -> None:
        super().__init__(message)
        self.original_error = original_error


class ContractionError(NumericalError):
    """Raised when legs cannot be paired for a contraction."""


class DecompositionError(NumericalError):
    """Raised when an SVD or eigendecomposition cannot be carried out."""


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Immutable multi-index real array with optional unique leg labels."""

    data: np.ndarray
    legs: Tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        array = np.array(self.data, dtype=np.float64, order="C", copy=True)
        array.flags.writeable = False
        object.__setattr__(self, "data", array)
        if self.legs is not None:
            legs = tuple(self.legs)
            if len(legs) != array.ndim:
                raise ValueError(
                    f"{len(legs)} leg labels given for a tensor with {array.ndim} legs."
                )
            if len(set(legs)) != len(legs):
                raise ValueError(f"Leg labels must be pairwise distinct: {legs}")
            object.__setattr__(self, "legs", legs)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def axis(self, leg: LegRef) -> int:
        """Return the positional index of a leg given by label or position."""
        if isinstance(leg, (int, np.integer)):
            if not -self.ndim <= leg < self.ndim:
                raise ContractionError(f"Leg position {leg} out of range for shape {self.shape}.")
            return int(leg) % self.ndim
        if self.legs is None or leg not in self.legs:
            raise ContractionError(f"Unknown leg label {leg!r}; tensor legs are {self.legs}.")
        return self.legs.index(leg)

    def label(self, axis: int) -> str | None:
        return None if self.legs is None else self.legs[axis]

    def relabel(self, legs: Sequence[str]) -> "DenseTensor":
        return DenseTensor(self.data, tuple(legs))

    def transpose(self, order: Sequence[LegRef]) -> "DenseTensor":
        axes = [self.axis(leg) for leg in order]
        legs = None if self.legs is None else tuple(self.legs[a] for a in axes)
        return DenseTensor(np.transpose(self.data, axes), legs)

    def matrix(self, row_legs: Sequence[LegRef], col_legs: Sequence[LegRef]) -> np.ndarray:
        """Group legs into a (rows, cols) matrix view in the documented ordering."""
        rows = [self.axis(leg) for leg in row_legs]
        cols = [self.axis(leg) for leg in col_legs]
        if sorted(rows + cols) != list(range(self.ndim)):
            raise DecompositionError(
                f"Row legs {list(row_legs)} and column legs {list(col_legs)} "
                f"must partition all {self.ndim} legs."
            )
        row_dim = int(np.prod([self.shape[a] for a in rows], dtype=np.int64))
        col_dim = int(np.prod([self.shape[a] for a in cols], dtype=np.int64))
        return np.transpose(self.data, rows + cols).reshape(row_dim, col_dim)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))

    def scaled(self, factor: float) -> "DenseTensor":
        return DenseTensor(self.data * factor, self.legs)


@dataclass(frozen=True)
class SvdResult:
    left_factor: DenseTensor
    singular_values: np.ndarray
    right_factor: DenseTensor
    truncation_error: float

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)


def as_array(value: DenseTensor | np.ndarray) -> np.ndarray:
    if isinstance(value, DenseTensor):
        return value.data
    return np.asarray(value, dtype=np.float64)


def contract(
    a: DenseTensor,
    b: DenseTensor,
    pairs: Iterable[Tuple[LegRef, LegRef]],
) -> DenseTensor:
    """Sum over paired legs; result legs are the unpaired legs of a, then of b."""
    pairs = list(pairs)
    axes_a = [a.axis(left) for left, _ in pairs]
    axes_b = [b.axis(right) for _, right in pairs]
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise ContractionError("A leg may appear in at most one contraction pair.")
    for left, right in zip(axes_a, axes_b):
        if a.shape[left] != b.shape[right]:
            raise ContractionError(
                f"Dimension mismatch pairing leg {a.label(left) or left} "
                f"({a.shape[left]}) with {b.label(right) or right} ({b.shape[right]})."
            )

    data = np.tensordot(a.data, b.data, axes=(axes_a, axes_b))

    legs = None
    if a.legs is not None and b.legs is not None:
        free_a = [a.legs[i] for i in range(a.ndim) if i not in axes_a]
        free_b = [b.legs[i] for i in range(b.ndim) if i not in axes_b]
        legs = tuple(free_a + free_b)
        if len(set(legs)) != len(legs):
            raise ContractionError(f"Contraction would produce duplicate leg labels {legs}.")
    return DenseTensor(data, legs)


def _svd(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.warning("gesdd did not converge; retrying with gesvd.")
    try:
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesvd")
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("SVD failed with both LAPACK drivers.", exc) from exc


def svd_truncated(
    t: DenseTensor,
    row_legs: Sequence[LegRef],
    col_legs: Sequence[LegRef],
    max_rank: int,
    cutoff: float = DEFAULT_CUTOFF,
    bond_label: str = "bond",
) -> SvdResult:
    """Truncated SVD of ``t`` grouped as (row_legs | col_legs).

    The kept rank is ``min(max_rank, #{s > cutoff * s_max})`` (at least one).
    ``truncation_error`` is the discarded weight sum(s_dropped**2) / sum(s**2),
    which equals the squared relative Frobenius reconstruction error.
    """
    if not row_legs or not col_legs:
        raise DecompositionError("Both sides of the SVD leg partition must be non-empty.")
    if max_rank < 1:
        raise ValueError("max_rank must be a positive integer.")
    if cutoff < 0:
        raise ValueError("cutoff must be nonnegative.")
    if not np.all(np.isfinite(t.data)):
        raise DecompositionError("SVD input contains non-finite values.")

    matrix = t.matrix(row_legs, col_legs)
    u, s, vh = _svd(matrix)

    total = float(np.sum(s**2))
    significant = int(np.count_nonzero(s > cutoff * s[0])) if s.size and s[0] > 0 else 0
    rank = max(1, min(max_rank, significant))
    discarded = float(np.sum(s[rank:] ** 2))
    truncation_error = discarded / total if total > 0 else 0.0

    row_shape = [t.shape[t.axis(leg)] for leg in row_legs]
    col_shape = [t.shape[t.axis(leg)] for leg in col_legs]
    row_labels = col_labels = None
    if t.legs is not None:
        row_labels = tuple(t.legs[t.axis(leg)] for leg in row_legs) + (bond_label,)
        col_labels = (bond_label,) + tuple(t.legs[t.axis(leg)] for leg in col_legs)

    left = DenseTensor(u[:, :rank].reshape(*row_shape, rank), row_labels)
    right = DenseTensor(vh[:rank, :].reshape(rank, *col_shape), col_labels)
    return SvdResult(left, s[:rank].copy(), right, truncation_error)


def sym_eig(m: DenseTensor | np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a real symmetric matrix, eigenvalues ascending."""
    matrix = as_array(m)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DecompositionError(f"sym_eig needs a square matrix, got shape {matrix.shape}.")
    scale = max(float(np.linalg.norm(matrix)), np.finfo(float).tiny)
    asymmetry = float(np.linalg.norm(matrix - matrix.T))
    if asymmetry > SYMMETRY_TOLERANCE * scale:
        raise DecompositionError(
            f"Matrix is not symmetric: deviation {asymmetry:.3e} exceeds "
            f"{SYMMETRY_TOLERANCE:.0e} of its norm."
        )
    try:
        return scipy.linalg.eigh(0.5 * (matrix + matrix.T))
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("Symmetric eigendecomposition failed.", exc) from exc


def save_tensor(tensor: DenseTensor, path: str | Path) -> Path:
    """Write shape, leg labels and C-ordered scalars to an ``.npz`` container."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    legs = np.array(tensor.legs if tensor.legs is not None else (), dtype=str)
    with path.open("wb") as handle:
        np.savez(
            handle,
            shape=np.array(tensor.shape, dtype=np.int64),
            legs=legs,
            data=tensor.data.ravel(order="C"),
        )
    return path


def load_tensor(path: str | Path) -> DenseTensor:
    with np.load(Path(path), allow_pickle=False) as archive:
        shape = tuple(int(n) for n in archive["shape"])
        legs = tuple(str(label) for label in archive["legs"]) or None
        data = archive["data"].reshape(shape, order="C")
    return DenseTensor(data, legs)
