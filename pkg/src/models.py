"""Spin-1/2 operators, two-site bond terms and imaginary-time gates."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .logger import get_logger
from .tensor_core import DecompositionError, NumericalError, load_tensor, sym_eig

logger = get_logger("models")

MODEL_KINDS = ("ising", "xy", "custom")
FIELD_SPLITTINGS = ("symmetric", "left")


class ModelError(NumericalError):
    """Raised when a model specification cannot produce a valid bond term."""


@dataclass(frozen=True, eq=False)
class SpinOperators:
    """Spin-1/2 matrices with eigenvalues +-1/2.

    S^y is imaginary, so only its imaginary part is stored:
    S^y = 1j * sy_imagpart.
    """

    d: int
    sx: np.ndarray
    sy_imagpart: np.ndarray
    sz: np.ndarray

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.d)

    @property
    def splus(self) -> np.ndarray:
        return self.sx - self.sy_imagpart

    @property
    def sminus(self) -> np.ndarray:
        return self.sx + self.sy_imagpart


@lru_cache(maxsize=None)
def spin_half() -> SpinOperators:
    sx = np.array([[0.0, 0.5], [0.5, 0.0]])
    sy_imagpart = np.array([[0.0, -0.5], [0.5, 0.0]])
    sz = np.array([[0.5, 0.0], [0.0, -0.5]])
    for matrix in (sx, sy_imagpart, sz):
        matrix.flags.writeable = False
    return SpinOperators(d=2, sx=sx, sy_imagpart=sy_imagpart, sz=sz)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Bond Hamiltonian description.

    ``kind`` is one of ``ising`` (transverse field ``h``), ``xy`` or ``custom``
    (explicit d^2 x d^2 ``matrix``). ``field_splitting`` decides how the on-site
    field of the Ising chain is shared between the two bonds touching a site.
    """

    kind: str
    h: float = 0.0
    matrix: np.ndarray | None = field(default=None, repr=False)
    field_splitting: str = "symmetric"
    name: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"Unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}.")
        if self.field_splitting not in FIELD_SPLITTINGS:
            raise ValueError(
                f"Unknown field splitting {self.field_splitting!r}; expected one of {FIELD_SPLITTINGS}."
            )
        if self.kind == "custom":
            if self.matrix is None:
                raise ValueError("A custom model needs a bond matrix.")
            matrix = np.array(self.matrix, dtype=np.float64)
            if matrix.ndim == 4:
                matrix = matrix.reshape(matrix.shape[0] * matrix.shape[1], -1)
            matrix.flags.writeable = False
            object.__setattr__(self, "matrix", matrix)

    @classmethod
    def ising(cls, h: float, field_splitting: str = "symmetric") -> "ModelSpec":
        return cls(kind="ising", h=float(h), field_splitting=field_splitting)

    @classmethod
    def xy(cls) -> "ModelSpec":
        return cls(kind="xy")

    @classmethod
    def custom(cls, matrix: np.ndarray, name: str | None = None) -> "ModelSpec":
        return cls(kind="custom", matrix=matrix, name=name)

    @classmethod
    def zero(cls) -> "ModelSpec":
        return cls(kind="custom", matrix=np.zeros((4, 4)), name="zero")

    @property
    def d(self) -> int:
        if self.kind == "custom":
            return int(round(np.sqrt(self.matrix.shape[0])))
        return spin_half().d

    @property
    def label(self) -> str:
        if self.kind == "custom":
            return self.name or "custom"
        return self.kind

    def describe(self) -> str:
        """Canonical string form, stable enough to key caches on."""
        if self.kind == "ising":
            return f"ising:h={self.h!r}:split={self.field_splitting}"
        if self.kind == "xy":
            return "xy"
        digest = np.round(self.matrix, 15).tobytes().hex()
        return f"custom:{self.label}:{digest}"


def parse_model(text: str) -> ModelSpec:
    """Parse ``ising:h=0.5``, ``xy``, ``zero`` or ``custom:<path>``."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.lower()
    if kind == "ising":
        params = dict(item.split("=", 1) for item in rest.split(":") if "=" in item)
        try:
            h = float(params.get("h", 0.0))
        except ValueError as exc:
            raise ValueError(f"Invalid field strength in model string {text!r}.") from exc
        return ModelSpec.ising(h, field_splitting=params.get("split", "symmetric"))
    if kind == "xy":
        return ModelSpec.xy()
    if kind == "zero":
        return ModelSpec.zero()
    if kind == "custom":
        if not rest:
            raise ValueError("custom model needs a path: custom:<path-to-serialized-matrix>")
        path = Path(rest)
        try:
            matrix = np.load(path, allow_pickle=False) if path.suffix == ".npy" else load_tensor(path).data
        except (OSError, ValueError, KeyError) as exc:
            raise ModelError(f"Cannot read the custom bond term from {path}: {exc}", exc) from exc
        return ModelSpec.custom(matrix, name=path.stem)
    raise ValueError(f"Unrecognised model string {text!r}.")


def hamiltonian_term(spec: ModelSpec) -> np.ndarray:
    """Return the real symmetric d^2 x d^2 bond term h_{n,n+1}."""
    ops = spin_half()
    eye = ops.identity
    if spec.kind == "ising":
        coupling = np.kron(ops.sx, ops.sx)
        if spec.field_splitting == "symmetric":
            field_term = 0.5 * (np.kron(ops.sz, eye) + np.kron(eye, ops.sz))
        else:
            field_term = np.kron(ops.sz, eye)
        term = coupling - spec.h * field_term
    elif spec.kind == "xy":
        # S^x S^x + S^y S^y written through S^+ and S^- so everything stays real.
        term = 0.5 * (np.kron(ops.splus, ops.sminus) + np.kron(ops.sminus, ops.splus))
    else:
        term = np.array(spec.matrix)
        side = term.shape[0]
        if term.ndim != 2 or side != term.shape[1]:
            raise ModelError(f"Custom bond term must be square, got shape {term.shape}.")
        d = int(round(np.sqrt(side)))
        if d * d != side:
            raise ModelError(f"Custom bond term dimension {side} is not a square d^2.")
        scale = max(float(np.linalg.norm(term)), 1.0)
        if float(np.max(np.abs(term - term.T))) > 1e-12 * scale:
            raise ModelError("Custom bond term is not symmetric.")
    return np.array(term, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class TwoSiteGate:
    """exp(-tau h) on two sites, rows (s1 s2), columns (s1' s2')."""

    tau: float
    matrix: np.ndarray

    @property
    def d(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    @property
    def tensor(self) -> np.ndarray:
        """The gate as U[s1, s2, s1', s2']."""
        d = self.d
        return self.matrix.reshape(d, d, d, d)


def gate(term: np.ndarray, tau: float) -> TwoSiteGate:
    """Matrix exponential exp(-tau * term) through the symmetric eigendecomposition."""
    if tau < 0:
        raise ValueError(f"Trotter slice must be nonnegative, got {tau}.")
    if tau == 0:
        identity = np.eye(np.asarray(term).shape[0])
        identity.flags.writeable = False
        return TwoSiteGate(tau=0.0, matrix=identity)
    try:
        eigenvalues, vectors = sym_eig(term)
    except DecompositionError as exc:
        raise ModelError("Bond term must be real symmetric to exponentiate.", exc) from exc
    matrix = (vectors * np.exp(-tau * eigenvalues)) @ vectors.T
    matrix = 0.5 * (matrix + matrix.T)
    matrix.flags.writeable = False
    return TwoSiteGate(tau=float(tau), matrix=matrix)


def model_gate(spec: ModelSpec, tau: float) -> TwoSiteGate:
    return gate(hamiltonian_term(spec), tau)
