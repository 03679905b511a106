"""The single bulk tensor Theta of the square Trotter network.

Theta covers two neighbouring spins (x, x+1) of one second-order Trotter layer:

    Theta[alpha, up, down, beta] =
        U(tau/2)_{x,x+1} . [VR_x(alpha) (x) VL_{x+1}(beta)] . U(tau/2)_{x,x+1}

where VL/VR are the two halves of the SVD-split full-step gate on the bonds
(x-1, x) and (x+1, x+2). ``up`` is the output pair (s_x, s_x+1) and ``down``
the input pair, each of dimension d^2. A periodic row of n Theta tensors is
the layer produced by ``ed_oracle.trotter_layer_dense`` on 2n spins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .ed_oracle import MAX_LAYER_SITES, trotter_layer_dense
from .logger import get_logger
from .models import ModelSpec, TwoSiteGate, model_gate
from .tensor_core import DEFAULT_CUTOFF, DenseTensor, NumericalError, svd_truncated

logger = get_logger("trotter_net")

THETA_LEGS = ("alpha", "up", "down", "beta")
THETA_CONVENTIONS = ("standard", "swapped_split", "reversed_time")
ROW_TOLERANCE = 1e-12


class ThetaValidationError(NumericalError):
    """Raised when a Theta row disagrees with the dense Trotter layer."""


@dataclass(frozen=True)
class SplitGate:
    """Gate halves with sqrt(S) absorbed: U = sum_a vL[s1,s1',a] vR[s2,s2',a]."""

    vL: DenseTensor
    vR: DenseTensor
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)

    def reconstruct(self) -> np.ndarray:
        """Back to U[s1, s2, s1', s2']."""
        return np.einsum("ipa,jqa->ijpq", self.vL.data, self.vR.data)


@dataclass(frozen=True)
class ThetaTensor:
    data: DenseTensor
    tau: float
    model: ModelSpec
    convention: str = "standard"

    @property
    def rank(self) -> int:
        return self.data.shape[0]

    @property
    def vertical_dim(self) -> int:
        return self.data.shape[1]

    @property
    def array(self) -> np.ndarray:
        return self.data.data


def split_gate(g: TwoSiteGate, cutoff: float = DEFAULT_CUTOFF) -> SplitGate:
    """SVD of U grouped as (s1 s1' | s2 s2'), never truncated below the cutoff."""
    d = g.d
    grouped = DenseTensor(g.tensor, ("s1", "s2", "s1p", "s2p"))
    result = svd_truncated(grouped, ["s1", "s1p"], ["s2", "s2p"], max_rank=d * d, cutoff=cutoff)
    root = np.sqrt(result.singular_values)
    vL = result.left_factor.data * root
    vR = np.transpose(result.right_factor.data, (1, 2, 0)) * root
    logger.debug("Split gate tau=%s at rank %s: %s", g.tau, result.rank, result.singular_values)
    return SplitGate(
        vL=DenseTensor(vL, ("s", "sp", "bond")),
        vR=DenseTensor(vR, ("s", "sp", "bond")),
        singular_values=result.singular_values,
    )


def _assemble(half: np.ndarray, split: SplitGate, convention: str) -> np.ndarray:
    vL, vR = split.vL.data, split.vR.data
    if convention == "standard":
        theta = np.einsum("abmn,mpx,nqy,pqcd->xabcdy", half, vR, vL, half)
    elif convention == "swapped_split":
        theta = np.einsum("abmn,mpx,nqy,pqcd->xabcdy", half, vL, vR, half)
    elif convention == "reversed_time":
        theta = np.einsum("abmn,mpx,nqy,pqcd->xcdaby", half, vR, vL, half)
    else:
        raise ValueError(f"Unknown Theta convention {convention!r}; expected one of {THETA_CONVENTIONS}.")
    r = theta.shape[0]
    d2 = half.shape[0] * half.shape[1]
    return theta.reshape(r, d2, d2, r)


def build_theta(
    model: ModelSpec,
    tau: float,
    convention: str = "standard",
    validate: bool = True,
) -> ThetaTensor:
    """Assemble Theta from two half-step gates and the split full-step gate."""
    if not tau > 0:
        raise ValueError(f"Trotter slice must be positive, got {tau}.")
    half = model_gate(model, tau / 2.0).tensor
    split = split_gate(model_gate(model, tau))
    data = _assemble(half, split, convention)
    if not np.all(np.isfinite(data)):
        raise ThetaValidationError("Theta has non-finite entries.")
    theta = ThetaTensor(DenseTensor(data, THETA_LEGS), float(tau), model, convention)

    if validate:
        deviation = validate_theta_row(theta, 2)
        if deviation > ROW_TOLERANCE:
            raise ThetaValidationError(
                f"Theta row deviates from the dense Trotter layer by {deviation:.3e} "
                f"under convention {convention!r}."
            )
    logger.debug("Built Theta for %s at tau=%s with shape %s.", model.label, tau, data.shape)
    return theta


def theta_row_operator(theta: ThetaTensor | np.ndarray, n_sites: int) -> np.ndarray:
    """Contract a periodic row of ``n_sites`` Theta tensors into a dense operator."""
    array = theta.array if isinstance(theta, ThetaTensor) else np.asarray(theta)
    r, d2, _, _ = array.shape
    if d2**n_sites > 4**(MAX_LAYER_SITES // 2):
        raise ValueError(f"A row of {n_sites} Theta tensors is too large to hold densely.")

    dim = d2**n_sites
    operator = np.zeros((dim, dim))
    for a in range(r):
        # row[U, D, beta] with the leftmost alpha pinned to ``a``
        row = array[a]
        for _ in range(n_sites - 1):
            row = np.einsum("UDb,budc->UuDdc", row, array)
            rows, cols = row.shape[0] * row.shape[1], row.shape[2] * row.shape[3]
            row = row.reshape(rows, cols, r)
        operator += row[:, :, a]
    return operator


def validate_theta_row(theta: ThetaTensor, n_sites: int) -> float:
    """Max deviation between a Theta row and the dense layer, relative to its largest entry."""
    if n_sites < 2 or n_sites % 2:
        raise ValueError(f"validate_theta_row needs an even number of columns, got {n_sites}.")
    if 2 * n_sites > MAX_LAYER_SITES:
        raise ValueError(f"At most {MAX_LAYER_SITES // 2} columns fit the dense reference.")
    row = theta_row_operator(theta, n_sites)
    dense = trotter_layer_dense(theta.model, 2 * n_sites, theta.tau)
    scale = float(np.max(np.abs(dense)))
    return float(np.max(np.abs(row - dense)) / scale)


def lock_convention(model: ModelSpec, tau: float, n_sites: int = 2) -> Tuple[str, float]:
    """Return the first Theta convention whose row matches the dense layer."""
    deviations = {}
    for convention in THETA_CONVENTIONS:
        theta = build_theta(model, tau, convention=convention, validate=False)
        deviations[convention] = validate_theta_row(theta, n_sites)
        if deviations[convention] <= ROW_TOLERANCE:
            return convention, deviations[convention]
    raise ThetaValidationError(f"No Theta convention reproduces the Trotter layer: {deviations}")
