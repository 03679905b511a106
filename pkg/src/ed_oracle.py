"""Brute-force exact diagonalization of short spin-1/2 chains.

Everything here is independent of the tensor-network machinery and serves as
ground truth: exact thermodynamics of finite rings and open chains, and the
dense second-order Trotter layer used to validate Theta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sparse
from scipy.special import logsumexp, softmax

from .logger import get_logger
from .models import ModelSpec, hamiltonian_term, model_gate
from .tensor_core import NumericalError

logger = get_logger("ed_oracle")

MAX_SPECTRUM_SITES = 14
MAX_LAYER_SITES = 12
BOUNDARIES = ("periodic", "open")


class OracleSizeError(NumericalError):
    """Raised when a dense construction would exceed the oracle's size caps."""


@dataclass(eq=False)
class DenseChain:
    n_sites: int
    boundary: str
    hamiltonian: np.ndarray = field(repr=False)
    _spectrum: np.ndarray | None = field(default=None, repr=False)

    @property
    def spectrum(self) -> np.ndarray:
        """Ascending eigenvalues, computed once per chain."""
        if self._spectrum is None:
            logger.debug("Diagonalizing %s chain with %s sites.", self.boundary, self.n_sites)
            self._spectrum = scipy.linalg.eigh(
                self.hamiltonian, eigvals_only=True, check_finite=False
            )
        return self._spectrum


def _operator_terms(term: np.ndarray, d: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split a two-site operator into sum_k left_k (x) right_k."""
    grouped = term.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    u, s, vh = np.linalg.svd(grouped)
    keep = s > 1e-15 * max(s[0], 1e-300) if s.size else []
    return [
        (s[k] * u[:, k].reshape(d, d), vh[k].reshape(d, d))
        for k in np.flatnonzero(keep)
    ]


def _embed_two_site(term: np.ndarray, i: int, j: int, n_sites: int, d: int) -> sparse.csr_matrix:
    total = sparse.csr_matrix((d**n_sites, d**n_sites))
    for left, right in _operator_terms(term, d):
        factors = [sparse.identity(d, format="csr")] * n_sites
        factors[i] = sparse.csr_matrix(left)
        factors[j] = sparse.csr_matrix(right)
        product = factors[0]
        for factor in factors[1:]:
            product = sparse.kron(product, factor, format="csr")
        total = total + product
    return total


def chain_bonds(n_sites: int, boundary: str) -> List[Tuple[int, int]]:
    bonds = [(i, i + 1) for i in range(n_sites - 1)]
    if boundary == "periodic":
        bonds.append((n_sites - 1, 0))
    return bonds


def dense_hamiltonian(spec: ModelSpec, n_sites: int, boundary: str = "periodic") -> DenseChain:
    """Sum of bond terms embedded by Kronecker products."""
    if boundary not in BOUNDARIES:
        raise ValueError(f"Unknown boundary {boundary!r}; expected one of {BOUNDARIES}.")
    if n_sites < 2:
        raise ValueError("A chain needs at least two sites.")
    if boundary == "periodic" and n_sites < 3:
        raise ValueError("Periodic chains need at least three sites.")
    if n_sites > MAX_SPECTRUM_SITES:
        raise OracleSizeError(
            f"{n_sites} sites exceeds the dense oracle cap of {MAX_SPECTRUM_SITES}."
        )

    term = hamiltonian_term(spec)
    d = spec.d
    hamiltonian = sparse.csr_matrix((d**n_sites, d**n_sites))
    for i, j in chain_bonds(n_sites, boundary):
        hamiltonian = hamiltonian + _embed_two_site(term, i, j, n_sites, d)
    return DenseChain(n_sites=n_sites, boundary=boundary, hamiltonian=hamiltonian.toarray())


def _check_temperature(T: float) -> float:
    if not T > 0:
        raise ValueError(f"Temperature must be positive, got {T}.")
    return 1.0 / T


def free_energy_ed(chain: DenseChain, T: float) -> float:
    """f = -T ln Tr exp(-H/T) / N with a max-shifted log-sum-exp."""
    beta = _check_temperature(T)
    return float(-T * logsumexp(-beta * chain.spectrum) / chain.n_sites)


def thermal_energy_ed(chain: DenseChain, T: float) -> float:
    beta = _check_temperature(T)
    weights = softmax(-beta * chain.spectrum)
    return float(np.dot(weights, chain.spectrum) / chain.n_sites)


def propagator_dense(chain: DenseChain, tau: float) -> np.ndarray:
    """exp(-tau H) by full diagonalization of the chain Hamiltonian."""
    eigenvalues, vectors = scipy.linalg.eigh(chain.hamiltonian)
    return (vectors * np.exp(-tau * eigenvalues)) @ vectors.T


def _shift_sites(operator: np.ndarray, n_sites: int, d: int) -> np.ndarray:
    """Relabel site k -> k+1 (mod n) on both sides of a dense operator."""
    tensor = operator.reshape((d,) * (2 * n_sites))
    outputs = [(k - 1) % n_sites for k in range(n_sites)]
    axes = outputs + [n_sites + a for a in outputs]
    return tensor.transpose(axes).reshape(d**n_sites, d**n_sites)


def trotter_layer_dense(spec: ModelSpec, n_sites: int, tau: float) -> np.ndarray:
    """One second-order step on a periodic ring of ``n_sites`` spins.

    The half-step gates sit on bonds (0,1), (2,3), ... and the full-step gates
    on bonds (1,2), (3,4), ..., (n-1,0); the layer is
    exp(-tau/2 H_half) exp(-tau H_full) exp(-tau/2 H_half).
    """
    if n_sites % 2:
        raise ValueError(f"The Trotter layer needs an even ring, got {n_sites} sites.")
    if n_sites < 2:
        raise ValueError("The Trotter layer needs at least two sites.")
    if n_sites > MAX_LAYER_SITES:
        raise OracleSizeError(f"{n_sites} sites exceeds the layer cap of {MAX_LAYER_SITES}.")

    d = spec.d
    half = model_gate(spec, tau / 2.0).matrix
    full = model_gate(spec, tau).matrix

    half_layer = np.ones((1, 1))
    full_layer = np.ones((1, 1))
    for _ in range(n_sites // 2):
        half_layer = np.kron(half_layer, half)
        full_layer = np.kron(full_layer, full)
    full_layer = _shift_sites(full_layer, n_sites, d)
    return half_layer @ full_layer @ half_layer


def trotter_free_energy_dense(spec: ModelSpec, n_sites: int, tau: float, K: int) -> float:
    """-ln Tr(layer^K) / (N K tau): the Trotterized finite-ring free energy."""
    if K < 1:
        raise ValueError("K must be at least one.")
    layer = trotter_layer_dense(spec, n_sites, tau)
    eigenvalues = scipy.linalg.eigvalsh(0.5 * (layer + layer.T))
    if np.any(eigenvalues <= 0):
        raise NumericalError("The dense Trotter layer is not positive definite.")
    beta = K * tau
    return float(-logsumexp(K * np.log(eigenvalues)) / (n_sites * beta))


def ed_table(spec: ModelSpec, sizes: Iterable[int], temperatures: Iterable[float]) -> pd.DataFrame:
    """(N, T, f, E) rows for the ``ed`` subcommand, periodic rings."""
    temperatures = list(temperatures)
    rows = []
    for n_sites in sizes:
        chain = dense_hamiltonian(spec, n_sites, "periodic")
        for T in temperatures:
            rows.append(
                {
                    "N": n_sites,
                    "T": T,
                    "f": free_energy_ed(chain, T),
                    "E": thermal_energy_ed(chain, T),
                }
            )
    return pd.DataFrame(rows, columns=["N", "T", "f", "E"])
