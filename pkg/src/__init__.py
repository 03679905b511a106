"""Finite-temperature free energies of infinite spin chains by tensor-network tailoring."""

__version__ = "0.1.0"
