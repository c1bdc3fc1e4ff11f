"""Lattice partitioners producing storage layouts."""
from .effveda import effveda_run
from .finalize import finalize
from .state import LatticeState, storage_cap
from .veda import Veda, veda_run

__all__ = ["LatticeState", "Veda", "effveda_run", "finalize", "storage_cap", "veda_run"]
