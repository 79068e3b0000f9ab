"""Spectral localizer invariants for tight-binding lattice models."""
from . import clifford, kernels, lattice, localizer, models, oracles, symmetry
from .localizer import LocalizerSpec, invariant
from .models import build

__version__ = "0.1.0"

__all__ = ["clifford", "kernels", "lattice", "localizer", "models", "oracles", "symmetry",
           "LocalizerSpec", "invariant", "build", "__version__"]
