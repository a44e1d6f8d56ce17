"""Learned energy-dissipating descent directions for variational problems.

A direction model proposes ``d`` from ``(u, f, grad E(u))``; a cone layer
makes ``d`` a guaranteed descent direction, and a backtracking line search
turns it into a monotone decrease of the energy ``E``.
"""

from . import cone, energies, feasibility, models, operators, optimizer, problems, tensor, trainer
from .cone import ConeSpec, enforce
from .energies import CharbonnierTV, Composite, Energy, LeastSquares
from .models import ConvDirection, MLPDirection, RawGradient, load_model, save_model
from .optimizer import DescentConfig, descend

__version__ = "0.1.0"

__all__ = [
    "cone", "energies", "feasibility", "models", "operators", "optimizer", "problems",
    "tensor", "trainer",
    "ConeSpec", "enforce", "Energy", "LeastSquares", "CharbonnierTV", "Composite",
    "RawGradient", "MLPDirection", "ConvDirection", "save_model", "load_model",
    "DescentConfig", "descend",
]
