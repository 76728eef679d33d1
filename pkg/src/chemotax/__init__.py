"""Bifurcation analysis toolkit for the 1-D stationary Keller-Segel model with logistic growth."""
from .grid import Grid, StateField
from .kinetics import ModelParams, custom_kinetics, linear_kinetics, nondimensionalize

__all__ = ["Grid", "StateField", "ModelParams", "linear_kinetics", "custom_kinetics", "nondimensionalize"]
__version__ = "0.1.0"
