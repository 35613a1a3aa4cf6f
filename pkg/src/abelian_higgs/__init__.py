"""Lattice Abelian Higgs model: discrete geometry, Gaussian operators, expansion coefficients and Monte Carlo.

The Monte Carlo subpackage compiles numba kernels and is imported on demand.
"""
from .lattice import Form, GeometryError, LatticeGeometry, codifferential, exterior_derivative
from .model import BENCHMARK, ConfigError, Couplings, DomainError, load_config

__version__ = "0.1.0"

__all__ = ["BENCHMARK", "ConfigError", "Couplings", "DomainError", "Form", "GeometryError", "LatticeGeometry",
           "codifferential", "exterior_derivative", "load_config"]
