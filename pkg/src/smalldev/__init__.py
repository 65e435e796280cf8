"""Small-deviation asymptotics and rarefaction limits for absorbed diffusions."""

__version__ = "0.1.0"

from .exprdsl import parse
from .model import Ball, Box, DiffusionModel, validate
from .spectral import analytic_eigensystem, fd_eigensystem
from .asymptotics import principal_term, v0_value
from .mc import estimate_survival
from .rarefaction import SeedMeasure, run as rarefy

__all__ = [
    "Ball",
    "Box",
    "DiffusionModel",
    "SeedMeasure",
    "analytic_eigensystem",
    "estimate_survival",
    "fd_eigensystem",
    "parse",
    "principal_term",
    "rarefy",
    "v0_value",
    "validate",
]
