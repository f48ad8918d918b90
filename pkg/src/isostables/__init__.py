"""Koopman eigenfunctions, isochrons and isostables of limit cycles.

Phase-amplitude coordinates of a stable limit cycle are computed as Fourier
and Laplace time averages over a grid of initial states, then used for
reduced simulations of forced oscillators.
"""

__version__ = "0.1.0"

from .models import Model, PolynomialField, builtin_model, load_polynomial_model
from .cycle import FourierOrbit, harmonic_balance, orbit_from_integration, solve_cycle
from .flow import KoopmanSpectrum, floquet_spectrum, propagate
from .chart import PolarChart, build_chart
from .averages import AverageRequest, evaluate_batch, fourier_request, laplace_request
from .fields import Box, GridField, inverse_map, isochrons, level_sets, sweep
from .reduction import FieldBundle, InputSignal, pulse_map, simulate_reduced

__all__ = [
    "Model", "PolynomialField", "builtin_model", "load_polynomial_model",
    "FourierOrbit", "harmonic_balance", "orbit_from_integration", "solve_cycle",
    "KoopmanSpectrum", "floquet_spectrum", "propagate",
    "PolarChart", "build_chart",
    "AverageRequest", "evaluate_batch", "fourier_request", "laplace_request",
    "Box", "GridField", "inverse_map", "isochrons", "level_sets", "sweep",
    "FieldBundle", "InputSignal", "pulse_map", "simulate_reduced",
]
