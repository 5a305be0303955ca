"""Numerical laboratory for reverse Riesz inequalities on manifolds with ends."""

__version__ = "0.1.0"

from .covering import AdmissibleCovering, admissible_cover, localize, verify_covering
from .cz import CZDecomposition, cz_decompose, maximal_function, verify_cz
from .geometry import (
    Ball,
    GraphError,
    LatticeSpec,
    WeightedGraph,
    annulus,
    ball,
    build_conic_end,
    build_connected_sum,
    build_lattice_box,
    estimate_volume_growth,
    volume,
)
from .inequalities import (
    InequalityEstimate,
    TestDictionary,
    hardy_constant,
    poincare_constant,
    reverse_riesz_constant,
    riesz_constant,
)
from .spectral import QuadratureSettings, sqrt_apply, sqrt_apply_quadrature, sqrt_apply_spectral, split_TU

__all__ = [
    "AdmissibleCovering", "admissible_cover", "localize", "verify_covering",
    "CZDecomposition", "cz_decompose", "maximal_function", "verify_cz",
    "Ball", "GraphError", "LatticeSpec", "WeightedGraph", "annulus", "ball", "build_conic_end",
    "build_connected_sum", "build_lattice_box", "estimate_volume_growth", "volume",
    "InequalityEstimate", "TestDictionary", "hardy_constant", "poincare_constant",
    "reverse_riesz_constant", "riesz_constant",
    "QuadratureSettings", "sqrt_apply", "sqrt_apply_quadrature", "sqrt_apply_spectral", "split_TU",
]
