"""Heat-trace spectra of the ten closed flat 3-manifolds.

Closed-form traces with certified truncation error, two independent
verification oracles (group-average quadrature and dual-lattice spectra),
inverse reconstruction of manifold parameters from trace samples, and the
isospectral non-homeomorphic pair search.
"""

from .geometry import (
    CLASS_NAMES,
    CoveringEdge,
    ManifoldDescriptor,
    ValidationError,
    canonical_form,
    covering_info,
    descriptor,
    holonomy_elements,
    is_isometric,
    is_orientable,
    scale,
    translation_lattice,
    validate,
    volume,
)
from .heat_trace import theta1, trace, trace_grid
from .inverse import classify_orientability, eigenvalues_from_trace, extract_volume, reconstruct
from .isospec import isospectral, m4_m6_pair, search_pairs
from .lattice import EnumerationCapError, Lattice3, dual, enumerate_within
from .oracle import Spectrum, partial_heat_sum, spectrum, trace_by_quadrature

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "CoveringEdge",
    "EnumerationCapError",
    "Lattice3",
    "ManifoldDescriptor",
    "Spectrum",
    "ValidationError",
    "canonical_form",
    "classify_orientability",
    "covering_info",
    "descriptor",
    "dual",
    "eigenvalues_from_trace",
    "enumerate_within",
    "extract_volume",
    "holonomy_elements",
    "is_isometric",
    "is_orientable",
    "isospectral",
    "m4_m6_pair",
    "partial_heat_sum",
    "reconstruct",
    "scale",
    "search_pairs",
    "spectrum",
    "theta1",
    "trace",
    "trace_by_quadrature",
    "trace_grid",
    "translation_lattice",
    "validate",
    "volume",
]
