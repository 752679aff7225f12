"""Numerical laboratory for polyharmonic boundary-data inversion."""

from ._polyharm import (
    __version__,
    bump,
    dtn_norm,
    fit_stability,
    grid_info,
    hodge_tensor,
    hodge_vector,
    scenario,
    validate_config,
    xi_lattice,
)

__all__ = [
    "__version__",
    "bump",
    "dtn_norm",
    "fit_stability",
    "grid_info",
    "hodge_tensor",
    "hodge_vector",
    "scenario",
    "validate_config",
    "xi_lattice",
]
