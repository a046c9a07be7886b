"""Simulation and numerical audits for rank-one cutting-and-stacking systems.

Subpackages by concern:

* ``construction``: declarative spacer/cut plans and their exact realization.
* ``symbolic``: tower names and correlation counting with error bounds.
* ``operators``: finite-stage Markov matrices and weak-limit fitting.
* ``joinings``: off-diagonal joinings, column/strip geometry, audits.
* ``estimators``: desk-scale partial-mixing/rigidity/local-rank estimates.
* ``cli``: the declarative experiment runner.
"""

__version__ = "0.1.0"

from .construction import (
    Construction,
    ConstructionParams,
    ProductSystem,
    SpacerPlan,
    StageParams,
    chacon_params,
    katok_params,
    odometer_params,
    ornstein_params,
    pair_with_offset_one,
    paired_preset,
    preset_params,
    realize,
    tensor_power,
)
from .joinings import Joining, Rectangle, relative_product, shift, strip_audit
from .symbolic import LevelSet, correlation, orbit_oracle_correlation, recursive_pair_count, tower_name
from .operators import dictionary, markov_matrix, nnls_decompose, weak_limit_scan

__all__ = [
    "__version__",
    "Construction",
    "ConstructionParams",
    "ProductSystem",
    "SpacerPlan",
    "StageParams",
    "Joining",
    "Rectangle",
    "LevelSet",
    "chacon_params",
    "katok_params",
    "odometer_params",
    "ornstein_params",
    "pair_with_offset_one",
    "paired_preset",
    "preset_params",
    "realize",
    "tensor_power",
    "relative_product",
    "shift",
    "strip_audit",
    "correlation",
    "orbit_oracle_correlation",
    "recursive_pair_count",
    "tower_name",
    "dictionary",
    "markov_matrix",
    "nnls_decompose",
    "weak_limit_scan",
]
