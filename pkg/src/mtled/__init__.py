"""Meshless total-Lagrangian explicit dynamics for soft solids.

Scattered-node discretization with penalty-stabilized moving-least-squares
shape functions, background tetrahedral integration cells with optional
adaptive refinement, hyperelastic materials, exact essential-boundary
imposition, and explicit stepping (dynamic relaxation or transient).
"""

from .cloud import (
    AdmissibilityReport,
    BoundarySpec,
    NodeCloud,
    build_cloud,
    check_admissibility,
    min_node_spacing,
    nearest_neighbor_distances,
    support_nodes,
)
from .errors import (
    ConvergenceError,
    DegenerateCellError,
    DiscretizationError,
    DivergenceError,
    EbcConditioningError,
    InadmissibleSupportError,
    InvertedElementError,
    ModelFormatError,
    MtledError,
    SingularMomentMatrixError,
)
from .materials import (
    NeoHookeanParams,
    OgdenParams,
    neo_hookean_spk,
    ogden_spk,
    small_strain_moduli,
    spk_stress,
    strain_energy,
)
from .metrics import (
    ErrorReport,
    cube_uniaxial_solution,
    error_report,
    lateral_stretch,
    nre_field,
    nrmse,
)
from .mmls import MmlsConfig, MmlsEvaluator, mls_shape_oracle, mmls_shape
from .model_io import load_model, parse_model, save_model, serialize_model
from .quadrature import (
    AdaptiveConfig,
    IntegrationSet,
    QuadratureRule,
    adaptive_integrate,
    fixed_integration_set,
    less_smooth_integrand,
    make_rule,
    subdivide_tet,
)
from .solver import (
    Model,
    Precomputed,
    SolveConfig,
    SolveResult,
    critical_timestep,
    internal_force,
    precompute,
    smooth_load_factor,
    solve,
)

__version__ = "0.1.0"
