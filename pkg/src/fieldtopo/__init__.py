"""fieldtopo: topology of smoothed random fields, measured against theory.

Synthesizes Gaussian fields (white-noise convolution) and shot-noise fields
(marked Poisson sums) on lattice windows, computes the persistent homology
of superlevel sets with an exact cubical reduction, and runs the ensemble
experiments that probe the limit behavior of component counts: central
limit trends, variance scaling, noise-resampling stabilization, conditional
variance lower bounds, critical-point rates and component diameter tails.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .clt import (
    EnsembleSummary,
    FunctionalPath,
    central_identity_gap,
    chentsov_moment,
    cumulants,
    ensemble_run,
    functional_path,
    gaussian_rice_rate,
    level_moment_diagnostic,
    mean_density,
    multilevel_covariance,
    normality_test,
    refinement_agreement,
    variance_scaling,
)
from .config import RunConfig, parse_config, validate_config
from .cubical import (
    BettiPath,
    ComponentRecord,
    CubicalFiltration,
    PersistenceDiagram,
    betti_at,
    betti_curve,
    betti_jump_levels,
    build_filtration,
    component_containing,
    component_records,
    components_at_level,
    critical_values,
    euler_at,
    euler_curve,
    persistence_diagram,
    persistent_betti,
    split_monotone,
)
from .errors import ConfigError, GeometryError, KernelError, ResourceError
from .excursion import TailCurve, critical_cells, diameter_tail, locate_critical_points
from .fields import (
    DeltaField,
    GridField,
    ModelConfig,
    delta_field,
    refinement_pair,
    resample_box,
    resample_halfspace,
    sample_gaussian_field,
    sample_shot_noise_field,
    synthesize_gaussian,
    synthesize_gradient,
    synthesize_shot_noise,
    white_noise_for,
)
from .geometry import Box, cube_centered, unit_cube_at
from .kernels import (
    KernelSpec,
    covariance,
    evaluate,
    kernel_derivative,
    kernel_norm,
    make_kernel,
    spectral_moments,
    support_radius,
)
from .perturbation import (
    ResampleRecord,
    SigmaConditional,
    StabilizationSample,
    change_probability_curve,
    delta_variance_profile,
    sigma_conditional,
    stabilization_radius,
    topology_change_probability,
)
from .rng import (
    ALGORITHM_ID,
    MarkDistribution,
    PointConfiguration,
    RngStream,
    WhiteNoiseGrid,
    discrete_marks,
    make_stream,
    point_mass,
    sample_poisson_points,
    sample_white_noise,
    uniform_marks,
)

__all__ = [name for name in dir() if not name.startswith("_")]
