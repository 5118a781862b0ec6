"""Retarded Green operators, delay Ornstein-Uhlenbeck simulation and
regularity diagnostics in a finite spectral truncation."""

from .spectral import (
    SpectralModel,
    DenseOperator,
    dirichlet_laplacian,
    semigroup_apply,
    resolvent_apply,
    yosida_generator,
    fractional_power_apply,
    operator_norm,
)
from .delay import (
    Segment,
    DelayOperator,
    point_delay,
    apply_F,
    right_extension,
    structure_apply,
    extension_constant,
)
from .green import (
    GreenTable,
    green_method_of_steps,
    green_volterra_series,
    quasi_semigroup_residual,
    growth_fit,
    yosida_green,
    green_table_to_csv,
    green_table_from_csv,
)
from .noise import (
    QWiener,
    NoisePath,
    sample_noise,
    brownian_bridge_refine,
    covariance_check,
)
from .convolution import (
    ConvolutionConfig,
    ConvolutionSimulator,
    convolve_direct,
    convolve_factorized,
    mild_solution,
    trace_condition,
    factorization_identity_value,
)
from .analysis import (
    RegularityReport,
    BdgReport,
    holder_estimate,
    fractional_path_regularity,
    dAalpha_norm,
    yosida_moment_convergence,
    bdg_ratio,
)
from .deterministic import (
    ForcingFunction,
    solve_inhomogeneous,
    solve_delay_classical,
    integrated_identity_residual,
)

__version__ = "0.1.0"
