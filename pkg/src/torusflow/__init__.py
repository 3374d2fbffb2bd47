"""Numerical laboratory for low-regularity metrics on flat tori.

Weak scalar-curvature functionals of W^{1,p} metrics against smooth
backgrounds, mollification with quantitative error reports, the
background-gauged curvature flow with its estimate suite, backward heat
transport with the monotone curvature functional, and singular test
metrics with cutoff localization.
"""

from .errors import (
    ConfigInvalid,
    InsufficientSamples,
    KernelTooWide,
    KernelUnresolved,
    LostEllipticity,
    MismatchedScenarios,
    NegativeTerminalData,
    SingularMetric,
    SpecInfeasible,
    TorusflowError,
    TrajectoryTooCoarse,
    UnresolvedCutoff,
)
from .grid import (
    Christoffel3Field,
    CovectorField,
    GridSpec,
    ScalarField,
    Sym2Field,
    TensorField,
    VectorField,
    convolve,
    field_to_csv,
    integrate,
    load_field,
    lp_norm,
    partial_derivative,
    pointwise_norm,
    save_field,
    second_partial,
)
from .geometry import (
    BackgroundMetric,
    CurvatureTensors,
    MetricField,
    PairingReport,
    classical_curvature,
    covariant_derivative,
    covariant_metric_derivative,
    deturck_field_W,
    difference_christoffel,
    distributional_pairing,
    pairing_vector_V,
    scalar_F,
    tensor_norm,
)
from .testfunctions import TestFunction, standard_library
from .mollify import MollifierKernel, MollificationReport, mollify_metric, mollification_report
from .singular import (
    CutoffFamily,
    FloorReport,
    SingularMetricSpec,
    build_cutoffs,
    make_singular_metric,
    verify_distributional_floor,
)
from .flow import (
    BarrierReport,
    DecayFit,
    FlowConfig,
    FlowTrajectory,
    IntegralCurvatureBounds,
    barrier_check,
    decay_fit,
    hflow_rhs,
    integral_rm_check,
    run_flow,
)
from .conjheat import (
    ConjugateSolution,
    EnergyReport,
    KernelMassReport,
    MonotoneReport,
    constant_trajectory,
    energy_bound_check,
    kernel_mass,
    monotone_functional_check,
    solve_conjugate,
)

__version__ = "0.1.0"
