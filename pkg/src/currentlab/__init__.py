"""currentlab: particle-current fluctuations of lattice walks in a random medium.

A numpy/scipy laboratory with three layers: exact quenched dynamic
programming for distributions and current moments, seeded Monte Carlo for
everything a closed form cannot reach, and closed-form limit covariances the
two are verified against.
"""

from .environment import (
    Environment,
    EnvSpec,
    QuenchedFunctionals,
    SpecError,
    TheoryParams,
    corrector_at,
    front_corrector,
    make_spec,
    point_mass,
    sample_environment,
    theory_params,
    two_point,
)
from .kernel import (
    CurrentMoments,
    InitMoments,
    SiteField,
    WindowError,
    evolve_pmf,
    front_cutoff,
    joint_tail_field,
    martingale_defect,
    quenched_cov_current,
    quenched_mean_current,
    step_of,
    tail_field,
)
from .limits import (
    LimitParams,
    ZPathSample,
    averaged_fbm_cov,
    bvn_cdf,
    cov_given_shift,
    cov_kernel,
    cov_kernel_quadrature,
    finite_size_quadratic_form,
    gaussian_negative_part,
    mixture_moments,
    sample_shift_path,
)
from .particles import (
    CurrentObservation,
    InitialConfig,
    evolve_config,
    init_moments,
    observer_current,
    plan_site_band,
    plan_window,
    sample_initial,
    simulate_walks,
    study_environment,
)
from .stats import (
    CovReport,
    ScalingFit,
    correlation_with_se,
    count_gof,
    estimate_cov,
    moment_normality,
    scaling_fit,
    tolerance_check,
)

__version__ = "0.1.0"
