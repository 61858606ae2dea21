"""Simulation and sup-norm estimation toolkit for kinetic (position-velocity) diffusions.

Subpackage map: ``rates`` (closed-form rate calculus), ``kernels`` (product
kernels, convolutions, candidate grids), ``models`` / ``simulate`` (SDE
catalog, Euler and exact samplers), ``density`` / ``drift`` (kernel
estimators, variance probes, adaptive bandwidth selection), ``experiments``
(seeded Monte Carlo harness), ``cli`` (command-line front end).
"""

__version__ = "0.1.0"

from .density import (
    DensityEstimate,
    VarianceProbe,
    bias_bound,
    estimate_density,
    occupation_variance_bounds,
    supnorm_risk,
    variance_experiment,
)
from .drift import (
    AdaptiveSelection,
    DriftNumeratorEstimate,
    ThresholdConstants,
    delta_hat,
    estimate_numerator,
    estimate_numerator_conv,
    nw_drift,
    select_bandwidth,
    threshold_A,
)
from .experiments import ExperimentConfig, RiskReport, fit_slope, run_experiment, seed_for_cell
from .grids import EvalGrid
from .kernels import (
    BandwidthGrid,
    ProductKernel,
    UnivariateKernel,
    candidate_grid,
    convolve_pair,
    eval_scaled,
    in_H_class,
    make_order_kernel,
)
from .models import (
    AssumptionFlags,
    GibbsDensity,
    ModelSpec,
    double_well_model,
    free_model,
    free_transition_density,
    gibbs_invariant_density,
    harmonic_model,
)
from .rates import (
    RegimeKey,
    SmoothnessParams,
    bandwidth_from_smoothness,
    chi_B_member,
    psi_rate,
    psi_variance_scale,
    rate_exponent,
    truncation_r_T,
    upsilon,
)
from .simulate import (
    Trajectory,
    load_trajectory,
    save_trajectory,
    simulate_em,
    simulate_free_exact,
    stationary_start,
)
