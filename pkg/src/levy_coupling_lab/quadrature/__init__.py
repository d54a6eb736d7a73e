"""Deterministic singular quadrature for the operators and coupling functionals."""

from .drift import (
    admissible_epsilon,
    default_c2,
    drift_margin,
    drift_margins,
    j_nu,
    j_of_r,
    lambda_psi,
    log_grid,
    prop32_margin,
    prop32_report,
)
from .gk import QuadratureBudgetError
from .operators import (
    OperatorResult,
    QuadratureConfig,
    apply_coupling,
    apply_coupling_mu,
    apply_L,
    apply_L_mu,
    apply_L_star,
    apply_LC,
    apply_LR,
    lc_closed_form,
    mass_mu,
    mass_nu_u,
)
