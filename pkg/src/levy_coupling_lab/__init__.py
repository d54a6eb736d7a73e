"""Numerical laboratory for couplings of Lévy-type operators with variable jump coefficient.

Modules: :mod:`kernels` (measures, coefficients, coupling kernels, moduli),
:mod:`quadrature` (operator and functional evaluation), :mod:`modulus`
(test functions psi), :mod:`simulator` (thinning simulation of single and
coupled processes), :mod:`estimators` (Monte Carlo checks) and :mod:`cli`.
"""

__version__ = "0.1.0"

from .functions import PairFunction, RadialProfile, SmoothFunction
from .kernels import (
    CoefficientField,
    KernelBundle,
    LevyMeasureSpec,
    PerturbationKernel,
    branch_densities,
    clip_displacement,
    coeff4,
    modulus_w,
    modulus_w_mu,
    modulus_w_star,
    nu_u_density,
    stable_bounds_check,
)
from .modulus import ModulusFunction, psi_eval, shape_check
from .quadrature import QuadratureConfig, OperatorResult
from .simulator import SimParams, simulate_coupled, simulate_single
