"""Grid solver and sub/supersolution checkers for parabolic complex Monge-Ampere flows."""

from .checkers import (
    LegendreParams,
    check_pluripotential_subsolution,
    check_pluripotential_supersolution,
    check_viscosity_subsolution,
    check_viscosity_supersolution,
    legendre_density,
)
from .envelope import perron_envelope, psh_envelope
from .errors import *  # noqa: F401,F403
from .exprlang import CompiledExpr, parse
from .fields import CheckReport, SliceField, SpaceTimeField, is_parabolic_potential, linf_distance
from .grid import ComplexGrid, DomainSpec, build_grid
from .harness import comparison_gap, convergence_study, exact_case, stability_experiment, theorem_a_suite
from .regularize import inf_convolution_time, sup_convolution_time, time_mollify
from .solver import FlowProblem, SolverParams, implicit_step, solve_flow
from .stencil import MAConvention, StencilFrameSet, lambda_min, ma_density

__version__ = "0.1.0"
