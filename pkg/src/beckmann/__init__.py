"""Dual solver and regularity diagnostics for the congested transport
equation ``-div((|grad u| - 1)_+^(q-1) grad u/|grad u|) = f``."""
from .maps import (Exponents, cost_h, conjugate_h_star, grad_h_star, h_map, v_gamma,
                   f_potential, f_potential_grad, legendre_bruteforce)
from .grid import (GridDomain, ScalarField, FluxField, discrete_gradient,
                   discrete_divergence, cell_gradients, write_fields, read_fields)
from .solver import (SolverConfig, Solution, ConvergenceError, dual_energy, energy_gradient,
                     recover_flux, divergence_residual, duality_gap, primal_value,
                     project_feasible, solve_dual)
from .problems import (ProblemSpec, make_radial, make_lipschitz_null, make_besov_source,
                       make_smooth_source)

__version__ = "0.1.0"
