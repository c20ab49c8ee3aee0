"""Numerical laboratory for 1D stochastic homogenization of two-scale energies."""
__version__ = "0.1.0"

from .coeff import CoefficientField, FieldModel, MacroModulus, eval_macro, realize, shift
from .wells import A0, W
from .sharp_cell import (CellResult, SawtoothProfile, estimate_alpha, min_jump_spacing,
                         minimize_sharp_dp, sharp_energy, sup_bound_check)
from .diffuse import (DiscreteProfile, MinResult, build_test_function, diffuse_energy,
                      diffuse_gradient, local_average_integrand, minimize_diffuse)
from .convex_cell import (LagrangianSpec, cell_minimum_1d, convexity_check,
                          glue_affine_boundary, homogenized_lagrangian)
from .ymeasure import (EmpiricalMeasure, energy_from_measure, invariance_diagnostic,
                       marginal_q_diagnostic, window_samples)
from .gamma import (DiscretizedFunctional, GammaDistanceConfig, gamma_distance,
                    gamma_limit_check, yosida)
