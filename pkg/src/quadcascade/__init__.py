"""Cascade quadcopter trajectory tracking with a certified outer-loop MPC.

Modules: ``outer_model`` (error model + constraint geometry),
``certificates`` (stability bundle), ``mpc`` (interior-point solver and
controller variants), ``reference`` (flatness-based feasible references),
``vehicle`` (plant, attitude commands, inner loop), ``harness`` (closed-loop
experiments), ``cli`` (run/compare/certify/audit).
"""

from .certificates import Certificate, build_certificate, lyapunov_decrease_check
from .harness import ExperimentConfig, compare_variants, prepare, run_closed_loop
from .mpc import MpcConfig, MpcSolution, OuterLoopMpc, solve, terminal_cost
from .outer_model import (DiscreteModel, RhoSchedule, SlabSet,
                          compute_rho_star, discretize, dodecahedron_set,
                          feasibility_condition, unified_input_set)
from .reference import (FlatTrajectory, ReferencePoint, build_rho_schedule,
                        circular_profile, flat_to_reference, hover_profile)
from .vehicle import (AttitudeCommand, InnerLoopGains, PlantParams, QuadState,
                      flatness_attitude, inner_loop_torque, integrate_rk4,
                      plant_derivative)

__version__ = "0.1.0"
