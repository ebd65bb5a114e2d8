"""Simulation and diffusion analysis of multi-class, multi-pool service
systems under the Leaf Activity Priority (LAP) policy."""

from .diffusion import (DiffusionModel, build_drift, build_lift_operator, build_model,
                        check_local_stability, simulate_ou, stationary_covariance)
from .errors import (AssumptionViolated, InvalidHorizon, LapsimError, UnknownVertex,
                     ValidationError)
from .harness import (Prepared, convergence_metrics, descent_experiment, emit_report,
                      run_sweep)
from .lap import (EquilibriumPoint, PriorityAssignment, assign_priorities, check_assumption3,
                  compute_equilibrium)
from .model import SystemSpec, load_spec, make_spec, neighbors, validate_spec
from .planner import CrpReport, SppSolution, check_crp, solve_spp
from .simulator import (SimState, StationaryStats, route_arrival, scaled_deviation,
                        schedule_completion, simulate_stationary, step)

__version__ = "0.1.0"
