"""Joint offloading decisions and resource allocation for users sharing a
computing access point (CAP) in front of a remote cloud."""

__version__ = "0.1.0"

from .errors import (CapShareError, ClampExceedsTolerance, ConfigError, DegenerateMarginals,
                     DivisionByZeroResource, InfeasibleAllocation, MissingDeadline,
                     NumericalFailure, TooLarge)
from .model import (Allocation, CostBreakdown, DecisionVector, Instance, ObjectiveMode,
                    Placement, SharedParams, TaskProfile, UserParams, total_cost, user_delay)
from .resource_alloc import feasibility_check, solve_allocation
from .qcqp_sdp import build_qcqp, extract_marginals, solve_sdp
from .rounding import Provenance, RoundingConfig, Solution, share_cap
from .delay_alg import adaptive_adjustment, deterministic_recovery, sequential_tuning, share_cap_d
from .baselines import (cloud_only, exhaustive_optimal, local_cloud, local_only,
                        random_mapping, with_adjustment)

__all__ = [name for name in dir() if not name.startswith("_")]
