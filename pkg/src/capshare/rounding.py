"""Randomised rounding of SDP marginals into offloading decisions.

Marginals ``p_i`` from the relaxation are turned into joint placement
probabilities, ``M`` decisions are sampled from them, each is priced by
the resource solver, and the best is compared with the all-local and
all-cloud decisions.

Sampling uses numpy's PCG64 generator (``numpy.random.default_rng``)
seeded from the config. Each trial draws one uniform per user in user
order, so the first ``M`` trials of a run with ``M' > M`` are exactly
the trials of the shorter run.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ClampExceedsTolerance, DegenerateMarginals, NumericalFailure
from .model import Allocation, CostBreakdown, DecisionVector, Instance, Placement, total_cost
from .qcqp_sdp import DEFAULT_SDP_TOL, build_qcqp, solve_sdp
from .resource_alloc import DEFAULT_TOL, solve_allocation

DEGENERATE_MASS = 1e-15


class Provenance(enum.Enum):
    RANDOMIZED = "randomized"
    LOCAL_ONLY = "local-only"
    CLOUD_ONLY = "cloud-only"
    DETERMINISTIC = "deterministic"
    TUNED = "tuned"
    FIXED = "fixed"  # baseline with a prescribed decision
    EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class RoundingConfig:
    trials: int = 10
    seed: int = 0
    tol: float = DEFAULT_TOL
    sdp_tol: float = DEFAULT_SDP_TOL

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class Solution:
    decision: DecisionVector
    alloc: Allocation
    cost: CostBreakdown
    provenance: Provenance
    lower_bound: float = math.nan
    # True when the SDP step failed and a fallback start was used
    fallback: bool = False
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def total(self) -> float:
        return self.cost.total

    def verify(self, instance: Instance, rtol: float = 1e-9) -> None:
        """Recompute the cost from (decision, alloc); raise if it disagrees."""
        again = total_cost(instance, self.decision, self.alloc).total
        if abs(again - self.cost.total) > rtol * max(1.0, abs(again)):
            raise AssertionError(f"stored cost {self.cost.total} != recomputed {again}")


def joint_probabilities(p) -> np.ndarray:
    """Per-placement weights ``U^s = p^s * prod_{s' != s} (1 - p^s')``, normalised."""
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    u = np.array([p[0] * q[1] * q[2], p[1] * q[0] * q[2], p[2] * q[0] * q[1]])
    mass = u.sum()
    if mass < DEGENERATE_MASS:
        raise DegenerateMarginals(f"joint weights vanish for marginals {p.tolist()}")
    return u / mass


def placement_probabilities(marginals) -> np.ndarray:
    """Rows of joint probabilities; degenerate rows fall back to the marginals."""
    out = []
    for p in np.asarray(marginals, dtype=float):
        try:
            out.append(joint_probabilities(p))
        except DegenerateMarginals:
            out.append(p / p.sum())
    return np.array(out)


def sample_decision(P, rng: np.random.Generator) -> DecisionVector:
    """Draw one placement per user from the rows of ``P`` (one uniform each)."""
    P = np.asarray(P, dtype=float)
    u = rng.random(P.shape[0])
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    codes = (u[:, None] >= cum).sum(axis=1)
    return DecisionVector.from_codes(np.minimum(codes, 2))


class _Evaluator:
    """Memoised optimal cost of decisions on one instance."""

    def __init__(self, instance: Instance, tol: float, deadlines_active: bool = False):
        self.instance = instance
        self.tol = tol
        self.deadlines_active = deadlines_active
        self.cache: dict[str, object] = {}

    def __call__(self, decision: DecisionVector):
        key = str(decision)
        res = self.cache.get(key)
        if res is None:
            res = solve_allocation(self.instance, decision, self.deadlines_active, self.tol)
            self.cache[key] = res
        return res


def make_solution(instance, decision, res, provenance, lower_bound=math.nan, **kw) -> Solution:
    return Solution(decision, res.alloc, total_cost(instance, decision, res.alloc),
                    provenance, lower_bound, **kw)


def sdr_rounding(instance: Instance, config: RoundingConfig, allow_cap: bool = True) -> Solution:
    """Shared SDR + randomisation pipeline (``allow_cap=False`` gives the no-CAP variant)."""
    n = instance.n
    evaluate = _Evaluator(instance, config.tol)
    bench = [(DecisionVector.uniform(n, Placement.LOCAL), Provenance.LOCAL_ONLY),
             (DecisionVector.uniform(n, Placement.CLOUD), Provenance.CLOUD_ONLY)]
    try:
        sol = solve_sdp(build_qcqp(instance, allow_cap=allow_cap), config.sdp_tol)
    except (NumericalFailure, ClampExceedsTolerance) as exc:
        best = min(bench, key=lambda dp: evaluate(dp[0]).objective)
        return make_solution(instance, best[0], evaluate(best[0]), best[1],
                             fallback=True, extras={"error": str(exc)})

    P = placement_probabilities(sol.marginals)
    rng = np.random.default_rng(config.seed)
    candidates = [(sample_decision(P, rng), Provenance.RANDOMIZED)
                  for _ in range(config.trials)]
    best_dec, best_prov, best_res = None, None, None
    for dec, prov in candidates + bench:
        res = evaluate(dec)
        if best_res is None or res.objective < best_res.objective:
            best_dec, best_prov, best_res = dec, prov, res
    return make_solution(instance, best_dec, best_res, best_prov, sol.lower_bound,
                         extras={"marginals": sol.marginals, "sdp_gap": sol.gap})


def share_cap(instance: Instance, config: RoundingConfig = RoundingConfig(),
              tune: bool = False) -> Solution:
    """SDR with randomised rounding; ``tune`` adds a local-search pass afterwards.

    Deadlines on the instance are ignored here (see ``delay_alg.share_cap_d``).
    """
    best = sdr_rounding(instance, config, allow_cap=True)
    if not tune:
        return best
    from .delay_alg import sequential_tuning

    rng = np.random.default_rng([config.seed, 1])
    dec, alloc, trace = sequential_tuning(instance, best.decision, best.alloc, rng,
                                          deadlines_active=False, tol=config.tol)
    if trace.flips:
        return Solution(dec, alloc, total_cost(instance, dec, alloc), Provenance.TUNED,
                        best.lower_bound, best.fallback, {**best.extras, "trace": trace})
    return best
