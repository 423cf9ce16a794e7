"""Reference policies and the exhaustive oracle."""

from __future__ import annotations

import itertools
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .delay_alg import adaptive_adjustment
from .errors import InfeasibleAllocation, TooLarge
from .model import DecisionVector, Instance, Placement
from .resource_alloc import DEFAULT_TOL, solve_allocation
from .rounding import Provenance, RoundingConfig, Solution, make_solution, sdr_rounding

ORACLE_CAP = 12
ORACLE_WARN = 10


def _fixed(instance, decision, provenance, deadlines_active, tol):
    res = solve_allocation(instance, decision, deadlines_active, tol)
    if not res.optimal:
        raise InfeasibleAllocation(f"decision {decision} cannot meet the deadlines")
    return make_solution(instance, decision, res, provenance)


def local_only(instance: Instance, deadlines_active: bool = False,
               tol: float = DEFAULT_TOL) -> Solution:
    dec = DecisionVector.uniform(instance.n, Placement.LOCAL)
    return _fixed(instance, dec, Provenance.LOCAL_ONLY, deadlines_active, tol)


def cloud_only(instance: Instance, deadlines_active: bool = False,
               tol: float = DEFAULT_TOL) -> Solution:
    dec = DecisionVector.uniform(instance.n, Placement.CLOUD)
    return _fixed(instance, dec, Provenance.CLOUD_ONLY, deadlines_active, tol)


def local_cloud(instance: Instance, config: RoundingConfig = RoundingConfig()) -> Solution:
    """The SDR + rounding pipeline with the CAP placement removed."""
    return sdr_rounding(instance, config, allow_cap=False)


def random_mapping(instance: Instance, seed: int = 0, deadlines_active: bool = False,
                   tol: float = DEFAULT_TOL) -> Solution:
    """One uniform placement per user, then optimal resources."""
    rng = np.random.default_rng(seed)
    dec = DecisionVector.from_codes(rng.integers(0, 3, instance.n))
    return _fixed(instance, dec, Provenance.RANDOMIZED, deadlines_active, tol)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CAPSHARE_THREADS", "1")))
    except ValueError:
        return 1


def exhaustive_optimal(instance: Instance, deadlines_active: bool = False,
                       tol: float = DEFAULT_TOL, cap: int = ORACLE_CAP,
                       placements: Sequence[Placement] = tuple(Placement),
                       workers: int | None = None) -> Solution:
    """Minimum cost over every decision in ``placements^N`` (lexicographic order).

    Ties keep the lexicographically first decision. Decisions whose
    resource-independent delays already miss a deadline are rejected by
    the resource solver before any iteration runs.
    """
    n = instance.n
    if n > cap:
        raise TooLarge(f"exhaustive search over {len(placements)}^{n} decisions exceeds "
                       f"the cap of N={cap}")
    if n > ORACLE_WARN:
        warnings.warn(f"exhaustive search with N={n} evaluates {len(placements) ** n} "
                      "decisions and may take hours", RuntimeWarning, stacklevel=2)
    placements = tuple(sorted(Placement(p) for p in placements))
    space = list(itertools.product(placements, repeat=n))
    workers = workers or _threads()

    def scan(chunk):
        best = None
        for k in chunk:
            dec = DecisionVector(space[k])
            res = solve_allocation(instance, dec, deadlines_active, tol)
            if res.optimal and (best is None or res.objective < best[1].objective):
                best = (k, res)
        return best

    if workers > 1:
        bounds = np.linspace(0, len(space), workers * 4 + 1).astype(int)
        chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(workers) as pool:
            parts = [p for p in pool.map(scan, chunks) if p is not None]
    else:
        part = scan(range(len(space)))
        parts = [part] if part is not None else []
    if not parts:
        raise InfeasibleAllocation("no decision satisfies the deadlines")
    # deterministic reduction: lowest cost, then lowest lexicographic index
    k, res = min(parts, key=lambda kr: (kr[1].objective, kr[0]))
    return make_solution(instance, DecisionVector(space[k]), res, Provenance.EXHAUSTIVE,
                         extras={"evaluated": len(space)})


def with_adjustment(method: Callable[[Instance], Solution], instance: Instance,
                    seed: int = 0, tol: float = DEFAULT_TOL) -> Solution:
    """Run ``method`` ignoring deadlines, then repair its decision to feasibility."""
    base = method(instance)
    rng = np.random.default_rng([seed, 2])
    adj = adaptive_adjustment(instance, base.decision, rng, tol)
    res = solve_allocation(instance, adj.decision, True, tol)
    return make_solution(instance, adj.decision, res, base.provenance, base.lower_bound,
                         fallback=base.fallback,
                         extras={**base.extras, "adjust_flips": adj.flipped})
