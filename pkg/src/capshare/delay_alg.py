"""Deadline-aware offloading: recovery, repair to feasibility, local search.

The three steps are

1. round the deadline-constrained relaxation deterministically (argmax
   of the marginals, ties to Local, then CAP, then Cloud);
2. flip randomly chosen offloaded users to Local until the decision
   admits an allocation meeting every deadline;
3. first-improvement search over single-user placement changes, with
   resources re-optimised for every candidate, until a full pass finds
   no strictly cheaper feasible neighbour.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ClampExceedsTolerance, InfeasibleAllocation, MissingDeadline, NumericalFailure
from .model import Allocation, DecisionVector, Instance, Placement, total_cost
from .qcqp_sdp import DEFAULT_SDP_TOL, build_qcqp, solve_sdp
from .resource_alloc import DEFAULT_TOL, feasibility_check, solve_allocation
from .rounding import Provenance, Solution

# cost comparisons: improvement must beat IMPROVE_ABS + IMPROVE_REL*|cost|
IMPROVE_ABS = 1e-9
IMPROVE_REL = 1e-9
_TIE = 1e-12


@dataclass
class TuningTrace:
    iterations: int = 0
    passes: int = 0
    cost_sequence: list[float] = field(default_factory=list)
    flips: list[tuple[int, Placement, Placement]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "cost", "flip"])
        for k, cost in enumerate(self.cost_sequence):
            flip = ""
            if k > 0:
                i, old, new = self.flips[k - 1]
                flip = f"{i}:{old.code}->{new.code}"
            w.writerow([k, repr(cost), flip])
        return buf.getvalue()


class Adjustment(NamedTuple):
    decision: DecisionVector
    alloc: Allocation
    flipped: tuple[int, ...]


def improves(new: float, old: float) -> bool:
    return new < old - (IMPROVE_ABS + IMPROVE_REL * abs(old))


def deterministic_recovery(marginals) -> DecisionVector:
    """Argmax placement per user; near-ties go to Local, then CAP, then Cloud."""
    codes = []
    for p in np.asarray(marginals, dtype=float):
        top = p.max()
        codes.append(int(np.flatnonzero(p >= top - _TIE)[0]))
    return DecisionVector.from_codes(codes)


def _require_deadlines(instance: Instance):
    if not instance.has_deadlines:
        raise MissingDeadline("every user needs a deadline")
    arr = instance.arrays
    bad = np.flatnonzero(arr.t_local > arr.deadline * (1 + 1e-9))
    if bad.size:
        raise InfeasibleAllocation(
            f"local processing misses the deadline for users {bad.tolist()}; "
            "no decision can be made feasible")


def adaptive_adjustment(instance: Instance, x0: DecisionVector, rng: np.random.Generator,
                        tol: float = DEFAULT_TOL) -> Adjustment:
    """Flip uniformly chosen offloaded users to Local until deadlines are met."""
    _require_deadlines(instance)
    x = x0
    flipped = []
    while True:
        res = feasibility_check(instance, x, tol)
        if res.feasible:
            return Adjustment(x, res.alloc, tuple(flipped))
        off = np.flatnonzero(x.codes != Placement.LOCAL)
        if off.size == 0:  # unreachable under the precondition
            raise InfeasibleAllocation("all-local decision misses a deadline")
        i = int(off[rng.integers(off.size)])
        x = x.replace(i, Placement.LOCAL)
        flipped.append(i)


def sequential_tuning(instance: Instance, x_feasible: DecisionVector, alloc: Allocation,
                      rng: np.random.Generator, deadlines_active: bool = True,
                      tol: float = DEFAULT_TOL):
    """First-improvement single-flip search; returns ``(decision, alloc, trace)``.

    Users are scanned in a fresh random order after every accepted move.
    The search ends after a complete pass over all ``2N`` alternatives
    finds no strict improvement, so the output is a local optimum of that
    neighbourhood.
    """
    if deadlines_active:
        _require_deadlines(instance)
    cache: dict[str, object] = {}

    def evaluate(dec):
        key = str(dec)
        if key not in cache:
            cache[key] = solve_allocation(instance, dec, deadlines_active, tol)
        return cache[key]

    x = x_feasible
    # the input allocation is only a witness; price x with optimal resources
    start = evaluate(x)
    if not start.optimal:
        raise InfeasibleAllocation("sequential tuning needs a feasible starting decision")
    best_alloc, cost = start.alloc, start.objective
    trace = TuningTrace(cost_sequence=[cost])
    n = instance.n
    while True:
        trace.passes += 1
        moved = False
        for i in rng.permutation(n):
            i = int(i)
            old = x[i]
            for new in Placement:
                if new == old:
                    continue
                cand = x.replace(i, new)
                res = evaluate(cand)
                if res.optimal and improves(res.objective, cost):
                    x, best_alloc, cost = cand, res.alloc, res.objective
                    trace.iterations += 1
                    trace.cost_sequence.append(cost)
                    trace.flips.append((i, old, new))
                    moved = True
                    break
            if moved:
                break
        if not moved:
            return x, best_alloc, trace


def share_cap_d(instance: Instance, seed: int = 0, tol: float = DEFAULT_TOL,
                sdp_tol: float = DEFAULT_SDP_TOL) -> Solution:
    """Deadline-constrained pipeline: relaxation, recovery, repair, tuning."""
    _require_deadlines(instance)
    rng = np.random.default_rng(seed)
    fallback = False
    extras = {}
    lower = math.nan
    try:
        sol = solve_sdp(build_qcqp(instance, deadlines_active=True), sdp_tol)
        x0 = deterministic_recovery(sol.marginals)
        lower = sol.lower_bound
        extras["marginals"] = sol.marginals
    except (NumericalFailure, ClampExceedsTolerance) as exc:
        x0 = DecisionVector.uniform(instance.n, Placement.LOCAL)
        fallback = True
        extras["error"] = str(exc)
    adj = adaptive_adjustment(instance, x0, rng, tol)
    x, alloc, trace = sequential_tuning(instance, adj.decision, adj.alloc, rng, True, tol)
    extras.update(recovered=x0, adjusted=adj.decision, adjust_flips=adj.flipped, trace=trace)
    prov = Provenance.TUNED if trace.flips else Provenance.DETERMINISTIC
    return Solution(x, alloc, total_cost(instance, x, alloc), prov, lower, fallback, extras)
