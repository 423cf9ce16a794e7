"""Optimal bandwidth and CAP CPU split for a fixed offloading decision.

The problem is convex once the placement is fixed. It is solved in
epigraph form (max-delay objective) or directly (sum-delay objective)
by a log-barrier Newton method; with deadlines a phase-I run of the same
kernel either certifies infeasibility or supplies a strictly feasible
start.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _barrier
from .errors import MissingDeadline, NumericalFailure
from .model import (
    Allocation,
    DecisionVector,
    Instance,
    ObjectiveMode,
    Placement,
    energy_term,
    total_cost,
)

DEFAULT_TOL = 1e-8
DEADLINE_RTOL = 1e-9

# phase I stops once every deadline holds with this relative margin
_PHASE1_MARGIN = 1e-3


class AllocStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class AllocationResult:
    status: AllocStatus
    alloc: Allocation | None = None
    objective: float | None = None
    kkt_residual: float = math.nan

    @property
    def optimal(self) -> bool:
        return self.status is AllocStatus.OPTIMAL


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    alloc: Allocation | None = None
    objective: float | None = None


_INFEASIBLE = AllocationResult(AllocStatus.INFEASIBLE)


def _subproblem(instance: Instance, codes: np.ndarray, off: np.ndarray):
    arr = instance.arrays
    s = instance.shared
    is_cap = codes[off] == Placement.CAP
    A = arr.a_up[off] / s.c_ul
    B = arr.b_down[off] / s.c_dl
    Y = np.where(is_cap, arr.cycles[off] / s.f_cap, 0.0)
    K = np.where(is_cap, 0.0, arr.k_cloud[off])
    use_total = s.c_total < s.c_ul + s.c_dl
    return A, B, Y, K, s.c_ul / s.c_total, s.c_dl / s.c_total, use_total


def _phase_one(A, B, Y, K, R, cU, cD, use_total):
    """Minimise the worst relative deadline excess ``max_j (h_j - R_j) / R_j``.

    Returns ``(status, v)`` where ``v`` holds the resource shares; the
    excess is ``v[-1]``.
    """
    A1, B1, Y1, K1 = A / R, B / R, Y / R, K / R - 1.0
    inf = np.full(A.shape[0], math.inf)
    v0 = _barrier.interior_start(A1, B1, Y1, K1, True, -math.inf, cU, cD, use_total)
    status, v, t, _, _ = _barrier.barrier_solve(
        A1, B1, Y1, K1, inf, True, -math.inf, np.ones_like(A), cU, cD, use_total,
        v0, 1e-10, 1.0, -_PHASE1_MARGIN, DEADLINE_RTOL)
    return status, v


def _lift_epigraph(v_res, A, B, Y, K, floor):
    """Append a comfortable epigraph variable to a resource vector."""
    n = A.shape[0]
    iu, idn, ifa, _, _ = _barrier._layout(B, Y, False)
    top = floor
    for j in range(n):
        h = A[j] / v_res[iu[j]] + K[j]
        if idn[j] >= 0:
            h += B[j] / v_res[idn[j]]
        if ifa[j] >= 0:
            h += Y[j] / v_res[ifa[j]]
        top = max(top, h)
    return np.append(v_res, top + 0.1 * abs(top) + 1.0)


def _unpack(instance, codes, off, v, B, Y):
    n = instance.n
    s = instance.shared
    m = off.size
    cu = np.zeros(n)
    cd = np.zeros(n)
    fa = np.zeros(n)
    cu[off] = v[:m] * s.c_ul
    k = m
    for j, i in enumerate(off):
        if B[j] > 0:
            cd[i] = v[k] * s.c_dl
            k += 1
    for j, i in enumerate(off):
        if Y[j] > 0:
            fa[i] = v[k] * s.f_cap
            k += 1
    return Allocation(cu, cd, fa)


def solve_allocation(instance: Instance, decision: DecisionVector,
                     deadlines_active: bool = False, tol: float = DEFAULT_TOL) -> AllocationResult:
    """Optimal resources for ``decision``; ``status`` is INFEASIBLE only under deadlines."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if len(decision) != instance.n:
        raise ValueError("decision length does not match the instance")
    if deadlines_active and not instance.has_deadlines:
        raise MissingDeadline("deadlines_active requires a deadline for every user")
    arr = instance.arrays
    codes = decision.codes
    local = np.flatnonzero(codes == Placement.LOCAL)
    off = np.flatnonzero(codes != Placement.LOCAL)
    max_mode = instance.objective_mode is ObjectiveMode.MAX_DELAY
    energy = energy_term(instance, decision)

    if deadlines_active:
        if np.any(arr.t_local[local] > arr.deadline[local] * (1 + DEADLINE_RTOL)):
            return _INFEASIBLE
        # fixed CAP-cloud and cloud CPU time already past the deadline
        fixed = np.where(codes[off] == Placement.CLOUD, arr.k_cloud[off], 0.0)
        if np.any(fixed >= arr.deadline[off]):
            return _INFEASIBLE

    if off.size == 0:
        alloc = Allocation.zeros(instance.n)
        return AllocationResult(AllocStatus.OPTIMAL, alloc,
                                total_cost(instance, decision, alloc).total, 0.0)

    A, B, Y, K, cU, cD, use_total = _subproblem(instance, codes, off)
    R = arr.deadline[off] if deadlines_active else np.full(off.size, math.inf)
    floor = float(arr.t_local[local].max()) if (max_mode and local.size) else -math.inf

    v_res = None
    if deadlines_active:
        status, v1 = _phase_one(A, B, Y, K, R, cU, cD, use_total)
        excess = v1[-1]
        if status == _barrier.INFEASIBLE or excess > DEADLINE_RTOL:
            return _INFEASIBLE
        if status == _barrier.STALLED:
            raise NumericalFailure("phase-I barrier iteration stalled")
        v_res = v1[:-1]
        if excess <= -1e-12:
            # phase I ends on the budget boundary; shrinking every share by
            # 1-|e|/2 splits the deadline margin e between deadlines and budgets
            v_res = v_res * (1.0 - 0.5 * abs(excess))
        else:
            # feasible set has no interior to speak of: keep the phase-I point
            alloc = _unpack(instance, codes, off, v_res, B, Y)
            return AllocationResult(AllocStatus.OPTIMAL, alloc,
                                    total_cost(instance, decision, alloc).total, 0.0)

    if max_mode:
        offset = energy
        w = np.ones(off.size)
        if v_res is None:
            v0 = _barrier.interior_start(A, B, Y, K, True, floor, cU, cD, use_total)
        else:
            v0 = _lift_epigraph(v_res, A, B, Y, K, floor)
    else:
        offset = energy + float(K.sum()) + float(arr.t_local[local].sum())
        w = np.ones(off.size)
        if v_res is None:
            v0 = _barrier.interior_start(A, B, Y, K, False, floor, cU, cD, use_total)
        else:
            v0 = v_res
    status, v, _, kkt, _ = _barrier.barrier_solve(
        A, B, Y, K, R, max_mode, floor, w, cU, cD, use_total,
        v0, tol, offset, -math.inf, math.inf)
    if status != _barrier.OPTIMAL:
        raise NumericalFailure("resource-allocation barrier iteration stalled")
    alloc = _unpack(instance, codes, off, v[:-1] if max_mode else v, B, Y)
    return AllocationResult(AllocStatus.OPTIMAL, alloc,
                            total_cost(instance, decision, alloc).total, float(kkt))


def feasibility_check(instance: Instance, decision: DecisionVector,
                      tol: float = DEFAULT_TOL) -> FeasibilityResult:
    """Whether ``decision`` admits an allocation meeting every deadline."""
    if not instance.has_deadlines:
        raise MissingDeadline("feasibility_check needs a deadline for every user")
    res = solve_allocation(instance, decision, deadlines_active=True, tol=tol)
    if res.optimal:
        return FeasibilityResult(True, res.alloc, res.objective)
    return FeasibilityResult(False)
