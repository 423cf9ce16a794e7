"""Shared builders and brute-force oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np

from capshare.model import (
    Instance,
    ObjectiveMode,
    Placement,
    SharedParams,
    TaskProfile,
    UserParams,
)


def user(d_in=4.0, d_out=1.0, cycles=1.0, *, e_local=1.0, t_local=1.0, e_tx=0.1, e_rx=0.1,
         eta_up=1.0, eta_down=1.0, cost_cap=1.0, cost_cloud=1.0, rho=0.5, deadline=None):
    return (TaskProfile(d_in, d_out, cycles),
            UserParams(e_local, t_local, e_tx, e_rx, eta_up, eta_down, cost_cap, cost_cloud,
                       rho, deadline))


def shared(c_ul=10.0, c_dl=10.0, c_total=None, f_cap=1.0, f_cloud=1.0, r_ac=1.0,
           alpha=0.1, beta=0.2):
    if c_total is None:
        c_total = c_ul + c_dl
    return SharedParams(c_ul, c_dl, c_total, f_cap, f_cloud, r_ac, alpha, beta)


def instance(users, sh=None, mode=ObjectiveMode.MAX_DELAY):
    return Instance(tuple(users), sh or shared(), mode)


def random_small_instance(rng, n, mode=ObjectiveMode.MAX_DELAY, binding_total=False):
    """O(1)-scaled random instance; sizes chosen so every placement is competitive."""
    users = []
    for _ in range(n):
        users.append(user(
            d_in=rng.uniform(1, 5), d_out=rng.choice([0.0, rng.uniform(0.2, 2)]),
            cycles=rng.uniform(0.5, 2), e_local=rng.uniform(0.5, 3),
            t_local=rng.uniform(0.5, 3), e_tx=rng.uniform(0.05, 0.5),
            e_rx=rng.uniform(0.0, 0.2), eta_up=rng.uniform(0.5, 2),
            eta_down=rng.uniform(0.5, 2), cost_cap=rng.uniform(0, 2),
            cost_cloud=rng.uniform(0, 2), rho=rng.uniform(0, 1)))
    c_ul, c_dl = rng.uniform(3, 10), rng.uniform(3, 10)
    c_total = rng.uniform(0.5, 0.9) * (c_ul + c_dl) if binding_total else c_ul + c_dl
    sh = shared(c_ul=c_ul, c_dl=c_dl, c_total=c_total, f_cap=rng.uniform(0.5, 2),
                f_cloud=rng.uniform(0.5, 2), r_ac=rng.uniform(2, 8),
                alpha=rng.uniform(0, 0.5), beta=rng.uniform(0, 0.5))
    return instance(users, sh, mode)


# ---------------------------------------------------------------------------
# grid oracle for the resource subproblem

def _grid(lo, hi, points):
    # cell centres: never touches a zero share
    return lo + (hi - lo) * (np.arange(points) + 0.5) / points


def _share_grid(need, points, lo, hi):
    """Candidate shares of one budget for user 0 (user 1 gets the rest)."""
    if need == (True, True):
        return _grid(lo, hi, points)
    # at most one claimant: the claimant takes everything
    return np.array([1.0 if need[0] else 0.0])


def grid_allocation(inst: Instance, decision, points=1000, deadlines=False, zoom=2):
    """Brute-force the resource problem on a grid of budget splits.

    Handles up to two offloaded users with a non-binding total-bandwidth
    cap, or a single offloaded user with any total cap. Returns the best
    objective found (``inf`` if no grid point meets the deadlines). A few
    zoom passes re-grid around the incumbent.
    """
    arr = inst.arrays
    s = inst.shared
    codes = decision.codes
    off = np.flatnonzero(codes != Placement.LOCAL)
    local = np.flatnonzero(codes == Placement.LOCAL)
    energy = float(arr.energy[np.arange(inst.n), codes].sum())
    max_mode = inst.objective_mode is ObjectiveMode.MAX_DELAY
    loc = arr.t_local[local]
    if deadlines and np.any(loc > arr.deadline[local]):
        return math.inf
    floor = loc.max() if (max_mode and loc.size) else -math.inf
    loc_sum = loc.sum()
    if off.size == 0:
        return energy + (loc.max() if max_mode else loc_sum)
    if off.size > 2:
        raise ValueError("grid oracle handles at most two offloaded users")
    binding = s.c_total < s.c_ul + s.c_dl
    if binding and off.size > 1:
        raise ValueError("binding total cap only supported for one offloaded user")

    a = arr.a_up[off]
    b = arr.b_down[off]
    y = np.where(codes[off] == Placement.CAP, arr.cycles[off], 0.0)
    k = np.where(codes[off] == Placement.CLOUD, arr.k_cloud[off], 0.0)
    R = arr.deadline[off] if deadlines else np.full(off.size, math.inf)

    def combine(h):
        # h: list of per-user delay arrays (broadcastable)
        ok = np.ones(np.broadcast(*h).shape, bool)
        for j, hj in enumerate(h):
            ok &= hj <= R[j] * (1 + 1e-12)
        if max_mode:
            val = np.maximum.reduce([np.broadcast_to(x, ok.shape) for x in h])
            val = np.maximum(val, floor)
        else:
            val = sum(np.broadcast_to(x, ok.shape) for x in h) + loc_sum
        return np.where(ok, val, np.inf)

    if off.size == 1:
        a0, b0, y0, k0 = a[0], b[0], y[0], k[0]
        cpu = y0 / s.f_cap if y0 > 0 else 0.0
        if b0 == 0:
            best = combine([np.array(a0 / min(s.c_ul, s.c_total) + cpu + k0)])
            return energy + float(best.min())
        if not binding:
            best = combine([np.array(a0 / s.c_ul + b0 / s.c_dl + cpu + k0)])
            return energy + float(best.min())
        # split of the total cap between uplink and downlink
        lo, hi = 0.0, 1.0
        best_val = math.inf
        for _ in range(zoom + 1):
            frac = _grid(lo, hi, points)
            cu = np.minimum(frac * s.c_total, s.c_ul)
            cd = np.minimum((1 - frac) * s.c_total, s.c_dl)
            vals = combine([a0 / cu + b0 / cd + cpu + k0])
            i = int(np.argmin(vals))
            best_val = min(best_val, vals[i])
            w = (hi - lo) / points
            lo, hi = max(0.0, frac[i] - 2 * w), min(1.0, frac[i] + 2 * w)
        return energy + float(best_val)

    # two offloaded users, independent uplink / downlink / CPU budgets
    need_d = (b[0] > 0, b[1] > 0)
    need_f = (y[0] > 0, y[1] > 0)
    ranges = {"u": (0.0, 1.0), "d": (0.0, 1.0), "f": (0.0, 1.0)}
    best_val = math.inf
    for _ in range(zoom + 1):
        su = _grid(*ranges["u"], points)[:, None]
        sd = _share_grid(need_d, points, *ranges["d"])[None, :]
        with np.errstate(divide="ignore"):
            l0 = a[0] / (su * s.c_ul) + (b[0] / (sd * s.c_dl) if need_d[0] else 0.0) + k[0]
            l1 = a[1] / ((1 - su) * s.c_ul) + (b[1] / ((1 - sd) * s.c_dl) if need_d[1] else 0.0) + k[1]
        l0, l1 = np.broadcast_arrays(l0, l1)
        if need_f == (True, True):
            sf = _grid(*ranges["f"], points)
            c0 = y[0] / (sf * s.f_cap)
            c1 = y[1] / ((1 - sf) * s.f_cap)
            if max_mode and np.isinf(R).all():
                # max(l0 + c0(f), l1 + c1(f)): c0 - c1 decreasing in f, so the
                # best grid cell sits next to the crossing c0 - c1 = l1 - l0
                q = c0 - c1
                pos = np.searchsorted(-q, -(l1 - l0).ravel())
                cand = []
                for p in (pos - 1, pos):
                    p = np.clip(p, 0, points - 1)
                    vals = combine([l0.ravel() + c0[p], l1.ravel() + c1[p]])
                    cand.append((vals, p))
                vals = np.minimum(cand[0][0], cand[1][0])
                fidx = np.where(cand[0][0] <= cand[1][0], cand[0][1], cand[1][1])
            else:
                # full enumeration over the CPU split in chunks
                vals = np.full(l0.size, np.inf)
                fidx = np.zeros(l0.size, int)
                L0, L1 = l0.ravel(), l1.ravel()
                for start in range(0, L0.size, 2000):
                    sl = slice(start, start + 2000)
                    v = combine([L0[sl, None] + c0[None, :], L1[sl, None] + c1[None, :]])
                    fidx[sl] = np.argmin(v, axis=1)
                    vals[sl] = v[np.arange(v.shape[0]), fidx[sl]]
            i = int(np.argmin(vals))
            fbest = sf[fidx[i]]
        else:
            cpu0 = y[0] / s.f_cap if need_f[0] else 0.0
            cpu1 = y[1] / s.f_cap if need_f[1] else 0.0
            vals = combine([l0 + cpu0, l1 + cpu1]).ravel()
            i = int(np.argmin(vals))
            fbest = None
        best_val = min(best_val, float(vals[i]))
        iu, idd = np.unravel_index(i, l0.shape)
        w = (ranges["u"][1] - ranges["u"][0]) / points
        ranges["u"] = (max(0.0, su[iu, 0] - 2 * w), min(1.0, su[iu, 0] + 2 * w))
        if need_d == (True, True):
            w = (ranges["d"][1] - ranges["d"][0]) / points
            ranges["d"] = (max(0.0, sd[0, idd] - 2 * w), min(1.0, sd[0, idd] + 2 * w))
        if fbest is not None:
            w = (ranges["f"][1] - ranges["f"][0]) / points
            ranges["f"] = (max(0.0, fbest - 2 * w), min(1.0, fbest + 2 * w))
    return energy + best_val


# ---------------------------------------------------------------------------
# default-scenario instances and the rank-one lifting of an integral point

def default_instance(rng, n=8, theta=None, mode=ObjectiveMode.MAX_DELAY, **changes):
    from capshare.experiments import DefaultParams, generate_instance

    params = DefaultParams(n=n, theta=theta, objective=mode, **changes)
    return generate_instance(params, rng)


def lift(inst: Instance, decision, alloc, allow_cap=True):
    """Scaled rank-one blocks ``z z^T`` of an integral (decision, allocation) point."""
    from capshare.model import user_delay
    from capshare.qcqp_sdp import (BIT_SCALE, CYCLE_SCALE, FULL_LAYOUT, HZ_SCALE,
                                   NO_CAP_LAYOUT)

    lay = FULL_LAYOUT if allow_cap else NO_CAP_LAYOUT
    name = {Placement.LOCAL: "xl", Placement.CAP: "xa", Placement.CLOUD: "xc"}
    blocks = {}
    for i, (task, up) in enumerate(inst.users):
        z = np.zeros(lay.size)
        z[lay.one] = 1.0
        p = decision[i]
        z[lay.index(name[p])] = 1.0
        if p != Placement.LOCAL:
            cu, cd = alloc.cu[i] / HZ_SCALE, alloc.cd[i] / HZ_SCALE
            z[lay.index("cu")] = cu
            z[lay.index("du")] = task.d_in / BIT_SCALE / (up.eta_up * cu)
            z[lay.index("cd")] = cd
            if task.d_out > 0:
                z[lay.index("dd")] = task.d_out / BIT_SCALE / (up.eta_down * cd)
            if p == Placement.CAP:
                fa = alloc.fa[i] / CYCLE_SCALE
                z[lay.index("fa")] = fa
                z[lay.index("da")] = task.cycles / CYCLE_SCALE / fa
        blocks[i + 1] = np.outer(z, z)
    t = max(user_delay(i, decision, alloc, inst) for i in range(inst.n))
    blocks[0] = np.outer([t, 1.0], [t, 1.0])
    return blocks
