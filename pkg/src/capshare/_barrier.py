"""Log-barrier Newton kernel for the fixed-decision resource problem.

Works on offloaded users only, with every resource normalised by its
budget so that uplink, downlink and CPU shares all live in (0, 1).
User ``j`` then has delay

    h_j = A_j / u_j + B_j / d_j + Y_j / f_j + K_j

where ``B_j = 0`` drops the downlink variable and ``Y_j = 0`` drops the
CPU variable. Two objectives are supported: the epigraph form
``min t  s.t. h_j <= t, floor <= t`` and the plain sum ``min sum_j h_j``.
Optional deadline rows ``h_j <= R_j`` apply in both.

Variable order: uplink shares, downlink shares (users with B > 0),
CPU shares (users with Y > 0), then ``t`` in epigraph mode.
"""

import math

import numpy as np
from numba import njit

OPTIMAL = 0
INFEASIBLE = 1
STALLED = 2

_MU = 30.0
_NEWTON_EPS = 1e-10
_POLISH_STEPS = 4
_MAX_NEWTON = 100
_ARMIJO = 0.01
_SHRINK = 0.5


@njit(cache=True, nogil=True)
def _layout(B, Y, epi):
    n = B.shape[0]
    iu = np.empty(n, np.int64)
    idn = np.full(n, -1, np.int64)
    ifa = np.full(n, -1, np.int64)
    k = 0
    for j in range(n):
        iu[j] = k
        k += 1
    for j in range(n):
        if B[j] > 0.0:
            idn[j] = k
            k += 1
    for j in range(n):
        if Y[j] > 0.0:
            ifa[j] = k
            k += 1
    it = -1
    if epi:
        it = k
        k += 1
    return iu, idn, ifa, it, k


@njit(cache=True, nogil=True)
def _budget_matrix(iu, idn, ifa, nv, cU, cD, use_total):
    """Rows of ``sum_k c_k v_k <= 1`` for the uplink, downlink, total and CPU budgets."""
    n = iu.shape[0]
    rows = np.zeros((4, nv))
    used = np.zeros(4, np.bool_)
    for j in range(n):
        rows[0, iu[j]] = 1.0
        used[0] = True
        if idn[j] >= 0:
            rows[1, idn[j]] = 1.0
            used[1] = True
        if use_total:
            rows[2, iu[j]] = cU
            if idn[j] >= 0:
                rows[2, idn[j]] = cD
            used[2] = True
        if ifa[j] >= 0:
            rows[3, ifa[j]] = 1.0
            used[3] = True
    count = 0
    for b in range(4):
        if used[b]:
            count += 1
    out = np.zeros((count, nv))
    k = 0
    for b in range(4):
        if used[b]:
            out[k] = rows[b]
            k += 1
    return out


@njit(cache=True, nogil=True)
def _user_delay(v, j, A, B, Y, iu, idn, ifa):
    h = A[j] / v[iu[j]]
    if idn[j] >= 0:
        h += B[j] / v[idn[j]]
    if ifa[j] >= 0:
        h += Y[j] / v[ifa[j]]
    return h


@njit(cache=True, nogil=True)
def _evaluate(v, vref, tau, A, B, Y, K, R, epi, floor, w_sum, bud, iu, idn, ifa, it,
              grad, hess, want):
    """Centering value ``tau*(f0(v) - f0(vref)) + barrier``; derivatives in place.

    The objective enters as a difference against ``vref`` computed term by
    term, so line-search comparisons stay exact even when ``tau*f0`` is far
    beyond the resolution of the barrier part.

    Returns (value, f0); value is +inf outside the barrier domain.
    """
    n = A.shape[0]
    nv = v.shape[0]
    for k in range(nv):
        if k != it and v[k] <= 0.0:
            return math.inf, 0.0
    if want:
        grad[:] = 0.0
        hess[:, :] = 0.0
    total = 0.0
    delta = 0.0
    if epi:
        f0 = v[it]
        delta = v[it] - vref[it]
        if want:
            grad[it] += tau
    else:
        f0 = 0.0
    idx = np.empty(3, np.int64)
    coef = np.empty(3)
    curv = np.empty(3)
    for j in range(n):
        idx[0] = iu[j]
        idx[1] = idn[j]
        idx[2] = ifa[j]
        u = v[iu[j]]
        h = A[j] / u + K[j]
        coef[0] = -A[j] / (u * u)
        curv[0] = 2.0 * A[j] / (u * u * u)
        coef[1] = 0.0
        curv[1] = 0.0
        coef[2] = 0.0
        curv[2] = 0.0
        if idx[1] >= 0:
            d = v[idx[1]]
            h += B[j] / d
            coef[1] = -B[j] / (d * d)
            curv[1] = 2.0 * B[j] / (d * d * d)
        if idx[2] >= 0:
            f = v[idx[2]]
            h += Y[j] / f
            coef[2] = -Y[j] / (f * f)
            curv[2] = 2.0 * Y[j] / (f * f * f)
        if not epi:
            f0 += w_sum[j] * h
            for q in range(3):
                if idx[q] >= 0:
                    # a/x - a/x0 with a = -coef*x*x
                    x = v[idx[q]]
                    x0 = vref[idx[q]]
                    delta += w_sum[j] * (-coef[q] * x) * (x0 - x) / x0
            if want:
                for q in range(3):
                    if idx[q] >= 0:
                        grad[idx[q]] += tau * w_sum[j] * coef[q]
                        hess[idx[q], idx[q]] += tau * w_sum[j] * curv[q]
        for row in range(2):
            if row == 0:
                if not epi:
                    continue
                slack = v[it] - h
            else:
                if R[j] == math.inf:
                    continue
                slack = R[j] - h
            if slack <= 0.0:
                return math.inf, f0
            total -= math.log(slack)
            if not want:
                continue
            inv = 1.0 / slack
            inv2 = inv * inv
            for q in range(3):
                if idx[q] < 0:
                    continue
                grad[idx[q]] += coef[q] * inv
                hess[idx[q], idx[q]] += curv[q] * inv
                for r in range(3):
                    if idx[r] >= 0:
                        hess[idx[q], idx[r]] += coef[q] * coef[r] * inv2
                if row == 0:
                    hess[idx[q], it] -= coef[q] * inv2
                    hess[it, idx[q]] -= coef[q] * inv2
            if row == 0:
                grad[it] -= inv
                hess[it, it] += inv2
    total += tau * delta

    if epi and floor > -math.inf:
        slack = v[it] - floor
        if slack <= 0.0:
            return math.inf, f0
        total -= math.log(slack)
        if want:
            grad[it] -= 1.0 / slack
            hess[it, it] += 1.0 / (slack * slack)

    nb = bud.shape[0]
    for b in range(nb):
        slack = 1.0
        for k in range(nv):
            slack -= bud[b, k] * v[k]
        if slack <= 0.0:
            return math.inf, f0
        total -= math.log(slack)
        if not want:
            continue
        inv = 1.0 / slack
        inv2 = inv * inv
        for k in range(nv):
            ck = bud[b, k]
            if ck == 0.0:
                continue
            grad[k] += ck * inv
            for l in range(nv):
                cl = bud[b, l]
                if cl != 0.0:
                    hess[k, l] += ck * cl * inv2
    return total, f0


@njit(cache=True, nogil=True)
def _newton_direction(hess, grad, work, dx):
    """Solve ``hess dx = -grad`` by Cholesky; False if not positive definite."""
    nv = grad.shape[0]
    for i in range(nv):
        for j in range(i + 1):
            s = hess[i, j]
            for k in range(j):
                s -= work[i, k] * work[j, k]
            if i == j:
                if not s > 0.0:
                    return False
                work[i, i] = math.sqrt(s)
            else:
                work[i, j] = s / work[j, j]
    for i in range(nv):
        s = -grad[i]
        for k in range(i):
            s -= work[i, k] * dx[k]
        dx[i] = s / work[i, i]
    for i in range(nv - 1, -1, -1):
        s = dx[i]
        for k in range(i + 1, nv):
            s -= work[k, i] * dx[k]
        dx[i] = s / work[i, i]
    return True


@njit(cache=True, nogil=True)
def _n_constraints(R, epi, floor, nb):
    m = nb
    if epi:
        m += R.shape[0]
        if floor > -math.inf:
            m += 1
    for j in range(R.shape[0]):
        if R[j] < math.inf:
            m += 1
    return m


@njit(cache=True, nogil=True)
def _kkt_residual(v, tau, A, B, Y, K, R, epi, floor, w_sum, bud, iu, idn, ifa, it, fscale):
    """Relative KKT residual at ``v``.

    Two multiplier certificates are tried: the barrier estimate
    ``1/(tau*slack)`` and a least-squares refit on the near-active rows
    (barrier slacks near the optimum carry too few significant digits for
    the first to be sharp); loose rows keep their barrier multipliers. The smaller max(stationarity, complementarity)
    is reported.
    """
    n = A.shape[0]
    nv = v.shape[0]
    nb = bud.shape[0]
    mmax = 2 * n + 1 + nb
    J = np.zeros((mmax, nv))
    slack = np.zeros(mmax)
    sscale = np.ones(mmax)
    g0 = np.zeros(nv)
    if epi:
        g0[it] = 1.0
    m = 0
    for j in range(n):
        h = A[j] / v[iu[j]] + K[j]
        row = np.zeros(nv)
        row[iu[j]] = -A[j] / v[iu[j]] ** 2
        if idn[j] >= 0:
            h += B[j] / v[idn[j]]
            row[idn[j]] = -B[j] / v[idn[j]] ** 2
        if ifa[j] >= 0:
            h += Y[j] / v[ifa[j]]
            row[ifa[j]] = -Y[j] / v[ifa[j]] ** 2
        if not epi:
            g0 += w_sum[j] * row
        if epi:
            J[m, :] = row
            J[m, it] = -1.0
            slack[m] = v[it] - h
            sscale[m] = max(1.0, abs(v[it]))
            m += 1
        if R[j] < math.inf:
            J[m, :] = row
            slack[m] = R[j] - h
            sscale[m] = max(1.0, R[j])
            m += 1
    if epi and floor > -math.inf:
        J[m, it] = -1.0
        slack[m] = v[it] - floor
        sscale[m] = max(1.0, abs(v[it]))
        m += 1
    for b in range(nb):
        J[m, :] = bud[b, :]
        s = 1.0
        for k in range(nv):
            s -= bud[b, k] * v[k]
        slack[m] = s
        m += 1
    J = J[:m]
    slack = slack[:m]
    sscale = sscale[:m]
    gscale = max(1.0, np.max(np.abs(g0)))
    fs = max(1.0, fscale)

    best = math.inf
    lam = 1.0 / (tau * np.maximum(slack, 1e-300))
    for attempt in range(2):
        if attempt == 1:
            # keep barrier multipliers on loose rows, refit the tight ones
            active = np.flatnonzero(slack <= 1e-5 * sscale)
            if active.size == 0:
                continue
            for q in range(active.size):
                lam[active[q]] = 0.0
            rhs = -(g0 + J.T @ lam)
            Ja = J[active].T.copy()
            sol = np.linalg.lstsq(Ja, rhs)[0]
            for q in range(active.size):
                lam[active[q]] = max(sol[q], 0.0)
        r = g0 + J.T @ lam
        stat = np.max(np.abs(r)) / gscale
        comp = np.sum(lam * np.abs(slack)) / fs
        best = min(best, max(stat, comp))
    return best


@njit(cache=True, nogil=True)
def barrier_solve(A, B, Y, K, R, epi, floor, w_sum, cU, cD, use_total,
                  v0, tol, offset, stop_below, infeasible_above):
    """Run the barrier method from the strictly feasible point ``v0``.

    ``offset`` is the constant part of the full objective, used only to
    make the stopping rule relative. In epigraph mode the run stops early
    once ``t < stop_below`` or once the dual bound ``t - m/tau`` exceeds
    ``infeasible_above`` (phase-I use).

    Returns (status, v, f0, kkt_residual, newton_steps).
    """
    iu, idn, ifa, it, nv = _layout(B, Y, epi)
    bud = _budget_matrix(iu, idn, ifa, nv, cU, cD, use_total)
    m = _n_constraints(R, epi, floor, bud.shape[0])
    grad = np.zeros(nv)
    hess = np.zeros((nv, nv))
    work = np.zeros((nv, nv))
    dx = np.zeros(nv)
    cand = np.zeros(nv)
    v = v0.copy()
    val, f0 = _evaluate(v, v, 1.0, A, B, Y, K, R, epi, floor, w_sum, bud, iu, idn, ifa, it,
                        grad, hess, False)
    if val == math.inf:
        return STALLED, v, f0, math.inf, 0
    tau = m / (abs(f0) + abs(offset) + 1e-300)
    steps = 0
    polishing = False
    while True:
        limit = _POLISH_STEPS if polishing else _MAX_NEWTON
        for _ in range(limit):
            val, f0 = _evaluate(v, v, tau, A, B, Y, K, R, epi, floor, w_sum, bud, iu, idn, ifa,
                                it, grad, hess, True)
            if not _newton_direction(hess, grad, work, dx):
                if polishing:
                    break
                return STALLED, v, f0, math.inf, steps
            lam2 = 0.0
            for k in range(nv):
                lam2 -= grad[k] * dx[k]
            if not polishing and lam2 * 0.5 <= _NEWTON_EPS:
                break
            step = 1.0
            accepted = False
            for _ls in range(60):
                for k in range(nv):
                    cand[k] = v[k] + step * dx[k]
                cval, _f = _evaluate(cand, v, tau, A, B, Y, K, R, epi, floor, w_sum, bud, iu,
                                     idn, ifa, it, grad, hess, False)
                if cval <= val - _ARMIJO * step * lam2:
                    accepted = True
                    break
                step *= _SHRINK
            steps += 1
            if not accepted:
                break
            v[:] = cand
            if epi and v[it] < stop_below:
                return OPTIMAL, v, v[it], 0.0, steps
        if polishing:
            break
        gap = m / tau
        if epi and f0 - gap > infeasible_above:
            return INFEASIBLE, v, f0, gap, steps
        if gap <= tol * max(abs(f0 + offset), 1e-300):
            polishing = True
            continue
        tau *= _MU

    kkt = _kkt_residual(v, tau, A, B, Y, K, R, epi, floor, w_sum, bud, iu, idn, ifa, it,
                        abs(f0 + offset))
    return OPTIMAL, v, f0, kkt, steps


@njit(cache=True, nogil=True)
def interior_start(A, B, Y, K, epi, floor, cU, cD, use_total):
    """A strictly interior point of the budget polytope (plus a large ``t``)."""
    iu, idn, ifa, it, nv = _layout(B, Y, epi)
    n = A.shape[0]
    n_f = 0
    for j in range(n):
        if ifa[j] >= 0:
            n_f += 1
    gamma = 1.0
    if use_total and cU + cD > 1.0:
        gamma = 1.0 / (cU + cD)
    v = np.zeros(nv)
    for j in range(n):
        v[iu[j]] = gamma / (n + 1.0)
        if idn[j] >= 0:
            v[idn[j]] = gamma / (n + 1.0)
        if ifa[j] >= 0:
            v[ifa[j]] = 1.0 / (n_f + 1.0)
    if epi:
        top = floor
        for j in range(n):
            h = _user_delay(v, j, A, B, Y, iu, idn, ifa) + K[j]
            if h > top:
                top = h
        v[it] = top + 0.1 * abs(top) + 1.0
    return v
