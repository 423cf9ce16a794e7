"""Separable QCQP lifting of the joint problem and its SDP relaxation.

Each user owns a homogenised vector ``z_i = [w_i; 1]`` with
``w_i = [x^l, x^a, x^c, c^u, D^u, c^d, D^d, f^a, D^a]``; a shared block
``z_0 = [t, 0, ..., 0, 1]`` carries the max-delay epigraph variable.
Every constraint is stored as a set of symmetric coefficient matrices,
one per block it touches, so ``Tr(G Z)`` reproduces ``z^T G z``.

Data are built in scaled units (Mbit, MHz, Gcycles) so matrix entries
are O(1)-O(100); blocks are returned in SI units.

The relaxation is solved with cvxopt's cone solver. Our PSD blocks map
onto cvxopt's dual variable ``z``; each scalar constraint becomes one
column of ``G`` and inequality slacks live in the nonnegative orthant.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ClampExceedsTolerance, NumericalFailure
from .model import Instance, ObjectiveMode

BIT_SCALE = 1e6  # Mbit
HZ_SCALE = 1e6  # MHz
CYCLE_SCALE = 1e9  # Gcycles
DEFAULT_SDP_TOL = 1e-8
CLAMP_LIMIT = 1e-4


@dataclass(frozen=True)
class QcqpVariableLayout:
    """Index map of one user block; the homogenising 1 is the last entry."""

    names: tuple[str, ...]
    units: tuple[float, ...]  # SI value = scaled value * unit

    @property
    def size(self) -> int:
        return len(self.names) + 1

    @property
    def one(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def has(self, name: str) -> bool:
        return name in self.names

    @property
    def placement_names(self) -> tuple[str, ...]:
        return tuple(n for n in ("xl", "xa", "xc") if n in self.names)


FULL_LAYOUT = QcqpVariableLayout(
    ("xl", "xa", "xc", "cu", "du", "cd", "dd", "fa", "da"),
    (1.0, 1.0, 1.0, HZ_SCALE, 1.0, HZ_SCALE, 1.0, CYCLE_SCALE, 1.0),
)
# variant with the CAP placement removed (x^a, f^a, D^a dropped)
NO_CAP_LAYOUT = QcqpVariableLayout(
    ("xl", "xc", "cu", "du", "cd", "dd"),
    (1.0, 1.0, HZ_SCALE, 1.0, HZ_SCALE, 1.0),
)
# shared block: [t, 1]; reported embedded in a full-size block
T_BLOCK = 2


@dataclass
class Constraint:
    """``sum_b Tr(mats[b] Z_b)  (<=, ==, >=)  rhs``."""

    label: str
    kind: str  # "le", "eq", "ge"
    rhs: float
    mats: dict[int, np.ndarray] = field(default_factory=dict)

    def value(self, blocks) -> float:
        return float(sum(np.sum(m * blocks[b]) for b, m in self.mats.items()))

    def violation(self, blocks) -> float:
        v = self.value(blocks) - self.rhs
        if self.kind == "le":
            v = max(v, 0.0)
        elif self.kind == "ge":
            v = max(-v, 0.0)
        return abs(v)


@dataclass
class SdpProblem:
    """Objective and constraint matrices of the lifted problem.

    Block 0 is the shared epigraph block (absent in sum-delay mode, where
    each user's delay row enters the objective directly); blocks 1..N
    are the users. ``objective[b]`` is ``G_b``.
    """

    n: int
    layout: QcqpVariableLayout
    block_sizes: list[int]
    objective: dict[int, np.ndarray]
    constraints: list[Constraint]
    objective_mode: ObjectiveMode
    deadlines: bool

    def matrix(self, label: str, block: int) -> np.ndarray:
        """Coefficient matrix of constraint ``label`` on ``block`` (zeros if untouched)."""
        for c in self.constraints:
            if c.label == label:
                return c.mats.get(block, np.zeros((self.block_sizes[block],) * 2))
        raise KeyError(label)

    def objective_value(self, blocks) -> float:
        return float(sum(np.sum(m * blocks[b]) for b, m in self.objective.items()))

    def dump(self) -> str:
        """Plain-text listing for cross-checking against other solvers.

        Format: a header line ``sdp <n_blocks> <n_constraints>``, then a
        ``sizes`` line, the objective as ``obj`` followed by triplet
        lines ``<block> <row> <col> <value>`` (1-based, upper triangle),
        then per constraint ``con <label> <le|eq|ge> <rhs>`` and its
        triplets. Each section ends with ``end``.
        """
        out = io.StringIO()
        out.write(f"sdp {len(self.block_sizes)} {len(self.constraints)}\n")
        out.write("sizes " + " ".join(map(str, self.block_sizes)) + "\n")

        def triplets(mats):
            for b in sorted(mats):
                m = mats[b]
                r, c = np.nonzero(np.triu(m))
                for i, j in zip(r, c):
                    out.write(f"{b} {i + 1} {j + 1} {m[i, j]!r}\n")
            out.write("end\n")

        out.write("obj\n")
        triplets(self.objective)
        for con in self.constraints:
            out.write(f"con {con.label} {con.kind} {con.rhs!r}\n")
            triplets(con.mats)
        return out.getvalue()


@dataclass(frozen=True)
class SdpSolution:
    blocks: tuple[np.ndarray, ...]  # SI units, full-size blocks 0..N
    lower_bound: float
    marginals: np.ndarray  # (N, 3) [p^l, p^a, p^c]
    row10: np.ndarray  # (N, 3) raw Z_i(10, j) before clamping
    residuals: dict[str, float]
    gap: float
    iterations: int
    min_eigenvalue: float


def _sym(size, entries):
    """Symmetric matrix with ``Tr(M Z) = sum coef * Z[r, c]`` for the given entries."""
    m = np.zeros((size, size))
    for r, c, coef in entries:
        if r == c:
            m[r, r] += coef
        else:
            m[r, c] += 0.5 * coef
            m[c, r] += 0.5 * coef
    return m


def build_qcqp(instance: Instance, deadlines_active: bool = False,
               allow_cap: bool = True) -> SdpProblem:
    """Lifted QCQP matrices for ``instance`` (scaled units)."""
    lay = FULL_LAYOUT if allow_cap else NO_CAP_LAYOUT
    s = instance.shared
    arr = instance.arrays
    n = instance.n
    one = lay.one
    size = lay.size
    max_mode = instance.objective_mode is ObjectiveMode.MAX_DELAY
    ix = lay.index

    block_sizes = [T_BLOCK] + [size] * n
    objective: dict[int, np.ndarray] = {}
    cons: list[Constraint] = []

    if max_mode:
        objective[0] = _sym(T_BLOCK, [(1, 0, 1.0)])

    tasks = instance.tasks
    params = instance.params
    for i in range(n):
        b = i + 1
        task, up = tasks[i], params[i]
        e = arr.energy[i]
        d_in = task.d_in / BIT_SCALE
        d_out = task.d_out / BIT_SCALE
        y = task.cycles / CYCLE_SCALE
        k = arr.k_cloud[i]
        tl = arr.t_local[i]

        obj = [(one, ix("xl"), e[0]), (one, ix("xc"), e[2])]
        if allow_cap:
            obj.append((one, ix("xa"), e[1]))
        # per-user delay as a linear form in w_i
        delay = [(one, ix("xl"), tl), (one, ix("xc"), k), (one, ix("du"), 1.0),
                 (one, ix("dd"), 1.0)]
        if allow_cap:
            delay.append((one, ix("da"), 1.0))
        if max_mode:
            cons.append(Constraint(f"delay[{i}]", "le", 0.0, {
                0: _sym(T_BLOCK, [(1, 0, -1.0)]), b: _sym(size, delay)}))
        else:
            obj.extend(delay)
        objective[b] = _sym(size, obj)

        offl = [(one, ix("xc"))] + ([(one, ix("xa"))] if allow_cap else [])
        cons.append(Constraint(f"aux_u[{i}]", "le", 0.0, {b: _sym(size, [
            *[(r, c, d_in) for r, c in offl], (ix("cu"), ix("du"), -up.eta_up)])}))
        cons.append(Constraint(f"aux_d[{i}]", "le", 0.0, {b: _sym(size, [
            *[(r, c, d_out) for r, c in offl], (ix("cd"), ix("dd"), -up.eta_down)])}))
        if allow_cap:
            cons.append(Constraint(f"aux_a[{i}]", "le", 0.0, {b: _sym(size, [
                (one, ix("xa"), y), (ix("fa"), ix("da"), -1.0)])}))
        cons.append(Constraint(f"placement[{i}]", "eq", 1.0, {b: _sym(size, [
            (one, ix(p), 1.0) for p in lay.placement_names])}))
        for p in lay.placement_names:
            j = ix(p)
            cons.append(Constraint(f"int_{p}[{i}]", "eq", 0.0, {b: _sym(size, [
                (j, j, 1.0), (one, j, -1.0)])}))
        if deadlines_active:
            cons.append(Constraint(f"deadline[{i}]", "le", arr.deadline[i],
                                   {b: _sym(size, delay)}))

    def shared_row(label, names, rhs):
        mats = {i + 1: _sym(size, [(one, ix(nm), 1.0) for nm in names]) for i in range(n)}
        cons.append(Constraint(label, "le", rhs, mats))

    shared_row("uplink", ["cu"], s.c_ul / HZ_SCALE)
    shared_row("downlink", ["cd"], s.c_dl / HZ_SCALE)
    shared_row("total", ["cu", "cd"], s.c_total / HZ_SCALE)
    if allow_cap:
        shared_row("cpu", ["fa"], s.f_cap / CYCLE_SCALE)

    # homogenisation and elementwise nonnegativity of row/column 10
    for b, bsize in enumerate(block_sizes):
        if b == 0 and not max_mode:
            continue
        last = bsize - 1
        cons.append(Constraint(f"homog[{b}]", "eq", 1.0,
                               {b: _sym(bsize, [(last, last, 1.0)])}))
        for j in range(last):
            cons.append(Constraint(f"nonneg[{b},{j}]", "ge", 0.0,
                                   {b: _sym(bsize, [(last, j, 1.0)])}))

    return SdpProblem(n, lay, block_sizes, objective, cons, instance.objective_mode,
                      deadlines_active)


def _active_blocks(problem: SdpProblem) -> list[int]:
    start = 0 if problem.objective_mode is ObjectiveMode.MAX_DELAY else 1
    return list(range(start, len(problem.block_sizes)))


def _unscale(problem: SdpProblem, b: int, Z: np.ndarray) -> np.ndarray:
    if b == 0:
        return Z.copy()
    u = np.array(problem.layout.units + (1.0,))
    return Z * np.outer(u, u)


def _embed(problem: SdpProblem, b: int, Z: np.ndarray) -> np.ndarray:
    """Full 10x10 SI block in the documented w-layout."""
    full = np.zeros((FULL_LAYOUT.size, FULL_LAYOUT.size))
    if b == 0:
        # [t, 0..0, 1]
        idx = [0, FULL_LAYOUT.one]
    else:
        idx = [FULL_LAYOUT.index(nm) for nm in problem.layout.names] + [FULL_LAYOUT.one]
    full[np.ix_(idx, idx)] = Z
    return full


class _BlockKkt:
    """KKT solver for cvxopt exploiting that each column of G touches few blocks.

    With no equality block the system reduces to
    ``H ux = bx + G^T (W^T W)^{-1} bz`` where
    ``H = G^T (W^T W)^{-1} G``. For a PSD block scaled by ``r`` each
    coefficient matrix is mapped to ``M_k = rti^T A_k rti`` and the block
    contributes the Gram matrix ``<M_k, M_l>``; forming ``rti rti^T``
    explicitly instead loses several digits near the optimum. The slacks
    add a diagonal.
    """

    def __init__(self, m, slack_con, slack_sign, blocks):
        self.m = m
        self.slack_con = slack_con  # constraint id owning each slack
        self.slack_sign = slack_sign
        self.blocks = blocks  # (offset, size, constraint ids, (c, n, n) matrices)
        self.nl = slack_con.size

    def __call__(self, W):
        from scipy.linalg import cho_factor, cho_solve

        di = np.array(W["di"]).ravel()
        scaled = []
        H = np.zeros((self.m, self.m))
        np.add.at(H, (self.slack_con, self.slack_con), di ** 2)
        for (off, n, ids, A), rti in zip(self.blocks, W["rti"]):
            rti = np.array(rti)
            M = np.matmul(np.matmul(rti.T, A), rti)
            scaled.append((rti, M))
            flat = M.reshape(M.shape[0], -1)
            H[np.ix_(ids, ids)] += flat @ flat.T
        try:
            factor = cho_factor(H, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise ArithmeticError("singular KKT system") from None
        if not np.all(np.isfinite(factor[0])):
            raise ArithmeticError("singular KKT system")

        def solve(x, y, z):
            bx = np.array(x).ravel()
            bz = np.array(z).ravel()
            # G^T (W^T W)^{-1} bz
            rhs = bx.copy()
            np.add.at(rhs, self.slack_con, self.slack_sign * di ** 2 * bz[:self.nl])
            mats = []
            for (off, n, ids, A), (rti, M) in zip(self.blocks, scaled):
                B = bz[off:off + n * n].reshape(n, n, order="F")
                B = np.tril(B) + np.tril(B, -1).T
                Bs = rti.T @ B @ rti
                mats.append(Bs)
                rhs[ids] += np.einsum("kij,ij->k", M, Bs)
            ux = cho_solve(factor, rhs, check_finite=False)
            # W uz = W^{-T} (G ux - bz)
            out = np.empty_like(bz)
            gl = self.slack_sign * ux[self.slack_con]
            out[:self.nl] = di * (gl - bz[:self.nl])
            for (off, n, ids, A), (rti, M), Bs in zip(self.blocks, scaled, mats):
                V = np.tensordot(ux[ids], M, axes=1) - Bs
                out[off:off + n * n] = V.reshape(-1, order="F")
            x[:] = ux
            z[:] = out
        return solve


def solve_sdp(problem: SdpProblem, tol: float = DEFAULT_SDP_TOL,
              max_iterations: int = 200) -> SdpSolution:
    """Solve the relaxation; raise :class:`NumericalFailure` unless it meets ``tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    from cvxopt import matrix, solvers, spmatrix

    blocks = _active_blocks(problem)
    sizes = [problem.block_sizes[b] for b in blocks]
    offsets = {}
    ineq = [k for k, c in enumerate(problem.constraints) if c.kind != "eq"]
    slack_of = {k: q for q, k in enumerate(ineq)}
    pos = len(ineq)
    for b, sz in zip(blocks, sizes):
        offsets[b] = pos
        pos += sz * sz
    dim = pos

    rows, cols, vals = [], [], []
    m_con = len(problem.constraints)
    c_vec = np.zeros(m_con)
    slack_sign = np.zeros(len(ineq))
    per_block = {b: ([], []) for b in blocks}  # constraint ids, scaled matrices
    for k, con in enumerate(problem.constraints):
        # row scaling keeps every constraint O(1)
        scale = max(max(np.abs(m).max() for m in con.mats.values()), abs(con.rhs), 1e-300)
        for b, m in con.mats.items():
            sz = problem.block_sizes[b]
            r, cc = np.nonzero(m)
            rows.extend((offsets[b] + r + cc * sz).tolist())
            cols.extend([k] * r.size)
            vals.extend((m[r, cc] / scale).tolist())
            per_block[b][0].append(k)
            per_block[b][1].append(m / scale)
        if con.kind != "eq":
            q = slack_of[k]
            slack_sign[q] = 1.0 if con.kind == "le" else -1.0
            rows.append(q)
            cols.append(k)
            vals.append(slack_sign[q])
        c_vec[k] = -con.rhs / scale
    G = spmatrix(vals, rows, cols, (dim, m_con))
    h = np.zeros(dim)
    for b, m in problem.objective.items():
        sz = problem.block_sizes[b]
        h[offsets[b]:offsets[b] + sz * sz] = m.reshape(-1, order="F")

    kkt = _BlockKkt(m_con, np.array(ineq, dtype=np.int64), slack_sign,
                    [(offsets[b], problem.block_sizes[b], np.array(per_block[b][0]),
                      np.array(per_block[b][1])) for b in blocks])
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol,
            "maxiters": max_iterations}
    sol = solvers.conelp(matrix(c_vec), G, matrix(h),
                         dims={"l": len(ineq), "q": [], "s": sizes}, kktsolver=kkt,
                         options=opts)
    if sol["z"] is None:
        raise NumericalFailure(f"SDP solver returned no point (status {sol['status']})")
    z = np.array(sol["z"]).ravel()
    raw = {}
    for b, sz in zip(blocks, sizes):
        Z = z[offsets[b]:offsets[b] + sz * sz].reshape(sz, sz, order="F")
        raw[b] = np.tril(Z) + np.tril(Z, -1).T
    if 0 not in raw:
        raw[0] = np.diag([0.0, 1.0])

    residuals = {}
    for con in problem.constraints:
        denom = 1.0 + abs(con.rhs) + max(np.abs(m).max() for m in con.mats.values())
        residuals[con.label] = con.violation(raw) / denom
    primal = problem.objective_value(raw)
    # dual side certifies a bound on the relaxation; cvxopt's primal is our dual
    dual = -float(sol["primal objective"]) if sol["primal objective"] is not None else primal
    gap = abs(primal - dual)
    min_eig = min(float(np.linalg.eigvalsh(raw[b]).min()) for b in blocks)
    worst = max(residuals.values(), default=0.0)
    if (sol["status"] != "optimal"
            and not (worst <= 10 * tol and gap <= 10 * tol * (1 + abs(primal)))):
        raise NumericalFailure(
            f"SDP solver stopped with status {sol['status']!r}: worst relative residual "
            f"{worst:.2e}, gap {gap:.2e}")

    lay = problem.layout
    n = problem.n
    row10 = np.zeros((n, 3))
    for i in range(n):
        Z = raw[i + 1]
        for s_idx, nm in enumerate(("xl", "xa", "xc")):
            if lay.has(nm):
                row10[i, s_idx] = Z[lay.one, lay.index(nm)]
    marginals = np.array([extract_marginals(r) for r in row10]) if n else row10
    out_blocks = tuple(_embed(problem, b, _unscale(problem, b, raw[b]))
                       for b in range(len(problem.block_sizes)))
    return SdpSolution(out_blocks, min(primal, dual), marginals, row10, residuals,
                       gap, int(sol["iterations"]), min_eig)


def extract_marginals(z_row, limit: float = CLAMP_LIMIT) -> np.ndarray:
    """Placement marginals from row 10 of a block (or the three row entries).

    Entries are clamped to [0, 1] and renormalised to sum 1; a correction
    larger than ``limit`` on any entry raises :class:`ClampExceedsTolerance`.
    """
    z_row = np.asarray(z_row, dtype=float)
    if z_row.shape == (FULL_LAYOUT.size, FULL_LAYOUT.size):
        z_row = z_row[FULL_LAYOUT.one, :3]
    if z_row.shape != (3,):
        raise ValueError("expected a 10x10 block or three row-10 entries")
    p = np.clip(z_row, 0.0, 1.0)
    total = p.sum()
    if not total > 0:
        raise ClampExceedsTolerance(f"marginals {z_row.tolist()} vanish after clamping")
    p = p / total
    moved = np.abs(p - z_row).max()
    if moved > limit:
        raise ClampExceedsTolerance(
            f"marginals {z_row.tolist()} need a correction of {moved:.3g} > {limit:g}")
    return p
