"""Random instance generation and Monte-Carlo parameter sweeps.

Every sweep cell is a (grid value, method) pair averaged over a number
of realizations. Realization ``r`` draws its data sizes from the stream
``default_rng([seed, r])`` and seeds its randomised methods from
``[seed, r, 1]``, so all methods and all grid points see the same
instances (common random numbers) and rerunning a sweep reproduces each
cell exactly, in serial or in parallel.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import (ORACLE_WARN, cloud_only, exhaustive_optimal, local_cloud, local_only,
                        random_mapping, with_adjustment)
from .delay_alg import share_cap_d
from .errors import CapShareError
from .model import (BITS_PER_MB, Instance, ObjectiveMode, SharedParams, TaskProfile,
                    UserParams)
from .resource_alloc import DEFAULT_TOL
from .rounding import RoundingConfig, Solution, share_cap

METHODS = ("sharecap", "sharecap-d", "local", "cloud", "local-cloud", "random", "oracle")
CSV_HEADER = ("param", "value", "method", "mean_cost", "std_cost", "mean_runtime_s",
              "realizations", "seed")

# the default profile realizations per preset
PROFILES = {"ci": 20, "full": 100}


@dataclass(frozen=True)
class DefaultParams:
    """Constants of the reference scenario; field names follow the notation table."""

    n: int = 8
    d_in_mb: tuple[float, float] = (10.0, 30.0)
    d_out_mb: tuple[float, float] = (1.0, 3.0)
    t_local_per_bit: float = 3.95e-7
    e_local_per_bit: float = 3.65e-7
    e_tx_per_bit: float = 1.42e-7
    e_rx_per_bit: float = 1.42e-7
    cycles_per_byte: float = 1900.0
    c_ul: float = 20e6
    c_dl: float = 20e6
    c_total: float | None = None  # None means no limit beyond c_ul + c_dl
    eta_u: float = 3.5
    eta_d: float = 3.5
    f_a: float = 3e9
    f_c: float = 2e9
    r_ac: float = 6e6
    alpha: float = 1e-8
    beta: float = 2e-7
    rho: float = 0.5
    theta: float | None = None  # deadline factor, T_i = theta * t_local(i)
    objective: ObjectiveMode = ObjectiveMode.MAX_DELAY
    realizations: int = 100

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        for lo, hi in (self.d_in_mb, self.d_out_mb):
            if not 0 <= lo <= hi:
                raise ValueError("size ranges need 0 <= low <= high")
        if self.theta is not None and self.theta <= 0:
            raise ValueError("theta must be positive")

    def replace(self, **changes) -> "DefaultParams":
        return dataclasses.replace(self, **changes)

    def shared(self) -> SharedParams:
        total = self.c_ul + self.c_dl if self.c_total is None else self.c_total
        return SharedParams(self.c_ul, self.c_dl, total, self.f_a, self.f_c, self.r_ac,
                            self.alpha, self.beta)


SWEEPABLE = tuple(f.name for f in dataclasses.fields(DefaultParams)
                  if f.name not in ("d_in_mb", "d_out_mb", "objective", "realizations"))


def generate_instance(params: DefaultParams, rng: np.random.Generator) -> Instance:
    """Draw ``D_in`` then ``D_out`` for all users and apply the constants."""
    n = params.n
    d_in = rng.uniform(*params.d_in_mb, n) * BITS_PER_MB
    d_out = rng.uniform(*params.d_out_mb, n) * BITS_PER_MB
    users = []
    for bi, bo in zip(d_in, d_out):
        bi, bo = float(bi), float(bo)
        task = TaskProfile(bi, bo, params.cycles_per_byte * bi / 8.0)
        t_local = params.t_local_per_bit * bi
        user = UserParams(
            e_local=params.e_local_per_bit * bi, t_local=t_local,
            e_tx=params.e_tx_per_bit * bi, e_rx=params.e_rx_per_bit * bo,
            eta_up=params.eta_u, eta_down=params.eta_d,
            cost_cap=bi, cost_cloud=bi, rho=params.rho,
            deadline=None if params.theta is None else params.theta * t_local)
        users.append((task, user))
    return Instance(tuple(users), params.shared(), params.objective)


def run_method(method: str, instance: Instance, seed: int = 0, trials: int = 10,
               tol: float = DEFAULT_TOL) -> Solution:
    """Dispatch by CLI name. With deadlines present every method respects them.

    Baselines other than local-only and the oracle are repaired with the
    adaptive adjustment, and ``sharecap`` is run deadline-blind then repaired.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    dl = instance.has_deadlines
    cfg = RoundingConfig(trials=trials, seed=seed, tol=tol)
    if method == "sharecap-d":
        return share_cap_d(instance, seed=seed, tol=tol)
    if method == "local":
        return local_only(instance, dl, tol)
    if method == "oracle":
        return exhaustive_optimal(instance, dl, tol)
    blind = {
        "sharecap": lambda inst: share_cap(inst, cfg),
        "cloud": lambda inst: cloud_only(inst, False, tol),
        "local-cloud": lambda inst: local_cloud(inst, cfg),
        "random": lambda inst: random_mapping(inst, seed, False, tol),
    }[method]
    if dl:
        return with_adjustment(blind, instance, seed, tol)
    return blind(instance)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    grid: tuple
    methods: tuple[str, ...] = ("sharecap", "local", "cloud", "local-cloud", "random", "oracle")
    realizations: int = 20
    seed: int = 0
    scale_resources_with_n: bool = False
    theta: float | None = None
    base: DefaultParams = DefaultParams()
    trials: int = 10
    tol: float = DEFAULT_TOL
    timing: bool = False
    oracle_max_n: int = ORACLE_WARN
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.param not in SWEEPABLE:
            raise ValueError(f"cannot sweep {self.param!r}; choose from {', '.join(SWEEPABLE)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}")

    def point(self, value) -> DefaultParams:
        """Parameters at one grid value (scaled mode multiplies capacities by n/base.n)."""
        p = self.base.replace(realizations=self.realizations)
        if self.theta is not None:
            p = p.replace(theta=self.theta)
        if self.param == "n":
            value = int(value)
        p = p.replace(**{self.param: value})
        if self.scale_resources_with_n:
            k = p.n / self.base.n
            total = None if p.c_total is None else p.c_total * k
            p = p.replace(c_ul=p.c_ul * k, c_dl=p.c_dl * k, f_a=p.f_a * k, c_total=total)
        return p


@dataclass(frozen=True)
class CellError:
    value: object
    method: str
    realization: int
    message: str


@dataclass
class SweepRow:
    param: str
    value: object
    method: str
    mean_cost: float
    std_cost: float
    mean_runtime_s: float
    realizations: int
    seed: int


@dataclass
class SweepTable:
    spec: SweepSpec
    rows: list[SweepRow] = field(default_factory=list)
    errors: list[CellError] = field(default_factory=list)

    def cell(self, value, method: str) -> SweepRow:
        for row in self.rows:
            if row.method == method and row.value == value:
                return row
        raise KeyError((value, method))

    def series(self, method: str) -> np.ndarray:
        return np.array([self.cell(v, method).mean_cost for v in self.spec.grid])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.param, _fmt(r.value), r.method, _fmt(r.mean_cost), _fmt(r.std_cost),
                        _fmt(r.mean_runtime_s), r.realizations, r.seed])
        return buf.getvalue()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _method_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, r, 1]).generate_state(1)[0])


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CAPSHARE_THREADS", "1")))
    except ValueError:
        return 1


def _run_task(spec: SweepSpec, gi: int, r: int):
    params = spec.point(spec.grid[gi])
    instance = generate_instance(params, np.random.default_rng([spec.seed, r]))
    mseed = _method_seed(spec.seed, r)
    out = []
    for m in spec.methods:
        if m == "oracle" and instance.n > spec.oracle_max_n:
            out.append(None)  # not attempted, like the N/A cells of the runtime table
            continue
        t0 = time.perf_counter()
        try:
            sol = run_method(m, instance, mseed, spec.trials, spec.tol)
            out.append((sol.total, time.perf_counter() - t0, None))
        except CapShareError as exc:
            out.append((math.nan, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}"))
    return gi, r, out


def run_sweep(spec: SweepSpec, workers: int | None = None) -> SweepTable:
    """Evaluate every method on every realization at every grid value.

    Failed cells are recorded in ``errors`` and left out of the means; a
    cell with no successful realization has empty statistics.
    """
    tasks = [(gi, r) for gi in range(len(spec.grid)) for r in range(spec.realizations)]
    workers = workers or _workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda t: _run_task(spec, *t), tasks))
    else:
        results = [_run_task(spec, *t) for t in tasks]

    table = SweepTable(spec)
    by_point = {}
    for gi, r, out in results:
        by_point.setdefault(gi, []).append((r, out))
    for gi, value in enumerate(spec.grid):
        runs = sorted(by_point.get(gi, []), key=lambda ro: ro[0])
        for k, m in enumerate(spec.methods):
            costs, times = [], []
            for r, out in runs:
                cell = out[k]
                if cell is None:
                    continue
                cost, dt, err = cell
                if err is not None:
                    table.errors.append(CellError(value, m, r, err))
                    continue
                costs.append(cost)
                times.append(dt)
            mean = float(np.mean(costs)) if costs else math.nan
            std = float(np.std(costs)) if costs else math.nan
            rt = float(np.mean(times)) if (costs and spec.timing) else math.nan
            table.rows.append(SweepRow(spec.param, value, m, mean, std, rt, len(costs),
                                       spec.seed))
    return table


# presets --------------------------------------------------------------------

_CLASSIC = ("sharecap", "local", "cloud", "local-cloud", "random", "oracle")
_DEADLINE = ("sharecap-d", "local", "cloud", "local-cloud", "random", "oracle")
_F_A = tuple(float(f) * 1e9 for f in range(1, 8))
_N = (2, 4, 6, 8, 10)

_PRESETS = {
    "fig2": dict(param="beta", grid=(1e-9, 1e-8, 1e-7, 2e-7, 5e-7, 1e-6, 1e-5, 1e-4),
                 methods=_CLASSIC),
    "fig3": dict(param="f_a", grid=_F_A, methods=_CLASSIC),
    "fig4": dict(param="rho", grid=(0.1, 0.25, 0.5, 1.0, 2.0, 4.0), methods=_CLASSIC),
    "fig5": dict(param="n", grid=_N, methods=_CLASSIC),
    "fig6": dict(param="n", grid=_N, methods=_CLASSIC, scale_resources_with_n=True),
    "fig7": dict(param="theta", grid=(1.0, 1.1, 1.2, 1.4, 1.6, 1.8, 2.0), methods=_DEADLINE),
    "fig8": dict(param="f_a", grid=_F_A, methods=_DEADLINE, theta=1.1),
    "fig9": dict(param="n", grid=_N, methods=_DEADLINE, theta=1.1),
    "table3": dict(param="n", grid=(6, 7, 8, 9, 10, 20, 30, 40, 50),
                   methods=("sharecap", "oracle"), timing=True),
}
# the runtime table is oracle-dominated (about a minute per N=10 instance),
# so its profiles use fewer realizations than the cost figures
_TABLE3_REALIZATIONS = {"ci": 3, "full": 10}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str, profile: str = "full", seed: int = 0, **overrides) -> SweepSpec:
    """Named sweep; ``profile`` is ``ci`` (20 realizations) or ``full`` (100)."""
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    reps = _TABLE3_REALIZATIONS[profile] if name == "table3" else PROFILES[profile]
    kw = dict(_PRESETS[name], realizations=reps, seed=seed, name=name)
    kw.update(overrides)
    return SweepSpec(**kw)
