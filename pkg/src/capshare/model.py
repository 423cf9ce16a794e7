"""Domain types and exact cost evaluation for CAP-assisted offloading.

All quantities are stored in raw SI-style units: bits, Hz, cycles,
cycles/s, seconds, joules. Per-user weighted energies are in
"seconds" once multiplied by the energy weight ``rho`` (s/J), which is
what makes them addable to the delay term.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DivisionByZeroResource, InfeasibleAllocation

BITS_PER_MB = 8e6


class Placement(enum.IntEnum):
    LOCAL = 0
    CAP = 1
    CLOUD = 2

    @property
    def code(self) -> str:
        return "LAC"[self.value]

    @classmethod
    def from_code(cls, code: str) -> "Placement":
        try:
            return cls("LAC".index(code.upper()))
        except ValueError:
            raise ValueError(f"unknown placement code {code!r}") from None


class ObjectiveMode(enum.Enum):
    MAX_DELAY = "max"
    SUM_DELAY = "sum"


@dataclass(frozen=True)
class TaskProfile:
    d_in: float
    d_out: float
    cycles: float

    def __post_init__(self):
        if not self.d_in > 0:
            raise ValueError(f"d_in must be > 0, got {self.d_in}")
        if not self.d_out >= 0:
            raise ValueError(f"d_out must be >= 0, got {self.d_out}")
        if not self.cycles > 0:
            raise ValueError(f"cycles must be > 0, got {self.cycles}")


@dataclass(frozen=True)
class UserParams:
    e_local: float
    t_local: float
    e_tx: float
    e_rx: float
    eta_up: float
    eta_down: float
    cost_cap: float
    cost_cloud: float
    rho: float
    deadline: float | None = None

    def __post_init__(self):
        # rho = 0 and zero prices are allowed: they switch terms off
        for name in ("e_local", "t_local", "eta_up", "eta_down"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("e_tx", "e_rx", "cost_cap", "cost_cloud", "rho"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.deadline is not None and not self.deadline > 0:
            raise ValueError(f"deadline must be > 0, got {self.deadline}")


@dataclass(frozen=True)
class SharedParams:
    c_ul: float
    c_dl: float
    c_total: float
    f_cap: float
    f_cloud: float
    r_ac: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("c_ul", "c_dl", "c_total", "f_cap", "f_cloud", "r_ac"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("alpha", "beta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


class DerivedTask(NamedTuple):
    t_ac: float
    t_cloud: float
    e_cap_weighted: float
    e_cloud_weighted: float


def derived_constants(task: TaskProfile, user: UserParams, shared: SharedParams) -> DerivedTask:
    """Resource-independent per-user constants (CAP-cloud hop, cloud CPU, E^A, E^C)."""
    return DerivedTask(
        t_ac=(task.d_in + task.d_out) / shared.r_ac,
        t_cloud=task.cycles / shared.f_cloud,
        e_cap_weighted=user.e_tx + user.e_rx + shared.alpha * user.cost_cap,
        e_cloud_weighted=user.e_tx + user.e_rx + shared.beta * user.cost_cloud,
    )


class InstanceArrays(NamedTuple):
    """Vectorised view of an instance used by the solvers."""

    a_up: np.ndarray  # d_in / eta_up  (Hz*s)
    b_down: np.ndarray  # d_out / eta_down  (Hz*s)
    cycles: np.ndarray
    k_cloud: np.ndarray  # t_ac + t_cloud
    t_local: np.ndarray
    deadline: np.ndarray  # +inf where absent
    energy: np.ndarray  # (N, 3) rho-weighted energy per placement


@dataclass(frozen=True)
class Instance:
    users: tuple[tuple[TaskProfile, UserParams], ...]
    shared: SharedParams
    objective_mode: ObjectiveMode = ObjectiveMode.MAX_DELAY

    def __post_init__(self):
        users = tuple((t, p) for t, p in self.users)
        if not users:
            raise ValueError("an instance needs at least one user")
        object.__setattr__(self, "users", users)

    @property
    def n(self) -> int:
        return len(self.users)

    @property
    def has_deadlines(self) -> bool:
        return all(p.deadline is not None for _, p in self.users)

    @property
    def tasks(self) -> tuple[TaskProfile, ...]:
        return tuple(t for t, _ in self.users)

    @property
    def params(self) -> tuple[UserParams, ...]:
        return tuple(p for _, p in self.users)

    @cached_property
    def derived(self) -> tuple[DerivedTask, ...]:
        return tuple(derived_constants(t, p, self.shared) for t, p in self.users)

    @cached_property
    def arrays(self) -> InstanceArrays:
        tasks, params, der = self.tasks, self.params, self.derived

        def arr(values):
            out = np.array(list(values), dtype=float)
            out.flags.writeable = False
            return out

        energy = np.array(
            [[p.rho * p.e_local, p.rho * d.e_cap_weighted, p.rho * d.e_cloud_weighted]
             for p, d in zip(params, der)]
        )
        energy.flags.writeable = False
        return InstanceArrays(
            a_up=arr(t.d_in / p.eta_up for t, p in self.users),
            b_down=arr(t.d_out / p.eta_down for t, p in self.users),
            cycles=arr(t.cycles for t in tasks),
            k_cloud=arr(d.t_ac + d.t_cloud for d in der),
            t_local=arr(p.t_local for p in params),
            deadline=arr(math.inf if p.deadline is None else p.deadline for p in params),
            energy=energy,
        )

    def with_shared(self, **changes) -> "Instance":
        return replace(self, shared=replace(self.shared, **changes))

    def with_mode(self, mode: ObjectiveMode) -> "Instance":
        return replace(self, objective_mode=mode)

    def with_deadlines(self, deadlines: Sequence[float | None]) -> "Instance":
        if len(deadlines) != self.n:
            raise ValueError("need one deadline per user")
        users = tuple((t, replace(p, deadline=d)) for (t, p), d in zip(self.users, deadlines))
        return replace(self, users=users)

    def map_users(self, fn) -> "Instance":
        """Return a copy with ``fn(task, params) -> (task, params)`` applied per user."""
        return replace(self, users=tuple(fn(t, p) for t, p in self.users))


@dataclass(frozen=True)
class DecisionVector:
    placements: tuple[Placement, ...]

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(Placement(p) for p in self.placements))

    @classmethod
    def uniform(cls, n: int, placement: Placement) -> "DecisionVector":
        return cls((placement,) * n)

    @classmethod
    def from_codes(cls, codes: Iterable[int]) -> "DecisionVector":
        return cls(tuple(Placement(int(c)) for c in codes))

    @classmethod
    def parse(cls, text: str) -> "DecisionVector":
        """Inverse of ``str()``: accepts e.g. ``"LAC"`` or ``"L,A,C"``."""
        letters = [c for c in text if not c.isspace() and c != ","]
        return cls(tuple(Placement.from_code(c) for c in letters))

    @classmethod
    def from_one_hot(cls, x: np.ndarray) -> "DecisionVector":
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != 3:
            raise ValueError("one-hot matrix must have shape (N, 3)")
        if not np.all((x == 0) | (x == 1)) or not np.all(x.sum(axis=1) == 1):
            raise ValueError("every row must contain exactly one 1")
        return cls.from_codes(np.argmax(x, axis=1))

    def __len__(self) -> int:
        return len(self.placements)

    def __iter__(self):
        return iter(self.placements)

    def __getitem__(self, i: int) -> Placement:
        return self.placements[i]

    def __str__(self) -> str:
        return "".join(p.code for p in self.placements)

    @property
    def codes(self) -> np.ndarray:
        return np.array([int(p) for p in self.placements], dtype=np.int64)

    def one_hot(self) -> np.ndarray:
        x = np.zeros((len(self), 3))
        x[np.arange(len(self)), self.codes] = 1.0
        return x

    def replace(self, i: int, placement: Placement) -> "DecisionVector":
        p = list(self.placements)
        p[i] = Placement(placement)
        return DecisionVector(tuple(p))

    def count(self, placement: Placement) -> int:
        return sum(1 for p in self.placements if p == placement)


@dataclass(frozen=True)
class Allocation:
    cu: np.ndarray
    cd: np.ndarray
    fa: np.ndarray

    def __post_init__(self):
        for name in ("cu", "cd", "fa"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if not (self.cu.shape == self.cd.shape == self.fa.shape) or self.cu.ndim != 1:
            raise ValueError("cu, cd, fa must be 1-D arrays of equal length")

    @classmethod
    def zeros(cls, n: int) -> "Allocation":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    def __eq__(self, other):
        if not isinstance(other, Allocation):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("cu", "cd", "fa"))

    __hash__ = None


@dataclass(frozen=True)
class CostBreakdown:
    energy_term: float
    delay_term: float
    total: float
    per_user_delay: tuple[float, ...] = field(default=())


def check_allocation(instance: Instance, decision: DecisionVector, alloc: Allocation,
                     rtol: float = 1e-9) -> None:
    """Raise :class:`InfeasibleAllocation` unless ``alloc`` respects every budget."""
    n = instance.n
    if len(decision) != n or alloc.cu.shape != (n,):
        raise InfeasibleAllocation("decision/allocation length does not match the instance")
    s = instance.shared
    if min(alloc.cu.min(), alloc.cd.min(), alloc.fa.min()) < 0:
        raise InfeasibleAllocation("negative resource share")
    budgets = (
        ("uplink", alloc.cu.sum(), s.c_ul),
        ("downlink", alloc.cd.sum(), s.c_dl),
        ("total bandwidth", alloc.cu.sum() + alloc.cd.sum(), s.c_total),
        ("CAP CPU", alloc.fa.sum(), s.f_cap),
    )
    for name, used, cap in budgets:
        if used > cap * (1 + rtol):
            raise InfeasibleAllocation(f"{name} budget exceeded: {used:.6g} > {cap:.6g}")
    codes = decision.codes
    if np.any(alloc.fa[codes != Placement.CAP] != 0):
        raise InfeasibleAllocation("CAP CPU given to a user not processed at the CAP")
    local = codes == Placement.LOCAL
    if np.any(alloc.cu[local] != 0) or np.any(alloc.cd[local] != 0):
        raise InfeasibleAllocation("bandwidth given to a locally processed user")


def user_delay(i: int, decision: DecisionVector, alloc: Allocation, instance: Instance) -> float:
    """Completion time of user ``i``'s task under ``decision`` and ``alloc``."""
    task, user = instance.users[i]
    where = decision[i]
    if where == Placement.LOCAL:
        return user.t_local

    def term(size, rate, what):
        if size == 0:
            return 0.0
        if rate <= 0:
            raise DivisionByZeroResource(f"user {i}: {what} is zero")
        return size / rate

    link = (term(task.d_in, user.eta_up * alloc.cu[i], "uplink bandwidth")
            + term(task.d_out, user.eta_down * alloc.cd[i], "downlink bandwidth"))
    if where == Placement.CAP:
        return link + term(task.cycles, alloc.fa[i], "CAP CPU rate")
    der = instance.derived[i]
    return link + der.t_ac + der.t_cloud


def energy_term(instance: Instance, decision: DecisionVector) -> float:
    e = instance.arrays.energy
    return float(e[np.arange(instance.n), decision.codes].sum())


def total_cost(instance: Instance, decision: DecisionVector, alloc: Allocation,
               rtol: float = 1e-9) -> CostBreakdown:
    """Weighted energy plus max (or sum) delay for a given decision and allocation."""
    check_allocation(instance, decision, alloc, rtol)
    delays = tuple(user_delay(i, decision, alloc, instance) for i in range(instance.n))
    if instance.objective_mode is ObjectiveMode.MAX_DELAY:
        delay = max(delays)
    else:
        delay = math.fsum(delays)
    energy = energy_term(instance, decision)
    return CostBreakdown(energy, delay, energy + delay, delays)
