import math

import numpy as np
import pytest

from capshare.errors import DivisionByZeroResource, InfeasibleAllocation
from capshare.model import (
    Allocation,
    DecisionVector,
    ObjectiveMode,
    Placement,
    TaskProfile,
    UserParams,
    derived_constants,
    total_cost,
    user_delay,
)
from helpers import instance, shared, user

L, A, C = Placement.LOCAL, Placement.CAP, Placement.CLOUD


def test_derived_constants():
    sh = shared(r_ac=6e6, f_cloud=2e9, alpha=0.0)
    task, up = user(d_in=6e6, d_out=0.0, cycles=2e9, e_tx=1.0, e_rx=1.0, cost_cap=123.0)
    d = derived_constants(task, up, sh)
    assert d.t_ac == pytest.approx(1.0)
    assert d.t_cloud == pytest.approx(1.0)
    assert d.e_cap_weighted == 2.0
    assert d.e_cloud_weighted == pytest.approx(2.0 + 0.2 * up.cost_cloud)


def test_invariants_rejected():
    with pytest.raises(ValueError):
        TaskProfile(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TaskProfile(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        UserParams(1, 0, 1, 1, 1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        user(deadline=0.0)
    with pytest.raises(ValueError):
        instance([])


def test_user_delay_cases():
    users = [user(d_in=10e6, d_out=2e6, cycles=6e9, eta_up=2, eta_down=2, t_local=1.5)] * 3
    sh = shared(c_ul=20e6, c_dl=20e6, f_cap=3e9, f_cloud=6e9, r_ac=12e6)
    inst = instance(users, sh)
    dec = DecisionVector((L, A, C))
    alloc = Allocation([0, 5e6, 5e6], [0, 1e6, 1e6], [0, 3e9, 0])
    assert user_delay(0, dec, alloc, inst) == 1.5
    assert user_delay(1, dec, alloc, inst) == pytest.approx(4.0)
    # cloud: 1 + 1 + t_ac (12e6/12e6) + t_cloud (6e9/6e9)
    assert user_delay(2, dec, alloc, inst) == pytest.approx(4.0)


def test_zero_output_skips_downlink():
    inst = instance([user(d_out=0.0)])
    dec = DecisionVector((A,))
    assert user_delay(0, dec, Allocation([2.0], [0.0], [1.0]), inst) == pytest.approx(3.0)
    with pytest.raises(DivisionByZeroResource):
        user_delay(0, dec, Allocation([2.0], [0.0], [0.0]), inst)


def test_total_cost_examples():
    inst = instance([user(e_local=2.0, t_local=1.0, rho=0.5)])
    c = total_cost(inst, DecisionVector((L,)), Allocation.zeros(1))
    assert c.total == pytest.approx(2.0)

    two = [user(t_local=1.0), user(t_local=3.0)]
    dec = DecisionVector((L, L))
    z = Allocation.zeros(2)
    assert total_cost(instance(two), dec, z).delay_term == 3.0
    assert total_cost(instance(two, mode=ObjectiveMode.SUM_DELAY), dec, z).delay_term == 4.0

    zero_rho = instance([user(rho=0.0, t_local=2.0), user(rho=0.0, t_local=1.0)])
    c = total_cost(zero_rho, dec, z)
    assert c.total == c.delay_term == 2.0


def test_total_cost_rejects_bad_allocations():
    inst = instance([user(), user()], shared(c_ul=10, c_dl=10, c_total=15))
    dec = DecisionVector((A, C))
    with pytest.raises(InfeasibleAllocation):
        total_cost(inst, dec, Allocation([6, 6], [1, 1], [1, 0]))
    with pytest.raises(InfeasibleAllocation):
        total_cost(inst, dec, Allocation([5, 5], [3, 3], [1, 0]))  # total cap
    with pytest.raises(InfeasibleAllocation):
        total_cost(inst, dec, Allocation([5, 5], [1, 1], [0.5, 0.5]))  # CPU to cloud user
    with pytest.raises(InfeasibleAllocation):
        total_cost(inst, DecisionVector((L, C)), Allocation([1, 5], [0, 1], [0, 0]))


def test_monotone_in_resources_and_max_le_sum():
    rng = np.random.default_rng(3)
    us = [user(d_in=rng.uniform(1, 4), d_out=rng.uniform(0, 2), cycles=rng.uniform(1, 3))
          for _ in range(3)]
    inst = instance(us, shared(c_ul=30, c_dl=30, f_cap=3))
    dec = DecisionVector((A, C, A))
    base = Allocation([5, 5, 5], [4, 4, 4], [1, 0, 1])
    c0 = total_cost(inst, dec, base).total
    for field in ("cu", "cd", "fa"):
        for i in (0, 2):
            arrs = {f: getattr(base, f).copy() for f in ("cu", "cd", "fa")}
            arrs[field][i] *= 1.5
            assert total_cost(inst, dec, Allocation(**arrs)).total <= c0 + 1e-12
    smode = inst.with_mode(ObjectiveMode.SUM_DELAY)
    assert total_cost(inst, dec, base).delay_term <= total_cost(smode, dec, base).delay_term


def test_prices_irrelevant_without_weights():
    a = instance([user(cost_cap=1.0, cost_cloud=5.0)], shared(alpha=0.0, beta=0.0))
    b = instance([user(cost_cap=9.0, cost_cloud=0.1)], shared(alpha=0.0, beta=0.0))
    alloc = Allocation([10.0], [10.0], [1.0])
    for p in (A, C):
        dec = DecisionVector((p,))
        a_alloc = alloc if p == A else Allocation([10.0], [10.0], [0.0])
        assert total_cost(a, dec, a_alloc).total == total_cost(b, dec, a_alloc).total


def test_decision_round_trips():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = DecisionVector.from_codes(rng.integers(0, 3, 7))
        assert DecisionVector.parse(str(d)) == d
        assert DecisionVector.parse(",".join(str(d))) == d
        oh = d.one_hot()
        assert np.all(oh.sum(axis=1) == 1)
        assert DecisionVector.from_one_hot(oh) == d
    with pytest.raises(ValueError):
        DecisionVector.parse("LAX")
    with pytest.raises(ValueError):
        DecisionVector.from_one_hot(np.array([[1, 1, 0]]))


def test_decision_helpers():
    d = DecisionVector.uniform(4, C).replace(1, L)
    assert str(d) == "CLCC"
    assert d.count(C) == 3 and d.count(A) == 0
    assert list(d) == [C, L, C, C] and len(d) == 4 and d[1] is L
    assert math.isclose(sum(d.codes), 6)
