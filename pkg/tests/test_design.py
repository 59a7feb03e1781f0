import math

import numpy as np
import pytest
from scipy.optimize import brentq

from washboard import JunctionParams
from washboard.design import DesignInput, min_levels, operations_budget
from washboard.errors import NoBoundLevel
from washboard.junction import level_count_ns


def criterion(n, n_op, n_g=10.0, extra=0.0):
    return n - (5 / 36) * math.log(n_op * n_g) - (5 / 24) * math.log(432 * n) - extra


def test_million_operations_worked_value():
    r = min_levels(DesignInput(1e6))
    assert r.fixed_point == pytest.approx(3.7799, abs=1e-4)
    assert r.ceiling == 4
    assert r.fixed_point_exact == pytest.approx(3.9148, abs=1e-4)
    assert r.residual < 1e-9


@pytest.mark.parametrize("n_op", [1, 10, 1e3, 1e6, 1e9, 1e15])
def test_fixed_point_matches_root_finder(n_op):
    r = min_levels(DesignInput(n_op))
    root = brentq(criterion, 1.0, 50.0, args=(n_op,), xtol=1e-14)
    assert r.fixed_point == pytest.approx(root, rel=1e-9)
    exact = brentq(criterion, 1.0, 50.0, args=(n_op, 10.0, (5 / 72) * math.log(2 * math.pi)), xtol=1e-14)
    assert r.fixed_point_exact == pytest.approx(exact, rel=1e-9)
    assert r.residual < 1e-9


def test_single_operation():
    r = min_levels(DesignInput(1))
    assert r.fixed_point == pytest.approx(brentq(criterion, 1.0, 50.0, args=(1,)), rel=1e-9)
    assert r.ceiling == 2


def test_e_to_36_over_5_more_operations_cost_about_one_level():
    a = min_levels(DesignInput(1e6)).fixed_point
    b = min_levels(DesignInput(1e6 * math.exp(36 / 5))).fixed_point
    # exactly one from the log term, plus a small log(N) feedback
    assert 1.0 < b - a < 1.1


def test_monotone_in_operations():
    n = [min_levels(DesignInput(x)).fixed_point for x in np.logspace(0, 12, 25)]
    assert np.all(np.diff(n) > 0)


def test_input_validation():
    with pytest.raises(ValueError):
        DesignInput(0.5)
    with pytest.raises(ValueError):
        DesignInput(10, n_g=0)


def test_budget_round_trip_matches_level_count():
    p = JunctionParams(14.12e-6, 3.7e-12)
    i = 13.93e-6
    budget = operations_budget(p, i)
    assert 1 < budget < 1e6
    back = min_levels(DesignInput(budget)).fixed_point
    assert back == pytest.approx(level_count_ns(p, i), rel=0.15)


def test_budget_guards():
    p = JunctionParams(14.12e-6, 3.7e-12)
    # a very deep well: Gamma_1 underflows
    assert operations_budget(p, 0.3 * p.i0) == math.inf
    with pytest.raises(NoBoundLevel):
        operations_budget(p, 0.9999 * p.i0)
    with pytest.raises(ValueError):
        operations_budget(p, 13.93e-6, n_g=0)
