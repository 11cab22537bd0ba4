import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seepage.verify import (
    ConvergenceTable, mms_surface_darcy, poiseuille_check, run_suite, slip_channel_check, solve_surface_darcy,
)


@given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=6), st.floats(0.5, 4.0))
@settings(max_examples=40)
def test_rates_recover_power_law(errors0, p):
    h = [2.0 ** -k for k in range(len(errors0))]
    t = ConvergenceTable("power law")
    for hk in h:
        t.add(hk, 3.0 * hk ** p, hk)
    assert all(abs(r - p) < 1e-9 for r in t.rates[1:])
    assert all(abs(r - 1.0) < 1e-9 for r in t.rates_h1[1:])
    assert math.isnan(t.rates[0])


def test_table_requires_decreasing_h():
    t = ConvergenceTable("x")
    t.add(0.5, 1.0)
    with pytest.raises(ValueError):
        t.add(0.5, 0.5)


def test_table_csv():
    t = ConvergenceTable("x")
    t.add(0.5, 0.1, 1.0)
    t.add(0.25, 0.025, 0.5)
    lines = t.to_csv().splitlines()
    assert lines[0] == "h,error_l2,rate_l2,error_h1,rate_h1"
    assert float(lines[2].split(",")[2]) == pytest.approx(2.0)


def test_mms_rate():
    t = mms_surface_darcy(4)
    assert len(t.h) == 4
    assert t.final_rate >= 1.9
    assert t.rates_h1[-1] == pytest.approx(1.0, abs=0.05)


def test_mms_constant_exact():
    t = mms_surface_darcy(3, mode="constant")
    assert t.error_l2 == [0.0, 0.0, 0.0]


def test_mms_scaling_invariance():
    a = mms_surface_darcy(3, eps_k_tau=0.01)
    b = mms_surface_darcy(3, eps_k_tau=0.02)
    assert np.allclose(a.error_l2, b.error_l2, rtol=1e-10)


def test_mms_needs_levels():
    with pytest.raises(ValueError):
        mms_surface_darcy(2)


def test_surface_solution_mean_zero():
    x, P = solve_surface_darcy(16, 0.5, lambda s: np.cos(2 * np.pi * s))
    w = np.zeros_like(x)
    w[:-1] += np.diff(x) / 2
    w[1:] += np.diff(x) / 2
    assert abs(w @ P) < 1e-14


def test_poiseuille():
    t = poiseuille_check(3)
    assert t.final_rate >= 1.8
    assert t.extra["centerline_exact"] == pytest.approx(1 / 0.24)
    assert abs(t.extra["centerline_32x8"] / t.extra["centerline_exact"] - 1) <= 0.02
    assert t.extra["flux_exact"] == pytest.approx(1 / 0.36)
    assert abs(t.extra["flux"] / t.extra["flux_exact"] - 1) <= 0.02


def test_poiseuille_zero_gradient():
    t = poiseuille_check(2, G=0.0)
    assert t.error_l2 == [0.0, 0.0]
    assert t.extra["centerline_32x8"] == 0.0


def test_slip_channel():
    t = slip_channel_check(2)
    assert abs(t.extra["slip_velocity"] / t.extra["slip_exact"] - 1) <= 0.02
    assert t.extra["normal_flux_abs"] <= 1e-6 * t.extra["channel_flux_exact"]
    assert t.extra["tangential_traction"] <= 1e-6 * t.extra["traction_scale"]
    assert t.final_rate >= 1.8


def test_run_suite():
    tables, ok = run_suite("mms")
    assert ok and len(tables) == 1
    with pytest.raises(ValueError):
        run_suite("bogus")
