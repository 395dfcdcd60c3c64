import math

import numpy as np
import pytest

from dapplan import link
from dapplan.params import RadioParams


def test_reference_loss_is_free_space_at_100m():
    r = RadioParams()
    lam = link.C_LIGHT / r.carrier_freq_hz
    expected = 20 * math.log10(4 * math.pi * 100 / lam)
    assert link.path_loss(100.0, r, 10.0, 2.0) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(71.5, abs=0.05)


def test_erceg_exponent_type_b():
    assert link.erceg_exponent(10.0) == pytest.approx(5.645, abs=1e-12)


def test_path_loss_monotone_and_slope():
    r = RadioParams()
    d = np.linspace(100, 2000, 200)
    pl = link.path_loss(d, r, 10.0, 2.0)
    assert np.all(np.diff(pl) > 0)
    g = link.erceg_exponent(10.0)
    assert link.path_loss(400.0, r, 10.0, 2.0) - link.path_loss(200.0, r, 10.0, 2.0) == pytest.approx(10 * g * math.log10(2))


def test_path_loss_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        link.path_loss(0.0, RadioParams())


def test_sinr_reference_value_and_indoor_offset():
    r = RadioParams()
    g = link.sinr(100.0, r, False, 10.0, 2.0)
    # 14.77 + 174 - 7 - 10 log10(281 kHz) - 6 - 71.53 - 12.3
    expected = r.tx_power_dbm + 174 - 7 - 10 * math.log10(281e3) - 6 - link.path_loss(100.0, r, 10.0, 2.0) - 12.3
    assert g == pytest.approx(expected, abs=1e-9)
    assert g == pytest.approx(37.45, abs=0.01)
    assert g - link.sinr(100.0, r, True, 10.0, 2.0) == pytest.approx(r.penetration_loss_db)


def test_sinr_db_matches_linear_form():
    r = RadioParams()
    for d in (30.0, 100.0, 350.0):
        lin = link.sinr_linear(d, r, False, 10.0, 2.0)
        assert 10 * math.log10(lin) == pytest.approx(link.sinr(d, r, False, 10.0, 2.0), abs=1e-9)


def test_doubling_distance_drops_sinr_by_slope():
    r = RadioParams()
    g = link.erceg_exponent(10.0)
    drop = link.sinr(300.0, r, False, 10.0, 2.0) - link.sinr(600.0, r, False, 10.0, 2.0)
    assert drop == pytest.approx(10 * g * math.log10(2))


def test_per_curve_monotone_with_limits():
    c = link.PerCurve()
    s = np.arange(-20, 40, 0.1)
    p = c(s, 250)
    assert np.all(np.diff(p) <= 0)
    assert c(-200.0) == pytest.approx(1.0)
    assert c(200.0) == 0.0


def test_table_curve_interpolates_and_validates(tmp_path):
    c = link.PerCurve.from_table([0, 10], [1.0, 0.0])
    assert c(5.0) == pytest.approx(0.5)
    assert c(-5.0) == 1.0 and c(50.0) == 0.0
    with pytest.raises(ValueError):
        link.PerCurve.from_table([0, 10], [0.0, 1.0])
    f = tmp_path / "per.csv"
    f.write_text("sinr_db,per\n0,0.8\n4,0.2\n")
    assert link.PerCurve.from_csv(f)(2.0) == pytest.approx(0.5)


def test_link_cost_values():
    assert link.link_cost(0.0) == 0.0
    assert link.link_cost(0.5) == pytest.approx(math.log(2))
    assert link.link_cost(1.0) == math.inf
    # two reliable hops beat one lossy hop
    assert 2 * link.link_cost(0.1) == pytest.approx(0.2107, abs=1e-4)
    assert 2 * link.link_cost(0.1) < link.link_cost(0.5)


def test_link_cost_additivity():
    rng = np.random.default_rng(0)
    eps = rng.uniform(0, 0.5, 10)
    assert np.sum(link.link_cost(eps)) == pytest.approx(-math.log(np.prod(1 - eps)), abs=1e-12)


def test_max_range_brackets_and_is_monotone():
    r = RadioParams()
    c = link.PerCurve()
    d = link.max_range(r, c, 0.3, 2.0, 10.0)
    assert c(link.sinr(d, r, False, 2.0, 10.0)) <= 0.3 < c(link.sinr(d + 0.2, r, False, 2.0, 10.0))
    assert link.max_range(r, c, 0.05, 2.0, 10.0) < d
    assert link.max_range(r, c, 1 - 1e-12, 2.0, 10.0) > d


def test_max_range_infeasible_budget():
    r = RadioParams(tx_power_dbm=-60.0)
    with pytest.raises(link.RadioBudgetError):
        link.max_range(r, link.PerCurve(), 0.3)


def test_link_budget_bundle():
    r = RadioParams()
    res = link.link_budget(150.0, r, link.PerCurve(), 250, tx_height=2.0, rx_height=10.0)
    assert 0.0 <= res.per <= 1.0
    assert res.cost == pytest.approx(link.link_cost(res.per))
