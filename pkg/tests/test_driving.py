"""Samplers, force-point tracking, swallowing times."""

import numpy as np
import pytest

from loewner_lab.core import CHORDAL, RADIAL, DrivingPath
from loewner_lab.driving import (
    INF,
    SleConfig,
    SwallowStop,
    sample_sle_driving,
    sample_sle_kappa_rho,
    support_interval,
    swallow_time,
    swallow_times,
)


def test_kappa_zero_is_constant():
    cfg = SleConfig(kappa=0.0, x0=0.4, T=1.0, dt=0.01, seed=1)
    path = sample_sle_driving(cfg)
    assert np.all(path.values == 0.4)


def test_reproducible_and_distinct_seeds():
    cfg = SleConfig(kappa=2.0, T=1.0, dt=1e-3, seed=7)
    a = sample_sle_driving(cfg)
    b = sample_sle_driving(cfg)
    assert np.array_equal(a.values, b.values)
    c = sample_sle_driving(SleConfig(kappa=2.0, T=1.0, dt=1e-3, seed=8))
    assert a.values[1] != c.values[1]


def test_brownian_variance():
    # Var[lambda(1)] = kappa over many seeds, within MC error
    kappa, n = 2.0, 4000
    finals = np.array(
        [
            sample_sle_driving(SleConfig(kappa=kappa, T=1.0, dt=0.01, seed=s)).values[-1]
            for s in range(n)
        ]
    )
    var = np.var(finals)
    se = kappa * np.sqrt(2.0 / n)
    assert abs(var - kappa) < 3 * se


def test_quadratic_variation():
    path = sample_sle_driving(SleConfig(kappa=3.0, T=1.0, dt=1e-4, seed=5))
    qv = np.sum(np.diff(path.values / np.sqrt(3.0)) ** 2)
    assert abs(qv - 1.0) < 0.05


def test_empty_rho_reduces_to_plain_driving():
    cfg = SleConfig(kappa=2.0, T=0.5, dt=1e-3, seed=3)
    plain = sample_sle_driving(cfg)
    path, _ = sample_sle_kappa_rho(cfg)
    assert np.array_equal(plain.values, path.values)


def test_radial_kappa_rho_no_swallow_for_large_negative_rho():
    # rho = -kappa-6: Bessel-like dimension 3 + 8/kappa >= 2, never swallowed
    cfg = SleConfig(
        kappa=2.0, rho=(-8.0,), x0=0.0, force_points=(np.pi,), T=5.0, dt=2e-3,
        seed=11, geometry=RADIAL,
    )
    path, state = sample_sle_kappa_rho(cfg)
    assert path.horizon == pytest.approx(5.0)
    assert state.alive[0]


def test_chordal_plain_points_always_swallowed():
    # kappa=4 plain SLE: point x=1 swallowed before T=50 for every seed tried
    n_seeds = 200
    count = 0
    for s in range(n_seeds):
        path = sample_sle_driving(SleConfig(kappa=4.0, T=50.0, dt=5e-3, seed=s))
        if swallow_time(path, 1.0) is not None:
            count += 1
    assert count == n_seeds


def test_swallow_time_constant_driving():
    n = 1000
    path = DrivingPath(np.linspace(0, 2, n + 1), np.zeros(n + 1), CHORDAL)
    assert swallow_time(path, 2.0) == pytest.approx(1.0, abs=1e-12)
    assert swallow_time(path, -2.0) == pytest.approx(1.0, abs=1e-12)
    assert swallow_time(path, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert swallow_time(path, 3.0) is None


def test_swallow_time_monotone_in_distance():
    n = 400
    path = DrivingPath(np.linspace(0, 1, n + 1), np.zeros(n + 1), CHORDAL)
    xs = np.array([0.2, 0.5, 1.0, 1.5, 1.9])
    taus = swallow_times(path, xs)
    assert np.all(np.diff(taus) > 0)


def test_radial_swallow_time_constant_driving():
    # v(theta) = 1/(4 cos^2(theta/2)) decays at rate 1: tau = -2 ln cos(theta/2)
    n = 2000
    path = DrivingPath(np.linspace(0, 3, n + 1), np.zeros(n + 1), RADIAL)
    th = 1.2
    expect = -2.0 * np.log(np.cos(th / 2))
    assert swallow_times(path, [th])[0] == pytest.approx(expect, abs=1e-12)
    assert swallow_times(path, [-th])[0] == pytest.approx(expect, abs=1e-12)
    assert np.isinf(swallow_times(path, [np.pi])[0])


def test_support_interval_chordal():
    n = 500
    path = DrivingPath(np.linspace(0, 1, n + 1), np.zeros(n + 1), CHORDAL)
    lo, hi = support_interval(path)
    assert lo == pytest.approx(-2.0, abs=1e-9)
    assert hi == pytest.approx(2.0, abs=1e-9)
    lo2, hi2 = support_interval(path, T=0.5)
    assert -2 < lo < lo2 < 0 < hi2 < hi < 2


def test_support_tends_to_full_circle():
    # radial SLE(kappa; rho<=-kappa/2-2): unswallowed arc shrinks with T
    cfg = SleConfig(
        kappa=2.0, rho=(-8.0,), x0=0.0, force_points=(np.pi,), T=20.0, dt=5e-3,
        seed=2, geometry=RADIAL,
    )
    path, _ = sample_sle_kappa_rho(cfg)
    lo, hi = support_interval(path)
    arc = 2.0 * np.pi - (hi - lo)
    assert arc < 0.05
