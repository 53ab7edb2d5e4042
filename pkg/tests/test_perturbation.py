import math
import warnings

import numpy as np
import pytest

from cyclobloch.fiber import band_width, build_fiber_rotated_frame, solve_fiber
from cyclobloch.model import derive_scales, rational_config
from cyclobloch.perturbation import (
    WeakFieldWarning,
    WrongDirection,
    exact_band,
    first_order_01,
    leading_prefactor,
    measured_P,
    perturbative_band,
    scaling_exponents,
    second_order_11,
    width_exponent,
)


def test_first_order_examples():
    E, b = first_order_01(0, 0.0, rational_config(10.0, 0, 1))
    assert E == pytest.approx(-1.0)
    with pytest.warns(WeakFieldWarning):
        E, b = first_order_01(1, 0.0, rational_config(2.0, 0, 1))
    assert E == pytest.approx(2.0 - math.cos(0.2 * math.pi), abs=1e-12)
    assert b == {0: -0.25, 1: 1.0, 2: 0.25}


def test_first_order_against_exact_fiber():
    cfg = rational_config(10.0, 0, 1)
    worst = 0.0
    for kap in np.linspace(0, 2 * math.pi, 9):
        w, v = solve_fiber(build_fiber_rotated_frame(kap, cfg, (-20, 20)), want_vectors=True)
        E, b = first_order_01(0, kap, cfg)
        j = np.argmin(np.abs(w - E))
        worst = max(worst, abs(w[j] - E))
        # first-order neighbours; the residual is O(J^2/F^2)
        vec = v[:, j] / v[20, j]
        assert vec[21].real == pytest.approx(b[1], abs=6e-3)
        assert vec[19].real == pytest.approx(b[-1], abs=6e-3)
    assert worst < cfg.Jy**2 / cfg.F


def test_wrong_direction():
    with pytest.raises(WrongDirection):
        first_order_01(0, 0.0, rational_config(10.0, 1, 1))
    with pytest.raises(WrongDirection):
        second_order_11(0, 0.0, rational_config(10.0, 0, 1))


def test_second_order_example_and_zero_flux():
    with pytest.warns(WeakFieldWarning):
        dE = second_order_11(0, 0.0, rational_config(1.0, 1, 1))
    assert dE == pytest.approx(-0.13506, abs=1e-4)
    assert dE == pytest.approx((math.cos(-0.2 * math.pi) - 1) / math.sqrt(2), abs=1e-14)
    cfg = rational_config(20.0, 1, 1, alpha=0.0)
    assert all(second_order_11(nu, k, cfg) == pytest.approx(0.0, abs=1e-15) for nu in (-1, 0, 3) for k in (0.0, 0.4))


def test_second_order_zone_average_vanishes():
    cfg = rational_config(20.0, 1, 1)
    zone = 2 * math.pi / derive_scales(cfg).d_tilde
    k = np.linspace(0, zone, 256, endpoint=False)
    assert np.mean([second_order_11(2, x, cfg) for x in k]) == pytest.approx(0.0, abs=1e-12)


def test_second_order_band_width_matches_exact():
    cfg = rational_config(10.0, 1, 1)
    kap, E = exact_band(cfg, 0)
    dE = np.array([second_order_11(0, x, cfg) for x in kap])
    assert abs(np.ptp(dE) / np.ptp(E) - 1) < 0.1


@pytest.mark.parametrize(
    "rq, F, value",
    [((1, 1), 2.0, 0.125), ((1, 2), 2.0, -1 / 32)],
)
def test_leading_prefactor_examples(rq, F, value):
    assert leading_prefactor(*rq, F) == pytest.approx(value)


@pytest.mark.parametrize("rq", [(1, 1), (1, 2), (2, 3)])
def test_prefactor_doubling(rq):
    r, q = rq
    assert abs(leading_prefactor(r, q, 6.0) / leading_prefactor(r, q, 3.0)) == pytest.approx(2.0 ** (1 - q - r))


def test_scaling_exponents():
    assert scaling_exponents(0, 1) == (0, 0)
    assert scaling_exponents(1, 1) == (-1, 1)
    assert scaling_exponents(2, 3) == (-4, 4)


def test_perturbative_band_record():
    pb = perturbative_band(3, rational_config(8.0, 1, 2))
    assert pb.order == 3 and pb.exponent == 2
    assert pb.E0 == pytest.approx(8.0 * 3 / math.sqrt(5))
    assert perturbative_band(0, rational_config(8.0, 0, 1)).order == 1


def test_band_width_vanishes_without_one_coupling():
    for kw in ({"Jx": 0.0}, {"Jy": 0.0}):
        assert band_width(rational_config(6.0, 1, 2, **kw)) < 1e-12


def test_shape_function_converges():
    """Exact width / |Lambda| settles to an O(1) constant at large F."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakFieldWarning)
        for rq in ((1, 1), (1, 2)):
            ratios = []
            for F in (10.0, 20.0, 40.0):
                _, P = measured_P(rational_config(F, *rq))
                ratios.append(np.ptp(P))
            assert 0.1 < ratios[-1] < 10
            assert abs(ratios[-1] / ratios[-2] - 1) < abs(ratios[-2] / ratios[-3] - 1) + 1e-3


def test_width_exponent_static():
    assert width_exponent(1, 1, [4, 6, 8, 10]) == pytest.approx(-1, abs=0.15)
    assert width_exponent(1, 2, [4, 6, 8, 10]) == pytest.approx(-2, abs=0.3)
