import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cyclobloch.model import (
    GOLDEN,
    AlphaOutOfRange,
    Gauge,
    InvalidDirection,
    Irrational,
    ModelConfig,
    NegativeField,
    NonCoprime,
    NotOnSublattice,
    Rational,
    UnsupportedGaugePair,
    derive_scales,
    from_extended,
    from_extended_array,
    gauge_chi,
    irrational_config,
    on_sublattice,
    rational_config,
    to_extended,
    unit_vectors,
    validate,
)

coprime = st.tuples(st.integers(0, 6), st.integers(1, 6)).filter(lambda t: math.gcd(*t) == 1 and t[0] <= t[1])


def test_scales_for_01():
    sc = derive_scales(rational_config(0.3, 0, 1))
    assert sc.F_x == 0.0 and sc.F_y == pytest.approx(0.3)
    assert sc.N == 1 and sc.d == 1.0
    assert sc.v_star == pytest.approx(0.3 / (2 * math.pi * 0.1))
    assert sc.F_cr == pytest.approx(2 * math.pi * 0.1)


def test_scales_for_12():
    sc = derive_scales(rational_config(1.0, 1, 2))
    assert sc.N == 5
    assert (sc.F_x, sc.F_y) == pytest.approx((1 / math.sqrt(5), 2 / math.sqrt(5)))
    assert sc.d * sc.d_tilde == pytest.approx(1.0)
    assert sc.theta == pytest.approx(2 * math.pi * 0.1 / 5)


def test_irrational_direction_ratio():
    sc = derive_scales(irrational_config(0.5, GOLDEN))
    assert sc.F_x / sc.F_y == pytest.approx(GOLDEN)
    assert math.hypot(sc.F_x, sc.F_y) == pytest.approx(0.5)
    assert sc.N is None


def test_zero_alpha_gives_nan_drift():
    sc = derive_scales(rational_config(0.3, 0, 1, alpha=0.0))
    assert math.isnan(sc.v_star)
    assert sc.F_cr == 0.0


@pytest.mark.parametrize(
    "cfg, exc",
    [
        (ModelConfig(F=1.0, direction=Rational(2, 4)), NonCoprime),
        (ModelConfig(F=1.0, alpha=0.7), AlphaOutOfRange),
        (ModelConfig(F=-1.0), NegativeField),
        (ModelConfig(F=1.0, direction=Rational(3, 2)), InvalidDirection),
        (ModelConfig(F=1.0, direction=Irrational(1.5)), InvalidDirection),
        (ModelConfig(F=1.0, direction=Irrational(GOLDEN), gauge=Gauge.ROTATED), UnsupportedGaugePair),
    ],
)
def test_validation_errors(cfg, exc):
    with pytest.raises(exc):
        validate(cfg)


def test_negative_pair_is_flipped():
    assert validate(ModelConfig(F=1.0, direction=Rational(-1, -2))).rq == (1, 2)


def test_convergents_approach_beta():
    conv = list(Irrational(GOLDEN).convergents(10))
    errs = [abs(c.r / c.q - GOLDEN) for c in conv]
    assert errs[-1] < 1e-3
    assert all(b <= a for a, b in zip(errs[1:], errs[2:]))
    assert all(math.gcd(c.r, c.q) == 1 for c in conv)


def test_unit_vectors_orthonormal():
    for cfg in (rational_config(1.0, 2, 3), irrational_config(1.0, GOLDEN)):
        e1, e2 = unit_vectors(cfg)
        assert np.dot(e1, e2) == pytest.approx(0.0, abs=1e-15)
        assert np.linalg.norm(e1) == pytest.approx(1.0)
        # e_xi is parallel to the field
        sc = derive_scales(cfg)
        assert e2 == pytest.approx(np.array([sc.F_x, sc.F_y]) / cfg.F)


@pytest.mark.parametrize("rq", [(0, 1), (1, 1), (1, 2), (1, 3), (2, 3), (3, 5)])
def test_extended_map_round_trip_exhaustive(rq):
    r, q = rq
    l, m = np.meshgrid(np.arange(-50, 50), np.arange(-50, 50), indexing="ij")
    s, p = to_extended(l, m, r, q)
    assert np.all(on_sublattice(s, p, r, q))
    l2, m2, mask = from_extended_array(s, p, r, q)
    assert mask.all()
    assert np.array_equal(l2, l) and np.array_equal(m2, m)


@pytest.mark.parametrize("rq", [(1, 2), (2, 3)])
def test_extended_points_off_sublattice(rq):
    r, q = rq
    N = r * r + q * q
    # the sublattice contains N Z^2, so a window of side 3N holds exactly 9N of its points
    side = np.arange(-N, 2 * N)
    S, P = np.meshgrid(side, side, indexing="ij")
    _, _, mask = from_extended_array(S, P, r, q)
    assert mask.sum() * N == mask.size
    s_bad, p_bad = S[~mask][0], P[~mask][0]
    with pytest.raises(NotOnSublattice):
        from_extended(int(s_bad), int(p_bad), r, q)


@given(coprime, st.integers(-40, 40), st.integers(-40, 40))
def test_extended_round_trip_property(rq, l, m):
    r, q = rq
    assert from_extended(*to_extended(l, m, r, q), r, q) == (l, m)


@given(coprime, st.floats(-0.5, 0.5))
def test_gauge_chi_reproduces_bond_phases(rq, alpha):
    """A_target - A_Y on every bond equals the lattice difference of chi."""
    from cyclobloch.lattice import peierls

    cfg = rational_config(0.0, *rq, alpha=alpha)
    l, m = np.meshgrid(np.arange(-6, 6), np.arange(-6, 6), indexing="ij")
    for g in (Gauge.LANDAU_X, Gauge.ROTATED):
        chi = lambda a, b: gauge_chi(g, a, b, cfg)  # noqa: E731
        Ax, Ay = peierls(g, l, m, cfg)
        Bx, By = peierls(Gauge.LANDAU_Y, l, m, cfg)
        # psi' = e^{i chi} psi turns A into A + chi(target site) - chi(source site) ... up to 2 pi
        dx = np.angle(np.exp(1j * (Ax - Bx - (chi(l, m) - chi(l + 1, m)))))
        dy = np.angle(np.exp(1j * (Ay - By - (chi(l, m) - chi(l, m + 1)))))
        assert np.max(np.abs(dx)) < 1e-9 and np.max(np.abs(dy)) < 1e-9
