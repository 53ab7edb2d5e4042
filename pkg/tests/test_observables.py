import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cyclobloch.model import GOLDEN, derive_scales, irrational_config, rational_config
from cyclobloch.observables import (
    Ambiguous,
    NonpositiveData,
    ObservableSeries,
    Regime,
    WindowTooShort,
    ballistic_fit,
    bloch_fit,
    bloch_peak_ratio,
    classify_regime,
    default_window,
    ensemble_evolve,
    moments,
    project_eta,
    scaling_fit,
    transient_estimate,
)
from cyclobloch.propagator import WavePacket, gaussian_packet, make_strip


def packet_from(strip, weights):
    psi = np.sqrt(np.asarray(weights, float)).astype(complex)
    return WavePacket(strip, psi / np.linalg.norm(psi))


def test_single_site_moments_vanish():
    cfg = rational_config(1.0, 1, 2)
    strip = make_strip(cfg, 4, 4, slant=0.0)
    w = np.zeros(strip.size)
    w[strip.index.lookup(0, 0)] = 1.0
    mo = moments(packet_from(strip, w), cfg)
    assert (mo.x_mean, mo.y_mean, mo.sigma, mo.m2_eta, mo.m2_xi, mo.M2) == (0, 0, 0, 0, 0, 0)


def test_symmetric_pair():
    cfg = rational_config(1.0, 0, 1)
    strip = make_strip(cfg, 4, 4, slant=0.0)
    w = np.zeros(strip.size)
    w[strip.index.lookup([-1, 1], [0, 0])] = 0.5
    mo = moments(packet_from(strip, w), cfg)
    assert mo.x_mean == pytest.approx(0.0, abs=1e-15)
    assert mo.sigma == pytest.approx(1.0)
    # field along y: the transverse coordinate is x
    assert mo.m2_eta == pytest.approx(1.0)
    assert mo.m2_xi == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=30)
@given(
    arrays(float, 81, elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-3),
    st.sampled_from([(0, 1), (1, 1), (1, 2), (2, 3)]),
)
def test_rotated_moment_identity(w, rq):
    cfg = rational_config(1.0, *rq)
    strip = make_strip(cfg, 4, 4, slant=0.0)
    mo = moments(packet_from(strip, w), cfg)
    total = mo.var_eta + mo.var_xi + mo.eta_mean**2 + mo.xi_mean**2
    assert total == pytest.approx(mo.M2, abs=1e-10)
    assert mo.m2_eta + mo.m2_xi == pytest.approx(mo.M2, abs=1e-10)
    assert mo.sigma**2 == pytest.approx(mo.var_eta + mo.var_xi, abs=1e-10)


def test_project_eta():
    cfg = rational_config(1.0, 1, 2)
    strip = make_strip(cfg, 6, 6)
    pk = gaussian_packet(strip, 0.2, 0.3, incoherent=True)
    c, p = project_eta(pk, cfg)
    assert p.sum() == pytest.approx(1.0)
    assert np.allclose(np.diff(c), derive_scales(cfg).d)
    w = np.zeros(strip.size)
    w[strip.index.lookup(0, 0)] = 1
    c, p = project_eta(packet_from(strip, w), cfg)
    assert np.count_nonzero(p) == 1 and c[np.argmax(p)] == 0.0
    with pytest.raises(ValueError):
        project_eta(pk, cfg, bin_width=0.0)


def synthetic(t, s, x=None, y=None, sigma=None, leak=None):
    z = np.zeros_like(t)
    return ObservableSeries(
        times=t,
        x_mean=z if x is None else x,
        y_mean=z if y is None else y,
        sigma=s if sigma is None else sigma,
        m2_eta=s**2,
        leak=z if leak is None else leak,
    )


def test_ballistic_fit_exact_line():
    t = np.linspace(0, 50, 101)
    fit = ballistic_fit(synthetic(t, 0.7 * t))
    assert fit.coefficient == pytest.approx(0.7)
    assert fit.residual == pytest.approx(0.0, abs=1e-12)
    assert "0.7" in fit.summary("A")


def test_window_respects_leak_and_length():
    t = np.linspace(0, 50, 101)
    leak = np.where(t > 30, 1e-6, 0.0)
    s = synthetic(t, 1 + 0.7 * t, leak=leak)
    lo, hi = default_window(s)
    assert hi == pytest.approx(30.0)
    assert lo >= 5.0
    with pytest.raises(WindowTooShort):
        ballistic_fit(s, (10.0, 12.0))
    with pytest.raises(ValueError):
        synthetic(t, t, x=t[:5])


def test_transient_estimate():
    t = np.linspace(0, 20, 41)
    assert transient_estimate(synthetic(t, 1 + 3 * t)) == pytest.approx(0.5)
    assert transient_estimate(synthetic(t, np.ones_like(t))) == math.inf


def test_scaling_fit():
    F = np.array([2.0, 4.0, 6.0, 8.0, 10.0])
    fit = scaling_fit(np.column_stack([F, 3.0 / F]))
    assert fit.exponent == pytest.approx(-1.0)
    assert fit.coefficient == pytest.approx(3.0)
    with pytest.raises(NonpositiveData):
        scaling_fit(np.column_stack([F, np.array([1, 0.5, 0, 1, 2])]))
    with pytest.raises(WindowTooShort):
        scaling_fit([[1, 1], [2, 2], [3, 3]])


def test_bloch_fit_recovers_sinusoid():
    t = np.linspace(0, 60, 600, endpoint=False)
    x = 0.4 + 0.79 * np.cos(0.628 * t + 0.3)
    fit = bloch_fit(t, x)
    assert fit.amplitude == pytest.approx(0.79, rel=1e-8)
    assert fit.omega == pytest.approx(0.628, rel=1e-8)
    assert fit.offset == pytest.approx(0.4, abs=1e-8)
    assert fit.residual < 1e-8
    assert bloch_peak_ratio(t, x, 0.628) > 100
    assert bloch_peak_ratio(t, np.zeros_like(t), 0.628) == 0.0
    with pytest.raises(ValueError):
        bloch_fit(np.sort(np.random.default_rng(0).uniform(0, 60, 200)), x[:200])


class TestClassify:
    cfg = rational_config(0.1, 0, 1)
    t = np.linspace(0, 200, 401)

    def test_transporting(self):
        v = derive_scales(self.cfg).v_star
        s = synthetic(self.t, np.full_like(self.t, 2.0), x=v * self.t)
        assert classify_regime(s, self.cfg) is Regime.TRANSPORTING

    def test_ballistic(self):
        s = synthetic(self.t, 1 + 0.7 * self.t)
        assert classify_regime(s, rational_config(5.0, 0, 1)) is Regime.BALLISTIC

    def test_localized(self):
        s = synthetic(self.t, np.full_like(self.t, 2.0))
        assert classify_regime(s, rational_config(2.0, 0, 1)) is Regime.LOCALIZED

    def test_oscillating(self):
        cfg = irrational_config(2.0, GOLDEN)
        sc = derive_scales(cfg)
        x = 0.4 * np.cos(sc.omega_x * self.t)
        s = synthetic(self.t, 2.0 + 0.1 * np.sin(sc.omega_y * self.t), x=x)
        assert classify_regime(s, cfg) is Regime.OSCILLATING

    def test_ambiguous(self):
        s = synthetic(self.t, np.where(self.t < 150, 1.0, 5.0))
        with pytest.raises(Ambiguous) as err:
            classify_regime(s, rational_config(2.0, 0, 1))
        assert set(err.value.scores) == {r.value for r in Regime}

    def test_short_series_rejected(self):
        t = np.linspace(0, 50, 101)
        with pytest.raises(ValueError):
            classify_regime(synthetic(t, np.ones_like(t)), self.cfg)


def test_ensemble_run_is_symmetric_and_ballistic():
    cfg = rational_config(5.0, 0, 1)
    strip = make_strip(cfg, 40, 8)
    s = ensemble_evolve(strip, 0.1, 0.5, cfg, 20.0, n_realizations=6, seed=1, sample_times=np.linspace(0, 20, 41))
    assert abs(s.x_mean[-1]) < 0.1 * s.sqrt_m2_eta[-1]
    assert s.sqrt_m2_eta[-1] > 3 * s.sqrt_m2_eta[0]
    assert np.all(s.leak < 1e-10)
