"""Effective classical dynamics: autonomous and driven Hamiltonians, integrators,
stroboscopic portraits and island diagnostics.

The autonomous system H = -Jy cos P - Jx cos Y + sF_y Y + sF_x P (sF = F/(2 pi alpha))
in the time tau = 2 pi alpha t is equivalent to the driven torus system
H(t) = -J'y cos(P - w_y t) - J'x cos(Y + w_x t) through Y1 = Y2 + w_x t,
P1 = P2 - w_y t.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .model import ModelConfig, derive_scales, require_alpha


class StepTooLarge(UserWarning):
    pass


class IrrationalDirection(ValueError):
    pass


@dataclass
class ClassicalState:
    Y: float
    P: float
    t: float = 0.0


def wrap(x):
    """Map angles to [-pi, pi)."""
    return (np.asarray(x) + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    Y: np.ndarray  # unwrapped, shape (n_t,) or (n_t, n_seeds)
    P: np.ndarray
    invariant: np.ndarray  # I(t) along the trajectory
    config: ModelConfig
    scheme: str = "rk4"

    @property
    def Y_wrapped(self) -> np.ndarray:
        return wrap(self.Y)

    @property
    def P_wrapped(self) -> np.ndarray:
        return wrap(self.P)

    @property
    def drift(self) -> np.ndarray:
        return np.max(np.abs(self.invariant - self.invariant[0]), axis=0)


def _primed(config: ModelConfig) -> tuple[float, float, float, float]:
    a2 = 2.0 * math.pi * config.alpha
    sc = derive_scales(config)
    return a2 * config.Jx, a2 * config.Jy, sc.omega_x, sc.omega_y


def h_autonomous(Y, P, config: ModelConfig):
    require_alpha(config)
    sc = derive_scales(config)
    return -config.Jy * np.cos(P) - config.Jx * np.cos(Y) + sc.scriptF_y * Y + sc.scriptF_x * P


def h_driven(t, Y, P, config: ModelConfig):
    Jxp, Jyp, wx, wy = _primed(config)
    return -Jyp * np.cos(P - wy * t) - Jxp * np.cos(Y + wx * t)


def rhs_driven(t, Y, P, config: ModelConfig):
    Jxp, Jyp, wx, wy = _primed(config)
    return Jyp * np.sin(P - wy * t), -Jxp * np.sin(Y + wx * t)


def integral_of_motion(t, Y, P, config: ModelConfig):
    """H(t) + w_y Y + w_x P, conserved by the driven flow (Y, P unwrapped)."""
    _, _, wx, wy = _primed(config)
    return h_driven(t, Y, P, config) + wy * Y + wx * P


def to_autonomous(t, Y, P, config: ModelConfig):
    """Driven-frame (Y, P) at time t -> autonomous-frame coordinates."""
    _, _, wx, wy = _primed(config)
    return Y + wx * t, P - wy * t


def appendix_hamiltonian(X, Pt, config: ModelConfig):
    """Rotated-frame form -Jx cos(-rPt/sqrtN + qX/sqrtN) - Jy cos(qPt/sqrtN + rX/sqrtN) + F X/(2 pi alpha)."""
    require_alpha(config)
    r, q = config.rq
    n = math.sqrt(r * r + q * q)
    return (
        -config.Jx * np.cos((-r * Pt + q * X) / n)
        - config.Jy * np.cos((q * Pt + r * X) / n)
        + config.F / (2.0 * math.pi * config.alpha) * X
    )


def appendix_map(X, Pt, config: ModelConfig):
    r, q = config.rq
    n = math.sqrt(r * r + q * q)
    return (-r * Pt + q * X) / n, (q * Pt + r * X) / n


@numba.njit(cache=True)
def _loop(Y, P, t0, h, n, every, scheme, Jxp, Jyp, wx, wy):
    n_out = n // every + (1 if n % every else 0) + 1
    tout = np.empty(n_out)
    Yout = np.empty((n_out, Y.size))
    Pout = np.empty((n_out, Y.size))
    tout[0] = t0
    Yout[0] = Y
    Pout[0] = P
    Y = Y.copy()
    P = P.copy()
    k = 1
    for i in range(1, n + 1):
        t = t0 + (i - 1) * h
        for s in range(Y.size):
            y, p = Y[s], P[s]
            if scheme == 0:
                k1y = Jyp * np.sin(p - wy * t)
                k1p = -Jxp * np.sin(y + wx * t)
                tm = t + 0.5 * h
                k2y = Jyp * np.sin(p + 0.5 * h * k1p - wy * tm)
                k2p = -Jxp * np.sin(y + 0.5 * h * k1y + wx * tm)
                k3y = Jyp * np.sin(p + 0.5 * h * k2p - wy * tm)
                k3p = -Jxp * np.sin(y + 0.5 * h * k2y + wx * tm)
                k4y = Jyp * np.sin(p + h * k3p - wy * (t + h))
                k4p = -Jxp * np.sin(y + h * k3y + wx * (t + h))
                Y[s] = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
                P[s] = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            else:
                # Strang splitting in extended phase space, time frozen at the midpoint
                tm = t + 0.5 * h
                y = y + 0.5 * h * Jyp * np.sin(p - wy * tm)
                p = p - h * Jxp * np.sin(y + wx * tm)
                y = y + 0.5 * h * Jyp * np.sin(p - wy * tm)
                Y[s], P[s] = y, p
        if i % every == 0 or i == n:
            tout[k] = t0 + i * h
            Yout[k] = Y
            Pout[k] = P
            k += 1
    return tout, Yout, Pout


_SCHEMES = {"rk4": 0, "leapfrog": 1}
ORDER = {"rk4": 4, "leapfrog": 2}


def integrate(Y0, P0, t_end: float, dt: float, config: ModelConfig, scheme: str = "rk4", t0: float = 0.0, sample_every: int = 1) -> TrajectoryRecord:
    """Fixed-step integration of the driven flow; Y0, P0 may be arrays of seeds.

    ``rk4`` is the classical fourth-order scheme, ``leapfrog`` a second-order
    symplectic splitting. Coordinates are kept unwrapped.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    Y = np.array(Y0, dtype=float)
    P = np.array(P0, dtype=float)
    shape = Y.shape
    n = int(round((t_end - t0) / dt))
    ts, Ys, Ps = _loop(Y.ravel(), P.ravel(), float(t0), float(dt), n, max(1, int(sample_every)), _SCHEMES[scheme], *_primed(config))
    Ys = Ys.reshape((-1,) + shape)
    Ps = Ps.reshape((-1,) + shape)
    tcol = ts.reshape((-1,) + (1,) * len(shape))
    inv = integral_of_motion(tcol, Ys, Ps, config)
    rec = TrajectoryRecord(ts, Ys, Ps, inv, config, scheme)
    span = max(ts[-1] - ts[0], 1e-300)
    if np.max(rec.drift) / span > 1e-6:
        warnings.warn("conserved-quantity drift exceeds 1e-6 per unit time", StepTooLarge, stacklevel=2)
    return rec


def driving_period(config: ModelConfig) -> float:
    """Common period 2 pi q / w_y of the driven system (rational directions)."""
    if not config.rational:
        raise IrrationalDirection("no common period for an irrational direction; use poincare_period")
    r, q = config.rq
    wy = derive_scales(config).omega_y
    if wy == 0:
        raise ValueError("zero field has no driving period")
    return 2.0 * math.pi * q / wy


def poincare_period(config: ModelConfig) -> float:
    """Sampling interval 2 pi / w_y, usable for any direction (not a true period if beta is irrational)."""
    return 2.0 * math.pi / derive_scales(config).omega_y


def stroboscopic_map(Y0, P0, n_periods: int, config: ModelConfig, steps_per_period: int = 1000, scheme: str = "rk4", period: float | None = None, wrapped: bool = True):
    """Flow sampled at multiples of the driving period; returns (Y, P) of shape (n_periods + 1, ...)."""
    T = driving_period(config) if period is None else period
    rec = integrate(Y0, P0, n_periods * T, T / steps_per_period, config, scheme, sample_every=steps_per_period)
    if wrapped:
        return rec.Y_wrapped, rec.P_wrapped
    return rec.Y, rec.P


def seed_grid(n: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """n seeds evenly spaced in Y on the P = 0 axis."""
    Y = -math.pi + 2.0 * math.pi * (np.arange(n) + 0.5) / n
    return Y, np.zeros(n)


def island_scan(config: ModelConfig, seeds=None, n_periods: int = 500, steps_per_period: int = 200) -> float:
    """Fraction of seeds whose orbit stays inside a 2 pi window in both
    autonomous-frame coordinates over ``n_periods`` driving periods."""
    Y0, P0 = seed_grid() if seeds is None else seeds
    T = driving_period(config)
    steps = max(steps_per_period, int(math.ceil(T / 0.05)))
    rec = integrate(Y0, P0, n_periods * T, T / steps, config, "rk4", sample_every=max(1, steps // 20))
    tcol = rec.t[:, None]
    Y1, P1 = to_autonomous(tcol, rec.Y, rec.P, config)
    bounded = (np.ptp(Y1, axis=0) < 2.0 * math.pi) & (np.ptp(P1, axis=0) < 2.0 * math.pi)
    return float(np.mean(bounded))


def island_condition(config: ModelConfig) -> bool:
    """Analytic existence condition of transporting islands: sF_x < Jy and sF_y < Jx."""
    sc = derive_scales(config)
    return abs(sc.scriptF_x) < config.Jy and abs(sc.scriptF_y) < config.Jx


def parallelogram_area(Y0: float, P0: float, eps: float, t_end: float, dt: float, config: ModelConfig, scheme: str = "leapfrog") -> float:
    """Area spanned by the images of two small displacement vectors (initially eps^2)."""
    Y = np.array([Y0, Y0 + eps, Y0])
    P = np.array([P0, P0, P0 + eps])
    rec = integrate(Y, P, t_end, dt, config, scheme)
    Yf, Pf = rec.Y[-1], rec.P[-1]
    a = (Yf[1] - Yf[0], Pf[1] - Pf[0])
    b = (Yf[2] - Yf[0], Pf[2] - Pf[0])
    return abs(a[0] * b[1] - a[1] * b[0])
