"""Strong-field perturbation theory for the rational-direction fibers."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fiber import band_width, build_fiber_rotated_frame, solve_fiber
from .model import ModelConfig, derive_scales


class WrongDirection(ValueError):
    pass


class WeakFieldWarning(UserWarning):
    """Perturbative formula used outside its strong-field regime."""


def _check_strong(config: ModelConfig, scale: float = 1.0) -> None:
    if config.F * scale <= 5.0 * max(config.Jx, config.Jy):
        warnings.warn(f"F = {config.F} is not large compared to the hopping", WeakFieldWarning, stacklevel=3)


def _require(config: ModelConfig, rq: tuple[int, int]) -> None:
    if not config.rational or config.rq != rq:
        raise WrongDirection(f"formula holds for (r, q) = {rq}")


@dataclass(frozen=True)
class PerturbativeBand:
    nu: int
    order: int
    prefactor: float
    exponent: int
    E0: float


def first_order_01(nu: int, kappa: float, config: ModelConfig) -> tuple[float, dict[int, float]]:
    """Band energy and first-order fiber vector for a field along y.

    E = F*nu - Jx*cos(kappa - 2*pi*alpha*nu); the vector has unit weight at
    m = nu and +-Jy/(2F) at m = nu +- 1.
    """
    _require(config, (0, 1))
    _check_strong(config)
    E = config.F * nu - config.Jx * math.cos(kappa - 2.0 * math.pi * config.alpha * nu)
    c = config.Jy / (2.0 * config.F)
    return E, {nu - 1: -c, nu: 1.0, nu + 1: c}


def second_order_11(nu: int, kappa: float, config: ModelConfig) -> float:
    """Second-order shift of the nu-th Stark level for the diagonal direction (1, 1)."""
    _require(config, (1, 1))
    d = derive_scales(config).d
    _check_strong(config, d)
    a2 = 2.0 * math.pi * config.alpha
    pref = config.Jx * config.Jy / (2.0 * d * config.F)
    return pref * (math.cos(a2 * (nu - 1) - 2.0 * d * kappa) - math.cos(a2 * nu - 2.0 * d * kappa))


def leading_prefactor(r: int, q: int, F: float, Jx: float = 1.0, Jy: float = 1.0) -> float:
    """Lambda_{r,q}(F) = (-Jx)^q (-Jy)^r / (2^{q+r} F^{q+r-1})."""
    n = q + r
    return (-Jx) ** q * (-Jy) ** r / (2.0**n * F ** (n - 1))


def scaling_exponents(r: int, q: int) -> tuple[int, int]:
    """(band-width exponent, transient-time exponent) in F."""
    return 1 - q - r, q + r - 1


def perturbative_band(nu: int, config: ModelConfig) -> PerturbativeBand:
    r, q = config.rq
    d = derive_scales(config).d
    order = 1 if (r, q) == (0, 1) else r + q
    return PerturbativeBand(
        nu=nu,
        order=order,
        prefactor=leading_prefactor(r, q, config.F, config.Jx, config.Jy),
        exponent=q + r - 1,
        E0=d * config.F * nu,
    )


def exact_band(config: ModelConfig, nu: int = 0, kappa_grid=None, half: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Exact fiber eigenvalue that continues the Stark level nu over one zone."""
    sc = derive_scales(config)
    if kappa_grid is None:
        kappa_grid = np.linspace(0.0, 2.0 * math.pi / sc.d_tilde, 64, endpoint=False)
    E0 = sc.d * config.F * nu
    out = np.empty(len(kappa_grid))
    for i, k in enumerate(kappa_grid):
        w, _ = solve_fiber(build_fiber_rotated_frame(k, config, (nu - half, nu + half)))
        out[i] = w[np.argmin(np.abs(w - E0))]
    return np.asarray(kappa_grid), out


def measured_P(config: ModelConfig, nu: int = 0, kappa_grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Numerical shape function (E(kappa) - mean) / Lambda at the given field."""
    k, E = exact_band(config, nu, kappa_grid)
    r, q = config.rq
    lam = leading_prefactor(r, q, config.F, config.Jx, config.Jy)
    return k, (E - E.mean()) / lam


def width_exponent(r: int, q: int, F_values, alpha: float = 0.1, Jx: float = 1.0, Jy: float = 1.0) -> float:
    """Log-log slope of the exact band width against F."""
    from .model import rational_config

    F_values = np.asarray(F_values, dtype=float)
    W = [band_width(rational_config(F, r, q, alpha=alpha, Jx=Jx, Jy=Jy)) for F in F_values]
    return float(np.polyfit(np.log(F_values), np.log(W), 1)[0])


def perturb_table(config: ModelConfig, F_values) -> list[tuple[float, float, float]]:
    """Rows (F, exact band width, Lambda) for the configured direction."""
    r, q = config.rq
    rows = []
    for F in F_values:
        c = config.with_(F=float(F))
        rows.append((float(F), band_width(c), leading_prefactor(r, q, F, config.Jx, config.Jy)))
    return rows
