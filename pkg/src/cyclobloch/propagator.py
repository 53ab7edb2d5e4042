"""Wave-packet propagation on slanted strips.

Two independent schemes are provided. ``evolve_td_gauge`` integrates the
time-dependent-gauge equation (no scalar potential, hopping phases rotating at
the Bloch frequencies) with classical RK4. ``evolve_static_gauge`` applies
exp(-i H dt) for the static LandauY Hamiltonian by Chebyshev expansion.

The two gauges are related by psi_td = exp(i V t) exp(-i 2 pi alpha l m) psi_Y
with V = F_x l + F_y m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numba
import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.special import jv

from .lattice import SiteIndexer, hamiltonian, hopping_matrices, stark_potential
from .model import Gauge, ModelConfig, derive_scales, gauge_chi

TD_GAUGE = "time_dependent"


class NormDrift(RuntimeError):
    pass


class BoundsTooTight(RuntimeError):
    pass


class BoundaryLeak(RuntimeError):
    pass


@dataclass
class StripLattice:
    """Sites (l, m) with l in [-L_half, L_half] and m' = m + round(slant*l) in [-W_half, W_half]."""

    slant: float
    L_half: int
    W_half: int
    l: np.ndarray
    m: np.ndarray
    index: SiteIndexer = field(repr=False)

    @property
    def size(self) -> int:
        return self.l.size

    def shift(self, l):
        return np.round(self.slant * np.asarray(l)).astype(np.int64)

    def to_slanted(self, l, m):
        return np.asarray(l), np.asarray(m) + self.shift(l)

    def to_physical(self, lp, mp):
        return np.asarray(lp), np.asarray(mp) - self.shift(lp)

    @property
    def m_slanted(self) -> np.ndarray:
        return self.m + self.shift(self.l)

    def margin_mask(self, margin_fraction: float) -> np.ndarray:
        lcut = (1.0 - margin_fraction) * self.L_half
        wcut = (1.0 - margin_fraction) * self.W_half
        return (np.abs(self.l) > lcut) | (np.abs(self.m_slanted) > wcut)


def make_strip(config: ModelConfig, L_half: int, W_half: int, slant: float | None = None) -> StripLattice:
    """Strip following the zero-potential line F_x l + F_y m = 0, i.e. m = -beta l."""
    if L_half <= 0 or W_half <= 0:
        raise ValueError("strip extents must be positive")
    beta = config.beta if slant is None else slant
    lp, mp = np.meshgrid(np.arange(-L_half, L_half + 1), np.arange(-W_half, W_half + 1), indexing="ij")
    lp, mp = lp.ravel(), mp.ravel()
    m = mp - np.round(beta * lp).astype(np.int64)
    return StripLattice(beta, L_half, W_half, lp, m, SiteIndexer(lp, m))


def default_strip_extents(config: ModelConfig, t_end: float, width0: float = 5.0, W_half: int = 64) -> tuple[int, int]:
    """L_half >= 1.5 (A_max t_end + width0) with A_max = max(J/sqrt 2, v*); v* counts only below F_cr."""
    sc = derive_scales(config)
    v = abs(sc.v_star) if np.isfinite(sc.v_star) and config.F <= sc.F_cr else 0.0
    A = max(v, config.Jx / math.sqrt(2.0), config.Jy / math.sqrt(2.0))
    return int(math.ceil(1.5 * (A * t_end + width0))), W_half


@dataclass
class WavePacket:
    """Amplitudes on a strip; ``psi`` is (n_sites,) or (n_sites, n_realizations)."""

    strip: StripLattice
    psi: np.ndarray
    gauge: str = Gauge.LANDAU_Y.value
    t: float = 0.0

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.psi) ** 2, axis=0))

    def probability(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def to_csv(self, path, header: dict | None = None) -> None:
        if self.psi.ndim != 1:
            raise ValueError("snapshots are written per realization")
        with open(path, "w") as fh:
            fh.write(f"# time={self.t!r}\n# gauge={self.gauge}\n")
            for key, val in (header or {}).items():
                fh.write(f"# {key}={val}\n")
            fh.write("l,m,re,im\n")
            for l, m, a in zip(self.strip.l, self.strip.m, self.psi):
                fh.write(f"{l},{m},{a.real:.17g},{a.imag:.17g}\n")


def _gauge_exponent(gauge: str, l, m, t: float, config: ModelConfig):
    """Phase exponent of ``gauge`` relative to LandauY at time t."""
    if gauge == TD_GAUGE:
        Fx, Fy = derive_scales(config).F_x, derive_scales(config).F_y
        return gauge_chi(Gauge.LANDAU_X, l, m, config) + (Fx * l + Fy * m) * t
    return gauge_chi(Gauge(gauge), l, m, config)


def convert_gauge(packet: WavePacket, target: str, config: ModelConfig) -> WavePacket:
    """Re-express a packet in another gauge; |psi|^2 is unchanged."""
    target = target if target == TD_GAUGE else Gauge(target).value
    if target == packet.gauge:
        return replace(packet, psi=packet.psi.copy())
    l, m = packet.strip.l, packet.strip.m
    phase = np.exp(1j * (_gauge_exponent(target, l, m, packet.t, config) - _gauge_exponent(packet.gauge, l, m, packet.t, config)))
    psi = packet.psi * (phase if packet.psi.ndim == 1 else phase[:, None])
    return replace(packet, psi=psi, gauge=target)


def realization_rng(seed: int, realization: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, realization); phases are drawn in canonical site order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(realization)])))


def gaussian_packet(
    strip: StripLattice,
    C_x: float,
    C_y: float,
    incoherent: bool = False,
    seed: int = 0,
    realization: int = 0,
    center: tuple[float, float] = (0.0, 0.0),
    gauge: str = Gauge.LANDAU_Y.value,
) -> WavePacket:
    """psi ~ exp(-C_x (l-l0)^2 - C_y (m-m0)^2), optionally with independent random phases."""
    if C_x <= 0 or C_y <= 0:
        raise ValueError("Gaussian widths must be positive")
    l0, m0 = center
    logw = -C_x * (strip.l - l0) ** 2 - C_y * (strip.m - m0) ** 2
    psi = np.exp(logw - logw.max()).astype(complex)
    if incoherent:
        # canonical order: sites sorted by (l, m); independent of strip layout
        order = np.lexsort((strip.m, strip.l))
        theta = np.empty(strip.size)
        theta[order] = realization_rng(seed, realization).uniform(0.0, 2.0 * math.pi, strip.size)
        psi *= np.exp(1j * theta)
    psi /= np.linalg.norm(psi)
    return WavePacket(strip, psi, gauge)


def _neighbour_overlap(C: float, n: int = 200) -> float:
    """sum_l g(l) g(l+1) for the normalized real Gaussian g ~ exp(-C l^2)."""
    l = np.arange(-n, n + 1)
    g = np.exp(-C * l * l)
    g /= np.linalg.norm(g)
    return float(g[:-1] @ g[1:])


def bloch_widths(config: ModelConfig, target: float = 0.5) -> tuple[float, float]:
    """(C_x, C_y) of a real LandauY Gaussian whose kinetic <cos k_x> and <cos k_y> equal ``target``.

    Along x the kinetic momentum carries the vector potential -2 pi alpha m,
    so <cos k_x> = sum_l g g(l+1) * sum_m h(m)^2 cos(2 pi alpha m).
    """
    C_y = brentq(lambda c: _neighbour_overlap(c) - target, 1e-4, 50.0)
    m = np.arange(-200, 201)
    h2 = np.exp(-2.0 * C_y * m * m)
    h2 /= h2.sum()
    mag = float(h2 @ np.cos(2.0 * math.pi * config.alpha * m))
    if mag <= target:
        raise ValueError("no real Gaussian reaches the requested <cos k_x>")
    C_x = brentq(lambda c: _neighbour_overlap(c) * mag - target, 1e-4, 50.0)
    return C_x, C_y


def ensemble_packets(strip: StripLattice, C_x: float, C_y: float, seed: int, n: int, **kw) -> WavePacket:
    """n incoherent realizations stacked as columns."""
    cols = [gaussian_packet(strip, C_x, C_y, True, seed, j, **kw).psi for j in range(n)]
    return WavePacket(strip, np.stack(cols, axis=1), kw.get("gauge", Gauge.LANDAU_Y.value))


def boundary_leak(packet: WavePacket, margin_fraction: float = 0.1) -> float:
    """Probability in the outer margin band (worst realization for batches)."""
    if not 0.0 < margin_fraction < 0.5:
        raise ValueError("margin_fraction must lie in (0, 0.5)")
    mask = packet.strip.margin_mask(margin_fraction)
    p = packet.probability()[mask]
    return float(np.max(np.sum(p, axis=0)))


def default_td_dt(config: ModelConfig) -> float:
    sc = derive_scales(config)
    top = max(abs(sc.omega_x), abs(sc.omega_y), config.Jx + config.Jy, 1e-12)
    return min(0.01, 0.02 / top)


def _sample_grid(t0: float, t_end: float, sample_times) -> np.ndarray:
    if sample_times is None:
        return np.array([t_end])
    s = np.asarray(sample_times, dtype=float)
    return s[(s >= t0) & (s <= t_end + 1e-12)]


def iter_td_gauge(psi0: WavePacket, t_end: float, config: ModelConfig, dt: float | None = None, sample_times=None, check_norm: bool = True) -> Iterator[WavePacket]:
    """Yield snapshots (time-dependent gauge) at ``sample_times`` using fixed-step RK4.

    Each sample time is reached exactly by shortening the last step before it.
    """
    if psi0.gauge != TD_GAUGE:
        psi0 = convert_gauge(psi0, TD_GAUGE, config)
    dt = default_td_dt(config) if dt is None else dt
    sc = derive_scales(config)
    Tx, Ty = hopping_matrices(psi0.strip.index, config, Gauge.LANDAU_X)
    TxH, TyH = Tx.getH().tocsr(), Ty.getH().tocsr()
    wx, wy = sc.omega_x, sc.omega_y

    def H(t, v):
        ex, ey = np.exp(-1j * wx * t), np.exp(-1j * wy * t)
        return ex * (Tx @ v) + np.conj(ex) * (TxH @ v) + ey * (Ty @ v) + np.conj(ey) * (TyH @ v)

    def f(t, v):
        return -1j * H(t, v)

    psi = psi0.psi.astype(complex, copy=True)
    n0 = np.linalg.norm(psi, axis=0)
    t = psi0.t
    for ts in _sample_grid(t, t_end, sample_times):
        n = int(math.ceil((ts - t) / dt - 1e-9))
        if n > 0:
            h = (ts - t) / n
            for _ in range(n):
                k1 = f(t, psi)
                k2 = f(t + h / 2, psi + h / 2 * k1)
                k3 = f(t + h / 2, psi + h / 2 * k2)
                k4 = f(t + h, psi + h * k3)
                psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                t += h
        t = ts
        drift = float(np.max(np.abs(np.linalg.norm(psi, axis=0) - n0)))
        if check_norm and drift > 1e-9 * max(t - psi0.t, 1.0):
            raise NormDrift(f"norm drift {drift:.3e} at t={t}; reduce dt")
        yield WavePacket(psi0.strip, psi.copy(), TD_GAUGE, float(t))


def evolve_td_gauge(psi0: WavePacket, t_end: float, dt: float | None, config: ModelConfig, sample_times=None) -> list[WavePacket]:
    return list(iter_td_gauge(psi0, t_end, config, dt, sample_times))


def spectral_bounds(H: sp.spmatrix, config: ModelConfig) -> tuple[float, float]:
    """Gershgorin-style enclosure: diagonal range widened by 2(Jx+Jy), then inflated 5%."""
    diag = H.diagonal().real
    lo = diag.min() - 2.0 * (config.Jx + config.Jy)
    hi = diag.max() + 2.0 * (config.Jx + config.Jy)
    c, R = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return c, 1.05 * R + 1e-12


def chebyshev_coefficients(R: float, dt: float, tol: float) -> np.ndarray:
    """a_k = (2 - delta_k0) (-i)^k J_k(R dt), truncated once |J_k| < tol past k = R dt."""
    x = R * dt
    kmax = int(x + 10.0 * x ** (1.0 / 3.0) + 40)
    k = np.arange(kmax + 1)
    J = jv(k, x)
    tail = np.nonzero((np.abs(J) < tol) & (k > x))[0]
    if tail.size == 0:
        raise BoundsTooTight("Chebyshev series did not converge")
    k, J = k[: tail[0] + 1], J[: tail[0] + 1]
    a = 2.0 * (-1j) ** k * J
    a[0] /= 2.0
    return a


@numba.njit(cache=True)
def _cheb_series(indptr, indices, data, psi, a):
    """Fused three-term recurrence on a CSR matrix; psi has shape (n, k)."""
    n, k = psi.shape
    t0 = psi.copy()
    out = a[0] * t0
    if a.size == 1:
        return out
    t1 = np.zeros_like(psi)
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            h = data[jj]
            j = indices[jj]
            for c in range(k):
                t1[i, c] += h * t0[j, c]
        for c in range(k):
            out[i, c] += a[1] * t1[i, c]
    t2 = np.empty_like(psi)
    for s in range(2, a.size):
        ak = a[s]
        for i in range(n):
            for c in range(k):
                t2[i, c] = -t0[i, c]
            for jj in range(indptr[i], indptr[i + 1]):
                h = 2.0 * data[jj]
                j = indices[jj]
                for c in range(k):
                    t2[i, c] += h * t1[j, c]
            for c in range(k):
                out[i, c] += ak * t2[i, c]
        t0, t1, t2 = t1, t2, t0
    return out


def chebyshev_step(Hs: sp.spmatrix, psi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """sum_k a_k T_k(Hs) psi by the three-term recurrence; Hs has spectrum in [-1, 1]."""
    Hs = sp.csr_matrix(Hs)
    v = np.ascontiguousarray(psi, dtype=complex)
    v2 = v.reshape(v.shape[0], -1)
    out = _cheb_series(Hs.indptr, Hs.indices, Hs.data.astype(complex), v2, np.asarray(a, dtype=complex))
    return out.reshape(psi.shape)


def iter_static_gauge(psi0: WavePacket, t_end: float, config: ModelConfig, slice_dt: float = 1.0, tol: float = 1e-14, sample_times=None, check_norm: bool = True) -> Iterator[WavePacket]:
    """Yield snapshots (LandauY gauge) propagated by repeated Chebyshev expansions."""
    if psi0.gauge != Gauge.LANDAU_Y.value:
        psi0 = convert_gauge(psi0, Gauge.LANDAU_Y, config)
    H = hamiltonian(psi0.strip.index, config, Gauge.LANDAU_Y)
    c, R = spectral_bounds(H, config)
    Hs = ((H - c * sp.identity(H.shape[0], format="csr")) / R).tocsr()
    cache: dict[float, np.ndarray] = {}
    psi = psi0.psi.astype(complex, copy=True)
    t = psi0.t
    for ts in _sample_grid(t, t_end, sample_times):
        n = int(math.ceil((ts - t) / slice_dt - 1e-9))
        if n > 0:
            h = (ts - t) / n
            key = round(h, 12)
            if key not in cache:
                cache[key] = chebyshev_coefficients(R, h, tol)
            a = cache[key]
            phase = np.exp(-1j * c * h)
            for _ in range(n):
                before = np.linalg.norm(psi, axis=0)
                psi = phase * chebyshev_step(Hs, psi, a)
                drift = float(np.max(np.abs(np.linalg.norm(psi, axis=0) - before)))
                if check_norm and drift > 1e-12:
                    raise BoundsTooTight(f"norm changed by {drift:.3e} in one slice")
        t = ts
        yield WavePacket(psi0.strip, psi.copy(), Gauge.LANDAU_Y.value, float(t))


def evolve_static_gauge(psi0: WavePacket, t_end: float, slice_dt: float, config: ModelConfig, tol: float = 1e-14, sample_times=None) -> list[WavePacket]:
    return list(iter_static_gauge(psi0, t_end, config, slice_dt, tol, sample_times))


def iterate(psi0: WavePacket, t_end: float, config: ModelConfig, scheme: str = "static", sample_times=None, **kw) -> Iterator[WavePacket]:
    if scheme == "static":
        return iter_static_gauge(psi0, t_end, config, sample_times=sample_times, **kw)
    if scheme == "td":
        return iter_td_gauge(psi0, t_end, config, sample_times=sample_times, **kw)
    raise ValueError(f"unknown scheme {scheme!r}")


def free_kernel(l, m, t: float, Jx: float = 1.0, Jy: float = 1.0) -> np.ndarray:
    """|psi_{l,m}(t)|^2 from a single site at zero field and zero flux."""
    return jv(np.abs(l), Jx * t) ** 2 * jv(np.abs(m), Jy * t) ** 2
