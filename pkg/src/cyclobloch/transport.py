"""Transporting states: diabatic following of straight spectral lines and
packet assembly from fiber eigenvectors.

For a rational direction (r, q) the lattice function
psi_{l,m} = exp(i d kappa s) b_P(kappa), s = q l - r m, P = r l + q m,
is an exact eigenfunction of the rotated-gauge Hamiltonian whenever b(kappa)
is an eigenvector of the rotated-frame fiber. Superposing such functions
along one diabatic line with a Gaussian weight in kappa gives a packet that
moves rigidly at the line's slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .fiber import FiberOperator, SpectrumResult, build_fiber_rotated_frame
from .model import Gauge, ModelConfig, derive_scales, from_extended_array, gauge_chi
from .propagator import StripLattice, WavePacket


class LineLost(RuntimeError):
    pass


class NonpositiveC(ValueError):
    pass


@dataclass
class DiabaticLine:
    kappa_samples: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray  # (n_kappa, M), continuity-fixed phases
    slope: float
    window: tuple[int, int]
    overlaps: np.ndarray = field(default_factory=lambda: np.empty(0))  # |<b_i|b_{i+1}>|

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.window[0], self.window[1] + 1)


@dataclass
class TransportingState:
    l: np.ndarray
    m: np.ndarray
    psi: np.ndarray
    C: float
    gauge: str
    config: ModelConfig
    line: DiabaticLine | None = None

    def center(self) -> tuple[float, float]:
        w = np.abs(self.psi) ** 2
        return float(np.sum(w * self.l)), float(np.sum(w * self.m))

    def cropped(self, l_half: int, m_half: int) -> "TransportingState":
        """Restriction to |l| <= l_half, |m| <= m_half, renormalized.

        Removes the low pedestal left by avoided crossings, which would
        otherwise spread through the whole propagation strip.
        """
        keep = (np.abs(self.l) <= l_half) & (np.abs(self.m) <= m_half)
        psi = self.psi[keep]
        return replace(self, l=self.l[keep], m=self.m[keep], psi=psi / np.linalg.norm(psi))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# C={self.C!r}\n# gauge={self.gauge}\n")
            fh.write(f"# config={self.config!r}\n")
            fh.write("l,m,re,im\n")
            for l, m, a in zip(self.l, self.m, self.psi):
                fh.write(f"{l},{m},{a.real:.17g},{a.imag:.17g}\n")


def fiber_kappa_derivative(op: FiberOperator, config: ModelConfig) -> FiberOperator:
    """dH/dkappa of a rotated-frame fiber (same band structure, no Stark term)."""
    r, q = config.rq
    d = derive_scales(config).d
    bands = {}
    diag = np.zeros(op.size)
    if r == 0:
        # diagonal -Jx cos(theta q p - q d kappa)
        sc = derive_scales(config)
        diag = -config.Jx * q * d * np.sin(sc.theta * q * op.sites - q * d * op.kappa)
        bands[q] = np.zeros_like(op.bands[q])
    else:
        hx = -0.5 * config.Jx * np.exp(-1j * derive_scales(config).theta * q * op.sites + 1j * q * d * op.kappa)
        hy = -0.5 * config.Jy * np.exp(1j * derive_scales(config).theta * r * op.sites - 1j * r * d * op.kappa)
        bands[r] = (1j * q * d * hx)[: op.size - r]
        bands[q] = bands.get(q, 0) + (-1j * r * d * hy)[: op.size - q]
    return FiberOperator(op.kappa, diag, bands, sites=op.sites)


def hellmann_feynman_slope(op: FiberOperator, vec: np.ndarray, config: ModelConfig) -> float:
    dH = fiber_kappa_derivative(op, config).to_dense()
    return float(np.real(np.vdot(vec, dH @ vec)))


def _eigs_near(op: FiberOperator, lo: float, hi: float):
    ab = op.to_banded()
    try:
        w, v = sla.eig_banded(ab, lower=False, select="v", select_range=(lo, hi))
    except sla.LinAlgError:  # pragma: no cover
        w, v = sla.eig_banded(ab, lower=False)
        keep = (w > lo) & (w <= hi)
        w, v = w[keep], v[:, keep]
    return w, v


def _line_window(config: ModelConfig, kappa_span: tuple[float, float], margin: int = 40) -> tuple[int, int]:
    """Stark window covering the drift of the line center p_c = kappa / (2 pi alpha d)."""
    sc = derive_scales(config)
    rate = 1.0 / abs(2.0 * math.pi * config.alpha * sc.d)
    lo = int(math.floor(min(kappa_span) * rate)) - margin
    hi = int(math.ceil(max(kappa_span) * rate)) + margin
    lo, hi = min(lo, -margin), max(hi, margin)
    return lo, hi


def auto_seed(config: ModelConfig, window: tuple[int, int] | None = None, kappa0: float = 0.0, center: float = 0.0, reach: int = 8) -> tuple[float, float, np.ndarray]:
    """Pick the eigenstate localized near ``center`` whose Hellmann-Feynman slope is closest to v*.

    Returns (energy, slope, vector) at kappa0.
    """
    sc = derive_scales(config)
    if window is None:
        window = (int(center) - 60, int(center) + 60)
    op = build_fiber_rotated_frame(kappa0, config, window)
    dF = config.F * sc.d
    E_mid = dF * center
    spread = config.Jx + config.Jy + dF * reach
    w, v = _eigs_near(op, E_mid - spread, E_mid + spread)
    p = op.sites
    pos = np.sum(np.abs(v) ** 2 * p[:, None], axis=0)
    cand = np.nonzero(np.abs(pos - center) <= reach)[0]
    if cand.size == 0:
        raise LineLost("no eigenstate near the requested center")
    dH = fiber_kappa_derivative(op, config).to_dense()
    slopes = np.real(np.einsum("ij,ik,kj->j", v[:, cand].conj(), dH, v[:, cand]))
    j = int(np.argmin(np.abs(slopes - sc.v_star)))
    return float(w[cand[j]]), float(slopes[j]), v[:, cand[j]]


def _best_seed(config: ModelConfig, window: tuple[int, int], kap: np.ndarray, n_try: int = 9):
    """Seed at the grid point near kappa = 0 whose best Hellmann-Feynman slope is closest to v*.

    A seed taken inside an avoided crossing is a mixture of two lines and
    its slope is off; trying a few nearby kappa avoids that.
    """
    sc = derive_scales(config)
    rate = 1.0 / (2.0 * math.pi * config.alpha * sc.d)
    near = np.argsort(np.abs(kap))[:n_try]
    best = None
    for i in near:
        k = float(kap[i])
        try:
            E, slope, b = auto_seed(config, window, k, center=k * rate)
        except LineLost:
            continue
        err = abs(slope - sc.v_star)
        if best is None or err < best[0]:
            best = (err, k, E, b)
    if best is None:
        raise LineLost("no seed found near kappa = 0")
    return best[1], best[2], best[3]


def _continue(op_at, kappas, E0, b0, config, lost: float = 0.5, project_below: float = 0.999, capture: float = 0.99):
    """Follow one diabatic line from (kappas[0], E0, b0) through the grid ``kappas``.

    When no single eigenvector carries the state (best overlap below
    ``project_below``), the previous vector is projected onto the fewest
    eigenvectors holding a fraction ``capture`` of it; the line passes through the avoided crossing
    without switching branches. The energy is then the Rayleigh quotient.
    """
    sc = derive_scales(config)
    v = abs(sc.v_star) if np.isfinite(sc.v_star) else 0.0
    Es, Bs, ovl = [E0], [b0], []
    E, b = E0, b0
    for k_prev, k_next in zip(kappas[:-1], kappas[1:]):
        width = 2.0 * v * abs(k_next - k_prev) + 0.5 * (config.Jx + config.Jy) + 1e-6
        op = op_at(k_next)
        w, vecs = _eigs_near(op, E - width, E + width)
        if w.size == 0:
            raise LineLost(f"no eigenvalues near the line at kappa={k_next:.4f}")
        o = vecs.conj().T @ b
        j = int(np.argmax(np.abs(o)))
        best = float(np.abs(o[j]))
        captured = float(np.linalg.norm(o))
        if best < lost and captured < 0.9:
            raise LineLost(f"line lost near kappa={k_next:.4f} (overlap {best:.3f})")
        # smallest set of eigenvectors carrying the state
        order = np.argsort(-np.abs(o) ** 2)
        k = int(np.searchsorted(np.cumsum(np.abs(o[order]) ** 2), capture * captured**2)) + 1
        if best >= project_below or k == 1:
            b = vecs[:, j] * np.exp(-1j * np.angle(o[j]))
            E = float(w[j])
        else:
            sel = order[:k]
            nb = vecs[:, sel] @ o[sel]
            b = nb / np.linalg.norm(nb)
            E = float(np.real(np.vdot(b, op.to_dense() @ b))) if op.size <= 4000 else float(np.sum(np.abs(o[sel]) ** 2 * w[sel]) / np.sum(np.abs(o[sel]) ** 2))
        ovl.append(float(abs(np.vdot(Bs[-1], b))))
        Es.append(E)
        Bs.append(b)
    return np.array(Es), np.array(Bs), np.array(ovl)


def follow_line_direct(
    config: ModelConfig,
    kappa_span: tuple[float, float],
    n_kappa: int,
    seed: tuple[float, float] | None = None,
    window: tuple[int, int] | None = None,
) -> DiabaticLine:
    """Follow a straight line over ``kappa_span`` by diagonalizing fibers on the fly.

    ``seed`` = (kappa0, energy); by default the line is seeded at kappa = 0 on
    the eigenstate near p = 0 whose slope is closest to v*.
    """
    if window is None:
        window = _line_window(config, kappa_span)
    kap = np.linspace(kappa_span[0], kappa_span[1], n_kappa)
    if seed is None:
        k0, E0, b0 = _best_seed(config, window, kap)
    else:
        k0, E_seed = seed
        w, v = _eigs_near(build_fiber_rotated_frame(k0, config, window), E_seed - 1e-3, E_seed + 1e-3)
        if w.size == 0:
            raise LineLost("no eigenvalue at the seed energy")
        j = int(np.argmin(np.abs(w - E_seed)))
        E0, b0 = float(w[j]), v[:, j]
    i0 = int(np.searchsorted(kap, k0))
    fwd = np.concatenate([[k0], kap[i0:][kap[i0:] > k0]])
    bwd = np.concatenate([[k0], kap[:i0][::-1][kap[:i0][::-1] < k0]])

    def op_at(k):
        return build_fiber_rotated_frame(k, config, window)

    Ef, Bf, of = _continue(op_at, fwd, E0, b0, config)
    Eb, Bb, ob = _continue(op_at, bwd, E0, b0, config)
    ks = np.concatenate([bwd[::-1], fwd[1:]])
    Es = np.concatenate([Eb[::-1], Ef[1:]])
    Bs = np.concatenate([Bb[::-1], Bf[1:]], axis=0)
    ovl = np.concatenate([ob[::-1], of])
    slope = float(np.polyfit(ks, Es, 1)[0])
    return DiabaticLine(ks, Es, Bs, slope, window, ovl)


@dataclass
class LineScan:
    slope: float
    offset: float
    coverage: float  # fraction of kappa samples with an eigenvalue on the line
    max_deviation: float


def scan_straight_lines(spectrum: SpectrumResult, slopes, tol: float = 0.02) -> LineScan:
    """Straight line E = offset + slope * kappa best supported by the spectrum.

    Every trial line passes through an eigenvalue at the first kappa sample;
    its score is the fraction of samples with an eigenvalue within ``tol``.
    The winning line is refined by least squares on its supporting points.
    """
    kap = spectrum.kappa_grid
    rows = [spectrum.energies[i, spectrum.retained[i]] for i in range(kap.size)]
    best = (-1.0, 0.0, 0.0)
    for s in np.atleast_1d(slopes):
        for e0 in rows[0]:
            hit = 0
            for i in range(kap.size):
                r = rows[i] - s * (kap[i] - kap[0]) - e0
                hit += bool(r.size) and np.min(np.abs(r)) < tol
            cov = hit / kap.size
            if cov > best[0]:
                best = (cov, float(s), float(e0))
    cov, s, e0 = best
    ks, Es = [], []
    for i in range(kap.size):
        r = rows[i] - s * (kap[i] - kap[0]) - e0
        if r.size and np.min(np.abs(r)) < tol:
            ks.append(kap[i])
            Es.append(rows[i][np.argmin(np.abs(r))])
    slope, off = np.polyfit(ks, Es, 1)
    dev = float(np.max(np.abs(np.array(Es) - (off + slope * np.array(ks)))))
    return LineScan(float(slope), float(off), float(cov), dev)


def follow_line(spectrum: SpectrumResult, seed: tuple[int, int], lost: float = 0.5) -> DiabaticLine:
    """Follow a line through a precomputed spectrum with eigenvectors.

    ``seed`` = (kappa index, band index). Each step picks the eigenvector of
    largest overlap with the previous one and fixes its phase so that the
    overlap is real and positive.
    """
    if spectrum.eigenvectors is None:
        raise ValueError("spectrum was computed without eigenvectors")
    i0, j0 = seed
    V = spectrum.eigenvectors
    E = spectrum.energies
    n = E.shape[0]
    idx = np.empty(n, dtype=int)
    vecs = np.empty((n, V.shape[1]), dtype=complex)
    ovl = np.ones(n - 1)
    idx[i0] = j0
    vecs[i0] = V[i0][:, j0]
    for direction in (1, -1):
        i = i0
        while 0 <= i + direction < n:
            nxt = i + direction
            o = V[nxt].conj().T @ vecs[i]
            j = int(np.argmax(np.abs(o)))
            if abs(o[j]) < lost:
                raise LineLost(f"line lost at kappa={spectrum.kappa_grid[nxt]:.4f}")
            idx[nxt] = j
            vecs[nxt] = V[nxt][:, j] * np.exp(-1j * np.angle(o[j]))
            ovl[min(i, nxt)] = abs(o[j])
            i = nxt
    energies = E[np.arange(n), idx]
    slope = float(np.polyfit(spectrum.kappa_grid, energies, 1)[0])
    return DiabaticLine(spectrum.kappa_grid.copy(), energies, vecs, slope, spectrum.window, ovl)


def gaussian_envelope(C: float, config: ModelConfig):
    """g(kappa) = exp(-C (d kappa / 2 pi)^2)."""
    if C <= 0:
        raise NonpositiveC(f"C must be positive, got {C}")
    d = derive_scales(config).d

    def g(kappa):
        return np.exp(-C * (d * np.asarray(kappa) / (2.0 * math.pi)) ** 2)

    return g


def envelope_span(C: float, config: ModelConfig, cutoff: float = 1e-8) -> float:
    """|kappa| beyond which g < cutoff."""
    d = derive_scales(config).d
    return 2.0 * math.pi / d * math.sqrt(math.log(1.0 / cutoff) / C)


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def _extended_field(line: DiabaticLine, coef: np.ndarray, s: np.ndarray, d: float) -> np.ndarray:
    """Phi_{s,p} = sum_k coef_k b_p(kappa_k) exp(i s d kappa_k), rows s, columns p."""
    phase = np.exp(1j * d * np.outer(s, line.kappa_samples))
    return (phase * coef[None, :]) @ line.vectors


def assemble(line: DiabaticLine, C: float, config: ModelConfig, s_half: int | None = None, cutoff: float = 1e-14, edge_tol: float = 1e-3) -> TransportingState:
    """Packet on the physical lattice (rotated gauge) from a diabatic line.

    Phi is evaluated on the extended lattice and restricted to the physical
    sublattice. The linear part of the eigenvector phase is removed so that
    the packet is centered at s = 0.
    """
    g = gaussian_envelope(C, config)
    sc = derive_scales(config)
    r, q = config.rq
    d = sc.d
    kap = line.kappa_samples
    coef = g(kap) * _trapezoid_weights(kap)
    p = line.sites
    # aliasing period in s from the kappa spacing
    period = 2.0 * math.pi / (d * np.max(np.diff(kap)))
    if s_half is None:
        s_half = int(min(period / 2 - 1, 600))
    s = np.arange(-s_half, s_half + 1)
    # center in s, then shift by a smooth kappa-gauge exp(-i s0 d kappa)
    for _ in range(2):
        Phi = _extended_field(line, coef, s, d)
        ws = np.sum(np.abs(Phi) ** 2, axis=1)
        s0 = float(np.sum(ws * s) / np.sum(ws))
        if abs(s0) < 0.5:
            break
        coef = coef * np.exp(-1j * d * round(s0) * kap)
    S, Pp = np.meshgrid(s, p, indexing="ij")
    l, m, mask = from_extended_array(S, Pp, r, q)
    amp = Phi[mask]
    l, m = l[mask], m[mask]
    keep = np.abs(amp) ** 2 > cutoff * np.max(np.abs(amp) ** 2)
    edge = (np.abs(S[mask]) >= s_half - 1) | (Pp[mask] <= p[0] + 1) | (Pp[mask] >= p[-1] - 1)
    if np.sum(np.abs(amp[edge]) ** 2) > edge_tol * np.sum(np.abs(amp) ** 2):
        raise LineLost("assembled packet reaches the edge of the extended window")
    l, m, amp = l[keep], m[keep], amp[keep]
    amp = amp / np.linalg.norm(amp)
    gauge = Gauge.ROTATED.value
    return TransportingState(l.astype(np.int64), m.astype(np.int64), amp, C, gauge, config, line)


def transporting_state(config: ModelConfig, C: float = 1.0, per_zone: int = 128, cutoff: float = 1e-8) -> TransportingState:
    """Seeded, followed and assembled transporting state centered near the origin."""
    span = envelope_span(C, config, cutoff)
    zone = 2.0 * math.pi / derive_scales(config).d_tilde
    n = int(math.ceil(2 * span / zone * per_zone)) + 1
    line = follow_line_direct(config, (-span, span), n)
    return assemble(line, C, config)


def to_gauge(state: TransportingState, target, config: ModelConfig, strip: StripLattice | None = None, truncate_tol: float = 1e-12) -> WavePacket:
    """Convert to ``target`` gauge and place on ``strip`` (a bounding rectangle by default).

    Amplitude falling outside the strip is dropped and the packet renormalized,
    provided the dropped probability is below ``truncate_tol``.
    """
    from .propagator import make_strip

    target = Gauge(target)
    chi = gauge_chi(target, state.l, state.m, config) - gauge_chi(Gauge(state.gauge), state.l, state.m, config)
    psi = state.psi * np.exp(1j * chi)
    if strip is None:
        L = int(np.max(np.abs(state.l))) + 1
        W = int(np.max(np.abs(state.m))) + 1
        strip = make_strip(config.with_(F=config.F), L, W, slant=0.0)
    j = strip.index.lookup(state.l, state.m)
    outside = j < 0
    lost = float(np.sum(np.abs(psi[outside]) ** 2))
    if lost > truncate_tol:
        raise ValueError(f"strip misses probability {lost:.2e} of the packet")
    out = np.zeros(strip.size, dtype=complex)
    out[j[~outside]] = psi[~outside]
    out /= np.linalg.norm(out)
    return WavePacket(strip, out, target.value)
