"""Quasimomentum fibers of the rational-direction Hamiltonian and their spectra.

Two constructions are provided. ``build_fiber_rotated_frame`` writes the
operator on the extended-lattice coordinate p (offsets 0, +-r, +-q),
truncated to a window of Stark sites. ``build_fiber_rotated_basis`` projects
the Hamiltonian on a periodic K*q x K*r lattice onto plane-wave combinations
along transverse lines and yields r coupled rings of K*q sites.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .model import ModelConfig, alpha_fraction, derive_scales


class WindowTooSmall(ValueError):
    pass


class OddK(ValueError):
    pass


class GridMismatch(ValueError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


@dataclass
class FiberOperator:
    """Hermitian fiber operator.

    ``bands[j][i]`` is the upper element H[i, i+j]; ``wraps`` holds extra
    upper-triangle entries (i, j, value) that break the band structure
    (periodic closures). The lower triangle is implied by Hermiticity.
    """

    kappa: float
    diagonal: np.ndarray
    bands: dict[int, np.ndarray] = field(default_factory=dict)
    wraps: list[tuple[int, int, complex]] = field(default_factory=list)
    boundary: Boundary = Boundary.OPEN
    sites: np.ndarray | None = None  # Stark coordinate of each row
    dense: np.ndarray | None = None  # full matrix for operators built densely

    @property
    def is_banded(self) -> bool:
        return self.dense is None and not self.wraps

    @property
    def size(self) -> int:
        return self.diagonal.size

    @property
    def bandwidth(self) -> int:
        return max(self.bands, default=0)

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense.copy()
        n = self.size
        H = np.zeros((n, n), dtype=complex)
        for j, v in self.bands.items():
            idx = np.arange(n - j)
            H[idx, idx + j] += v
        for i, j, v in self.wraps:
            H[i, j] += v
        H = H + np.triu(H, 1).conj().T
        H[np.diag_indices(n)] = self.diagonal
        return H

    def to_banded(self) -> np.ndarray:
        """Upper banded storage as consumed by ``scipy.linalg.eig_banded``."""
        if not self.is_banded:
            raise ValueError("operator is not banded")
        u = self.bandwidth
        n = self.size
        ab = np.zeros((u + 1, n), dtype=complex)
        ab[u] = self.diagonal
        for j, v in self.bands.items():
            ab[u - j, j:] = v
        return ab


def _add_band(bands: dict[int, np.ndarray], j: int, values: np.ndarray) -> None:
    if j in bands:
        bands[j] = bands[j] + values
    else:
        bands[j] = values


def build_fiber_rotated_frame(
    kappa: float,
    config: ModelConfig,
    window: tuple[int, int],
    boundary: Boundary = Boundary.OPEN,
    twist: float = 0.0,
) -> FiberOperator:
    """Rotated-frame fiber on Stark sites p_min..p_max.

    With ``boundary=PERIODIC`` the ring closes with b_{p+M} = exp(i*twist) b_p,
    M the number of sites. For r = 0 the x-hopping collapses onto the diagonal
    as -Jx cos(theta*q*p - q*d*kappa).
    """
    r, q = config.rq
    sc = derive_scales(config)
    d, theta = sc.d, sc.theta
    p_min, p_max = window
    p = np.arange(p_min, p_max + 1)
    M = p.size
    if M < 2 * q + 1:
        raise WindowTooSmall(f"window of {M} sites; need at least {2 * q + 1}")
    diag = config.F * d * p.astype(float)
    bands: dict[int, np.ndarray] = {}
    wraps: list[tuple[int, int, complex]] = []

    # hopping H[p, p+j] evaluated at every row p of the ring
    hx = -0.5 * config.Jx * np.exp(-1j * theta * q * p + 1j * q * d * kappa)
    hy = -0.5 * config.Jy * np.exp(1j * theta * r * p - 1j * r * d * kappa)
    if r == 0:
        diag = diag + 2.0 * hx.real
        terms = [(q, hy)]
    else:
        terms = [(r, hx), (q, hy)]
    for j, h in terms:
        _add_band(bands, j, h[: M - j].copy())
        if boundary is Boundary.PERIODIC:
            phase = np.exp(1j * twist)
            for i in range(M - j, M):
                # H[i, i+j-M] is in the lower triangle; store its conjugate partner
                wraps.append((i + j - M, i, np.conj(h[i] * phase)))
    return FiberOperator(kappa=kappa, diagonal=diag, bands=bands, wraps=wraps, boundary=boundary, sites=p)


def rotated_basis_sites(r: int, q: int, K: int) -> tuple[np.ndarray, np.ndarray]:
    """(p, mu) labels of the rotated-basis rows, ordered mu-major."""
    mu, p = np.meshgrid(np.arange(r), np.arange(K * q), indexing="ij")
    return p.ravel(), mu.ravel()


def build_fiber_rotated_basis(k: float, config: ModelConfig, K: int, window: tuple[int, int] | None = None) -> FiberOperator:
    """Rotated-basis fiber at adimensional quasimomentum k.

    For r >= 1 the rows are (p, mu), p in 0..Kq-1, mu in 0..r-1, with Stark
    coordinate r*p + q*mu. For r = 0 the transverse lines are the lattice rows
    themselves; the fiber is then an open chain over ``window`` in m.
    """
    if K % 2:
        raise OddK(f"K must be even, got {K}")
    r, q = config.rq
    sc = derive_scales(config)
    theta, d = sc.theta, sc.d
    if r == 0:
        lo, hi = window if window is not None else (-K * q // 2, K * q // 2)
        mu = np.arange(lo, hi + 1)
        diag = config.F * mu - config.Jx * np.cos(theta * mu - k)
        bands = {1: np.full(mu.size - 1, -0.5 * config.Jy, dtype=complex)}
        return FiberOperator(kappa=k, diagonal=diag, bands=bands, sites=mu)

    L = K * q
    p, mu = rotated_basis_sites(r, q, K)
    n = p.size
    pext = r * p + q * mu
    row = mu * L + p  # index of (p, mu)
    H = np.zeros((n, n), dtype=complex)
    # horizontal: <p+1, mu| H |p, mu>
    tgt = mu * L + (p + 1) % L
    np.add.at(H, (tgt, row), -0.5 * config.Jx * np.exp(1j * theta * q * pext))
    # vertical: <p, mu+1| H |p, mu>, closing onto <p+q, 0| with e^{ik}
    inner = mu < r - 1
    np.add.at(H, (row[inner] + L, row[inner]), -0.5 * config.Jy * np.exp(-1j * theta * r * pext[inner]))
    last = ~inner
    tgt = (p[last] + q) % L
    np.add.at(H, (tgt, row[last]), -0.5 * config.Jy * np.exp(-1j * theta * r * pext[last]) * np.exp(1j * k))
    H = H + H.conj().T
    H[np.diag_indices(n)] += config.F * d * pext

    return FiberOperator(
        kappa=k,
        diagonal=H.diagonal().real.copy(),
        boundary=Boundary.PERIODIC,
        sites=pext,
        dense=H,
    )


def solve_fiber(op: FiberOperator, want_vectors: bool = False):
    """Eigenvalues (ascending) and optionally orthonormal eigenvectors (columns)."""
    if not np.all(np.isfinite(op.diagonal)):
        raise ConvergenceFailure("non-finite operator")
    try:
        if op.size == 1:
            w = np.array([float(op.diagonal[0])])
            return (w, np.ones((1, 1), dtype=complex)) if want_vectors else (w, None)
        if not op.is_banded:
            if want_vectors:
                return np.linalg.eigh(op.to_dense())
            return np.linalg.eigvalsh(op.to_dense()), None
        ab = op.to_banded()
        if op.bandwidth == 0:
            w = op.diagonal.astype(float)
            order = np.argsort(w, kind="stable")
            vecs = np.eye(op.size, dtype=complex)[:, order] if want_vectors else None
            return w[order], vecs
        if want_vectors:
            return sla.eig_banded(ab, lower=False)
        return sla.eig_banded(ab, lower=False, eigvals_only=True), None
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:  # pragma: no cover
        raise ConvergenceFailure(str(exc)) from exc


def edge_mass(vectors: np.ndarray, sites: np.ndarray, edge_fraction: float = 0.1) -> np.ndarray:
    """Probability each eigenvector carries on the outer ``edge_fraction`` of the Stark range."""
    lo, hi = sites.min(), sites.max()
    span = hi - lo
    outer = (sites < lo + edge_fraction * span) | (sites > hi - edge_fraction * span)
    return np.sum(np.abs(vectors[outer]) ** 2, axis=0)


@dataclass
class SpectrumResult:
    kappa_grid: np.ndarray
    energies: np.ndarray  # (n_kappa, size), ascending per row
    retained: np.ndarray  # bool mask, bulk and inside the energy window
    window: tuple[int, int]
    eigenvectors: np.ndarray | None = None  # (n_kappa, size, size), columns
    sites: np.ndarray | None = None

    def bulk(self, i: int) -> np.ndarray:
        return self.energies[i, self.retained[i]]

    def to_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w") as fh:
            for key, val in (header or {}).items():
                fh.write(f"# {key}={val}\n")
            fh.write(f"# window={self.window[0]},{self.window[1]}\n")
            fh.write("kappa,band_index,energy\n")
            for i, kap in enumerate(self.kappa_grid):
                for j in np.nonzero(self.retained[i])[0]:
                    fh.write(f"{kap:.12g},{j},{self.energies[i, j]:.15g}\n")


def band_structure(
    config: ModelConfig,
    kappa_grid,
    window: tuple[int, int],
    energy_window: tuple[float, float] | None = None,
    want_vectors: bool = False,
    edge_tol: float = 1e-10,
) -> SpectrumResult:
    """Rotated-frame spectrum over a kappa grid.

    An eigenvalue is retained when its eigenvector has less than ``edge_tol``
    weight on the outer 10% of the window and it lies in ``energy_window``.
    """
    kappa_grid = np.asarray(kappa_grid, dtype=float)
    ops = [build_fiber_rotated_frame(k, config, window) for k in kappa_grid]
    n = ops[0].size
    E = np.empty((kappa_grid.size, n))
    keep = np.empty((kappa_grid.size, n), dtype=bool)
    V = np.empty((kappa_grid.size, n, n), dtype=complex) if want_vectors else None
    for i, op in enumerate(ops):
        w, v = solve_fiber(op, want_vectors=True)
        E[i] = w
        ok = edge_mass(v, op.sites) < edge_tol
        if energy_window is not None:
            ok &= (w >= energy_window[0]) & (w <= energy_window[1])
        keep[i] = ok
        if V is not None:
            V[i] = v
    return SpectrumResult(kappa_grid, E, keep, window, V, ops[0].sites)


def refine_grid(spec: SpectrumResult, gap_tol: float = 1e-3, factor: int = 4) -> np.ndarray:
    """Insert extra kappa points between grid nodes flanking a near-degeneracy."""
    k = spec.kappa_grid
    new = [k]
    for i in range(k.size - 1):
        small = False
        for row in (i, i + 1):
            e = spec.bulk(row)
            if e.size > 1 and np.min(np.diff(e)) < gap_tol:
                small = True
        if small:
            new.append(np.linspace(k[i], k[i + 1], factor + 1)[1:-1])
    return np.unique(np.concatenate(new))


def _one_sided(a: np.ndarray, b: np.ndarray) -> float:
    """Largest distance from a point of ``a`` to the nearest point of ``b``."""
    if a.size == 0:
        return 0.0
    if b.size == 0:
        return math.inf
    j = np.clip(np.searchsorted(b, a), 1, b.size - 1) if b.size > 1 else np.zeros(a.size, int)
    return float(np.max(np.minimum(np.abs(a - b[j - 1 if b.size > 1 else j]), np.abs(a - b[j]))))


def _bulk_split(op: FiberOperator, edge_tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """(all eigenvalues, eigenvalues of states away from the window edges)."""
    w, v = solve_fiber(op, want_vectors=True)
    return w, w[edge_mass(v, op.sites) < edge_tol]


def commensurate_K(config: ModelConfig, K: int, cap: int = 4096) -> int:
    """Smallest even K' >= K for which the rotated-basis ring closes on a
    rotated-frame ring at zero field (phases theta*q*M and theta*r*M in 2*pi*Z)."""
    r, q = config.rq
    if r <= 1:
        return K
    frac = alpha_fraction(config.alpha)
    if frac is None:
        raise GridMismatch("zero-field ring comparison needs a rational alpha")
    N = r * r + q * q
    Kp = K + (K % 2)
    while Kp <= cap:
        M = r * Kp * q
        if all((frac * c * M / N).denominator == 1 for c in (q, r)):
            return Kp
        Kp += 2
    raise GridMismatch(f"no commensurate K <= {cap}")


def default_K(config: ModelConfig, min_sites: int = 240, max_sites: int = 2400) -> int:
    """Smallest even K whose rotated-basis ring is long compared with the
    Wannier-Stark localization length (about 50 J / (d F) Stark sites)."""
    r, q = config.rq
    sc = derive_scales(config)
    need = float(min_sites)
    if config.F > 0:
        need = max(need, 50.0 * max(config.Jx, config.Jy) / (config.F * sc.d))
    need = min(need, max_sites)
    per = q * max(r, 1)
    K = -(-int(math.ceil(need)) // per)
    return K + (K % 2)


def cross_validate_methods(config: ModelConfig, K: int | None = None, js=None, window_pad: int = 40) -> float:
    """Maximum discrepancy between rotated-frame and rotated-basis spectra.

    Fibers are paired by k = d_tilde * kappa with k = 2*pi*j/K. For F > 0 the
    bulk eigenvalues of each operator (states with negligible weight near the
    window edges or the ring's Stark discontinuity) must appear in the other
    spectrum. For F = 0 both operators are closed rings and the full spectra
    are compared; K is raised to the next commensurate value if needed.
    """
    r, q = config.rq
    sc = derive_scales(config)
    if K is None:
        K = default_K(config)
    if config.F == 0:
        if r == 0:
            raise GridMismatch("(0,1) at F = 0 has no finite Stark window to compare")
        K = commensurate_K(config, K)
    if js is None:
        js = range(0, K, max(1, K // 8))
    worst = 0.0
    for j in js:
        k = 2.0 * math.pi * j / K
        kappa = k / sc.d_tilde
        if r == 0:
            half = K * q // 2
            basis = build_fiber_rotated_basis(k, config, K, window=(-half, half))
            frame = build_fiber_rotated_frame(kappa, config, (-half - window_pad, half + window_pad))
        elif config.F == 0:
            M = r * K * q
            # b_{p+M} = exp(-i d kappa q^2 K) b_p reproduces the basis ring
            twist = -sc.d * kappa * q * q * K
            basis = build_fiber_rotated_basis(k, config, K)
            frame = build_fiber_rotated_frame(kappa, config, (0, M - 1), boundary=Boundary.PERIODIC, twist=twist)
            wa, _ = solve_fiber(basis)
            wb, _ = solve_fiber(frame)
            worst = max(worst, float(np.max(np.abs(np.sort(wa) - np.sort(wb)))))
            continue
        else:
            M = r * K * q
            basis = build_fiber_rotated_basis(k, config, K)
            frame = build_fiber_rotated_frame(kappa, config, (-window_pad, M + window_pad))
        wa, ba = _bulk_split(basis)
        wb, bb = _bulk_split(frame)
        # frame bulk states are compared only inside the Stark range of the basis ring
        span = config.F * sc.d * (basis.sites.max() - basis.sites.min())
        lo = config.F * sc.d * basis.sites.min() + 0.15 * span
        hi = config.F * sc.d * basis.sites.max() - 0.15 * span
        bb = bb[(bb > lo) & (bb < hi)]
        if ba.size == 0 or bb.size == 0:
            raise GridMismatch("no bulk eigenvalues to compare; increase K or F")
        worst = max(worst, _one_sided(ba, wb), _one_sided(bb, wa))
    return worst


def band_width(config: ModelConfig, nu: int = 0, n_kappa: int = 64, half: int = 40) -> float:
    """Width over one zone of the fiber band closest to the Stark level d*F*nu.

    Needs well separated Stark levels (strong field).
    """
    sc = derive_scales(config)
    dF = config.F * sc.d
    period = 2.0 * math.pi / sc.d_tilde
    kap = np.linspace(0.0, period, n_kappa, endpoint=False)
    vals = []
    for k in kap:
        w, _ = solve_fiber(build_fiber_rotated_frame(k, config, (nu - half, nu + half)))
        vals.append(w[np.argmin(np.abs(w - dF * nu))])
    vals = np.asarray(vals)
    return float(vals.max() - vals.min())


def torus_hamiltonian(config: ModelConfig, K: int) -> np.ndarray:
    """Dense Hamiltonian on the Kq x Kr torus matching the rotated-basis construction.

    Each torus site is labelled by enumerating the transverse lines
    (p + q n, mu - r n); bond phases and the Stark term use the Stark
    coordinate r*p + q*mu of the line containing the bond's source site.
    """
    r, q = config.rq
    if r == 0:
        raise ValueError("torus construction needs r >= 1")
    sc = derive_scales(config)
    theta, d = sc.theta, sc.d
    Lx, Ly = K * q, K * r
    label = {}
    for p in range(Lx):
        for mu in range(r):
            for n in range(K):
                site = ((p + q * n) % Lx, (mu - r * n) % Ly)
                if site in label:
                    raise AssertionError("transverse lines overlap")
                label[site] = r * p + q * mu
    if len(label) != Lx * Ly:
        raise AssertionError("transverse lines do not tile the torus")
    index = {s: i for i, s in enumerate(sorted(label))}
    H = np.zeros((len(index), len(index)), dtype=complex)
    for (l, m), i in index.items():
        pe = label[(l, m)]
        H[i, i] += config.F * d * pe
        jx = index[((l + 1) % Lx, m)]
        H[jx, i] += -0.5 * config.Jx * np.exp(1j * theta * q * pe)
        H[i, jx] += -0.5 * config.Jx * np.exp(-1j * theta * q * pe)
        jy = index[(l, (m + 1) % Ly)]
        H[jy, i] += -0.5 * config.Jy * np.exp(-1j * theta * r * pe)
        H[i, jy] += -0.5 * config.Jy * np.exp(1j * theta * r * pe)
    return H
