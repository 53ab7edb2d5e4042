"""Sparse tight-binding Hamiltonians on finite sets of square-lattice sites.

Bond convention: <l,m|H|l+1,m> = -(Jx/2) exp(i A_x(l,m)) and
<l,m|H|l,m+1> = -(Jy/2) exp(i A_y(l,m)); all gauges carry flux 2*pi*alpha.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .model import Gauge, ModelConfig, field_components


def peierls(gauge: Gauge, l, m, config: ModelConfig):
    """Bond phases (A_x, A_y) on the bonds leaving (l, m) in the +x and +y directions."""
    gauge = Gauge(gauge)
    a2 = 2.0 * math.pi * config.alpha
    l = np.asarray(l, dtype=float)
    m = np.asarray(m, dtype=float)
    zero = np.zeros(np.broadcast(l, m).shape)
    if gauge is Gauge.LANDAU_Y:
        return -a2 * m + zero, zero
    if gauge is Gauge.LANDAU_X:
        return zero, a2 * l + zero
    r, q = config.rq
    N = r * r + q * q
    p = r * l + q * m
    return -a2 * q / N * p, a2 * r / N * p


class SiteIndexer:
    """Dense index over an arbitrary finite set of (l, m) sites."""

    def __init__(self, l, m):
        self.l = np.asarray(l, dtype=np.int64)
        self.m = np.asarray(m, dtype=np.int64)
        self.size = self.l.size
        self._lmin, self._mmin = int(self.l.min()), int(self.m.min())
        self._w = int(self.m.max()) - self._mmin + 3
        keys = (self.l - self._lmin + 1) * self._w + (self.m - self._mmin + 1)
        order = np.argsort(keys)
        self._keys = keys[order]
        self._pos = order
        if np.any(np.diff(self._keys) == 0):
            raise ValueError("duplicate sites")

    def lookup(self, l, m):
        """Index of each (l, m), or -1 when the site is absent."""
        l = np.asarray(l, dtype=np.int64)
        m = np.asarray(m, dtype=np.int64)
        lo = l - self._lmin + 1
        mo = m - self._mmin + 1
        inside = (mo >= 0) & (mo < self._w) & (lo >= 0)
        keys = lo * self._w + mo
        j = np.searchsorted(self._keys, keys)
        j = np.clip(j, 0, self.size - 1)
        hit = inside & (self._keys[j] == keys)
        return np.where(hit, self._pos[j], -1)


def hopping_matrices(idx: SiteIndexer, config: ModelConfig, gauge: Gauge):
    """Forward hopping blocks (Tx, Ty) with (Tx psi)_{l,m} = -(Jx/2) e^{iA_x} psi_{l+1,m}.

    Bonds leaving the site set are dropped (hard-wall truncation). The full
    kinetic operator is Tx + Tx^H + Ty + Ty^H.
    """
    Ax, Ay = peierls(gauge, idx.l, idx.m, config)
    n = idx.size
    blocks = []
    for dl, dm, J, A in ((1, 0, config.Jx, Ax), (0, 1, config.Jy, Ay)):
        j = idx.lookup(idx.l + dl, idx.m + dm)
        ok = j >= 0
        rows = np.nonzero(ok)[0]
        vals = -0.5 * J * np.exp(1j * A[ok])
        blocks.append(sp.csr_matrix((vals, (rows, j[ok])), shape=(n, n)))
    return blocks[0], blocks[1]


def stark_potential(idx: SiteIndexer, config: ModelConfig):
    Fx, Fy = field_components(config)
    return Fx * idx.l + Fy * idx.m


def hamiltonian(idx: SiteIndexer, config: ModelConfig, gauge: Gauge, stark: bool = True):
    """Static Hamiltonian (kinetic + Stark) as a CSR matrix."""
    Tx, Ty = hopping_matrices(idx, config, gauge)
    H = Tx + Tx.getH() + Ty + Ty.getH()
    if stark:
        H = H + sp.diags(stark_potential(idx, config))
    return H.tocsr()


def rectangle(l_half: int, m_half: int) -> SiteIndexer:
    l, m = np.meshgrid(np.arange(-l_half, l_half + 1), np.arange(-m_half, m_half + 1), indexing="ij")
    return SiteIndexer(l.ravel(), m.ravel())


def patch_spectrum(config: ModelConfig, gauge: Gauge, l_half: int = 6, m_half: int = 6) -> np.ndarray:
    """Eigenvalues of the open rectangular patch in the given gauge (dense solve)."""
    H = hamiltonian(rectangle(l_half, m_half), config, gauge).toarray()
    return np.linalg.eigvalsh(H)
