import math

import numpy as np
import pytest

from cyclobloch.lattice import SiteIndexer, hamiltonian, patch_spectrum, peierls, rectangle
from cyclobloch.model import GOLDEN, Gauge, irrational_config, rational_config


def plaquette_flux(gauge, cfg, l, m):
    Ax, Ay = peierls(gauge, l, m, cfg)
    Ax_up, _ = peierls(gauge, l, m + 1, cfg)
    _, Ay_right = peierls(gauge, l + 1, m, cfg)
    return np.angle(np.exp(1j * (Ax + Ay_right - Ax_up - Ay)))


@pytest.mark.parametrize("gauge", list(Gauge))
def test_flux_per_plaquette(gauge):
    cfg = rational_config(0.2, 1, 2, alpha=0.13)
    l, m = np.meshgrid(np.arange(-5, 5), np.arange(-5, 5), indexing="ij")
    assert np.allclose(plaquette_flux(gauge, cfg, l, m), 2 * math.pi * 0.13, atol=1e-12)


def test_indexer_lookup_and_missing():
    idx = SiteIndexer([0, 1, 5], [0, -2, 3])
    assert list(idx.lookup([5, 0, 1, 2], [3, 0, -2, 2])) == [2, 0, 1, -1]
    with pytest.raises(ValueError):
        SiteIndexer([0, 0], [1, 1])


def test_hamiltonian_hermitian_with_stark_diagonal():
    cfg = irrational_config(0.7, GOLDEN)
    idx = rectangle(4, 3)
    H = hamiltonian(idx, cfg, Gauge.LANDAU_Y)
    assert abs(H - H.getH()).max() < 1e-15
    H0 = hamiltonian(idx, cfg, Gauge.LANDAU_Y, stark=False)
    assert np.allclose((H - H0).diagonal(), 0.7 / math.hypot(1, GOLDEN) * (GOLDEN * idx.l + idx.m))


def test_free_dispersion_on_open_chain():
    cfg = rational_config(0.0, 0, 1, alpha=0.0)
    w = patch_spectrum(cfg, Gauge.LANDAU_Y, 5, 0)
    k = np.pi * np.arange(1, 12) / 12
    assert np.allclose(np.sort(w), np.sort(-np.cos(k)), atol=1e-12)


@pytest.mark.parametrize("rq", [(1, 1), (1, 2), (2, 3)])
def test_patch_spectra_gauge_invariant(rq):
    cfg = rational_config(0.4, *rq, alpha=0.1)
    ref = patch_spectrum(cfg, Gauge.LANDAU_Y)
    for g in (Gauge.LANDAU_X, Gauge.ROTATED):
        assert np.max(np.abs(patch_spectrum(cfg, g) - ref)) < 1e-10
