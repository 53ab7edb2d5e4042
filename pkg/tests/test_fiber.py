import math

import numpy as np
import pytest

from cyclobloch.fiber import (
    Boundary,
    GridMismatch,
    OddK,
    WindowTooSmall,
    band_structure,
    band_width,
    build_fiber_rotated_basis,
    build_fiber_rotated_frame,
    commensurate_K,
    cross_validate_methods,
    edge_mass,
    refine_grid,
    solve_fiber,
    torus_hamiltonian,
)
from cyclobloch.model import derive_scales, rational_config


def residual(op, w, v):
    H = op.to_dense()
    return np.max(np.abs(H @ v - v * w[None, :]))


@pytest.mark.parametrize("rq", [(0, 1), (1, 1), (1, 2), (2, 3)])
def test_eigen_residuals(rq):
    cfg = rational_config(0.3, *rq)
    op = build_fiber_rotated_frame(0.37, cfg, (-30, 30))
    assert op.is_banded
    H = op.to_dense()
    assert np.allclose(H, H.conj().T)
    w, v = solve_fiber(op, want_vectors=True)
    assert residual(op, w, v) <= 1e-10
    assert np.all(np.diff(w) >= 0)
    assert np.allclose(v.conj().T @ v, np.eye(w.size), atol=1e-10)


def test_banded_matches_dense_solver():
    cfg = rational_config(0.5, 1, 2)
    op = build_fiber_rotated_frame(0.2, cfg, (-25, 25))
    w, _ = solve_fiber(op)
    assert np.allclose(w, np.linalg.eigvalsh(op.to_dense()), atol=1e-12)


def test_periodic_frame_is_hermitian_and_dense():
    cfg = rational_config(0.0, 1, 2)
    op = build_fiber_rotated_frame(0.1, cfg, (0, 39), boundary=Boundary.PERIODIC, twist=0.3)
    assert not op.is_banded
    H = op.to_dense()
    assert np.allclose(H, H.conj().T)


def test_window_too_small():
    with pytest.raises(WindowTooSmall):
        build_fiber_rotated_frame(0.0, rational_config(1.0, 2, 3), (0, 4))


def test_odd_K_rejected():
    with pytest.raises(OddK):
        build_fiber_rotated_basis(0.0, rational_config(1.0, 1, 2), 7)


def test_zero_field_01_is_harper():
    cfg = rational_config(0.0, 0, 1, alpha=0.25)
    op = build_fiber_rotated_frame(0.0, cfg, (0, 3), boundary=Boundary.PERIODIC)
    # alpha = 1/4 ring of 4 sites: diagonal -cos(pi p / 2), hopping -1/2
    H = op.to_dense()
    assert np.allclose(np.diag(H).real, -np.cos(np.pi * np.arange(4) / 2))


@pytest.mark.parametrize("rq, K", [((1, 1), 6), ((1, 2), 4), ((2, 3), 4)])
def test_rotated_basis_equals_torus(rq, K):
    """Dense torus Hamiltonian block-diagonalizes into the K rotated-basis fibers."""
    cfg = rational_config(0.3, *rq, alpha=0.1)
    ref = np.sort(np.linalg.eigvalsh(torus_hamiltonian(cfg, K)))
    fib = np.sort(np.concatenate([solve_fiber(build_fiber_rotated_basis(2 * math.pi * j / K, cfg, K))[0] for j in range(K)]))
    assert np.max(np.abs(ref - fib)) < 1e-10


@pytest.mark.parametrize("rq", [(1, 1), (1, 2), (2, 3)])
@pytest.mark.parametrize("F", [0.0, 1.0])
def test_cross_validation(rq, F):
    cfg = rational_config(F, *rq, alpha=1 / 3)
    assert cross_validate_methods(cfg, js=[0, 3]) <= 1e-8


def test_commensurate_K():
    cfg = rational_config(0.0, 2, 3, alpha=0.1)
    K = commensurate_K(cfg, 4)
    M = 2 * K * 3
    assert (0.1 * 3 * M / 13) % 1 == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(GridMismatch):
        commensurate_K(rational_config(0.0, 2, 3, alpha=1 / math.pi), 4, cap=40)


def test_band_structure_retains_bulk_only():
    cfg = rational_config(0.3, 0, 1)
    kap = np.linspace(0, 2 * math.pi, 8, endpoint=False)
    res = band_structure(cfg, kap, (-30, 30), want_vectors=True)
    for i in range(kap.size):
        em = edge_mass(res.eigenvectors[i], res.sites)
        assert np.all(em[res.retained[i]] < 1e-10)
        assert res.retained[i].sum() > 20


def test_spectrum_periodic_in_kappa_up_to_ladder_shift():
    cfg = rational_config(0.5, 1, 2)
    sc = derive_scales(cfg)
    zone = 2 * math.pi / sc.d_tilde
    ea = band_structure(cfg, [0.3], (-40, 40)).bulk(0)
    eb = band_structure(cfg, [0.3 + zone], (-40, 40)).bulk(0)
    dF = 0.5 * sc.d
    for e in ea[np.abs(ea) < 5]:
        x = (eb - e) / dF
        assert np.min(np.abs(x - np.round(x))) < 1e-8


def test_refine_grid_adds_points():
    cfg = rational_config(0.3, 0, 1)
    kap = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    res = band_structure(cfg, kap, (-20, 20))
    fine = refine_grid(res, gap_tol=0.05)
    assert fine.size >= kap.size


def test_band_width_decreases_with_field():
    cfg = rational_config(2.0, 1, 1)
    assert band_width(cfg.with_(F=6.0)) < band_width(cfg)
