import numpy as np
import pytest

from modulilab import bundle as bnd
from modulilab import oracle
from modulilab.calculus import Beltrami
from modulilab._complexes import scalar_complex
from conftest import random_cochain


def test_materialize_matches_functional_path(surf_hyp_r1, su2_r1, rng):
    V, F, n = surf_hyp_r1.n_vertices, surf_hyp_r1.n_faces, 2
    D = oracle.materialize("dbar", su2_r1, surf_hyp_r1)
    worst = 0.0
    for _ in range(50):
        f = random_cochain(rng, V, n, "vertex")
        via_matrix = D.matrix @ f.values.reshape(-1)
        direct = bnd.twisted_dbar(f, su2_r1, surf_hyp_r1).values.reshape(-1)
        worst = max(worst, np.linalg.norm(via_matrix - direct) / np.linalg.norm(direct))
    assert worst <= 1e-12


def test_materialize_all_operators(surf_hyp_r1, su2_r1, rng):
    # master oracle-equivalence: every functional-path operation equals
    # its dense materialization on random inputs
    V, F, n = surf_hyp_r1.n_vertices, surf_hyp_r1.n_faces, 2
    nu = random_cochain(rng, F, n, (0, 1))
    mu = Beltrami(rng.standard_normal(F) + 1j * rng.standard_normal(F))
    cases = [
        ("d_hol", None, "vertex", V),
        ("dbar_star", None, (0, 1), F),
        ("d_star", None, (1, 0), F),
        ("laplacian", None, "vertex", V),
        ("delta0_inverse", None, "vertex", V),
        ("projection", None, (0, 1), F),
        ("ad", nu, "vertex", V),
        ("ad_star", nu, (0, 1), F),
        ("mu_contract", mu, (1, 0), F),
    ]
    from modulilab.oracle import _apply

    for name, aux, deg, sites in cases:
        op = oracle.materialize(name, su2_r1, surf_hyp_r1, aux=aux)
        for _ in range(5):
            x = random_cochain(rng, sites, n, deg)
            direct = _apply(name, su2_r1, surf_hyp_r1, x, aux).values.reshape(-1)
            via = op.matrix @ x.values.reshape(-1)
            assert np.linalg.norm(via - direct) <= 1e-12 * max(np.linalg.norm(direct), 1e-300)


def test_materialized_laplacian_hermitian(surf_hyp_r1, su2_r1):
    lap = oracle.materialize("laplacian", su2_r1, surf_hyp_r1)
    W = np.diag(lap.domain_weight)
    M = W @ lap.matrix
    assert np.linalg.norm(M - M.conj().T, 2) <= 1e-12 * np.linalg.norm(M, 2)


def test_rank1_trivial_equals_scalar_entrywise(surf_hyp_r1, fan2_r1):
    c = bnd.trivial_cocycle(fan2_r1, 1)
    D = oracle.materialize("dbar", c, surf_hyp_r1)
    Ds = scalar_complex(surf_hyp_r1).dbar.toarray()
    assert np.max(np.abs(D.matrix - Ds)) == 0.0


def test_restricted_inverse_dense(surf_hyp_r1, su2_r1, rng):
    lap = oracle.materialize("laplacian", su2_r1, surf_hyp_r1)
    inv = oracle.restricted_inverse_dense(lap)
    cx = bnd.operators(surf_hyp_r1, su2_r1)
    K = cx.kernel_basis("dbar")
    proj = np.eye(lap.matrix.shape[0]) - K @ (K.conj().T * cx.w0[None, :])
    assert np.linalg.norm(lap.matrix @ inv.matrix - proj, 2) <= 1e-10
    assert oracle.kernel_dimension_dense(lap) == bnd.is_irreducible(su2_r1)[1]
    # cross-path agreement with the iterative solver
    V, n = surf_hyp_r1.n_vertices, 2
    worst = 0.0
    for _ in range(20):
        h = random_cochain(rng, V, n, "vertex")
        x_dense = inv.matrix @ h.values.reshape(-1)
        x_it = bnd.delta0_inverse(h, su2_r1, surf_hyp_r1, method="cg").values.reshape(-1)
        worst = max(worst, np.linalg.norm(x_dense - x_it) / np.linalg.norm(x_dense))
    assert worst <= 1e-8


def test_dense_cap(surf_hyp_r1, su2_r1):
    with pytest.raises(oracle.DenseCapError):
        oracle.materialize("dbar", su2_r1, surf_hyp_r1, dense_cap=10)


def test_torus_mesh_valid():
    m = oracle.build_torus(4)
    assert m.genus == 1
    assert m.n_vertices - m.n_edges + m.n_faces == 0


def test_torus_crosscheck():
    rep = oracle.torus_spectral_crosscheck(rank=1, sizes=(4, 8, 16))
    for lvl in rep["levels"]:
        assert lvl["idempotency"] <= 1e-10
        assert lvl["constant_form_residual"] <= 1e-12
    assert rep["monotone_decrease"]


def test_torus_crosscheck_rank2():
    rep = oracle.torus_spectral_crosscheck(rank=2, sizes=(4, 8))
    assert rep["levels"][0]["constant_form_residual"] <= 1e-12
    assert rep["levels"][1]["smooth_projection_error"] < rep["levels"][0]["smooth_projection_error"]
