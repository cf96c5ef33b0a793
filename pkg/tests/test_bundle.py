import numpy as np
import pytest

from modulilab import bundle as bnd
from modulilab.bundle import (
    BundleCochain,
    CocycleError,
    RelationError,
    UnitaryCocycle,
    from_generators,
    is_irreducible,
    load_cocycle,
    refine_cocycle,
    save_cocycle,
    su2_preset,
    validate_cocycle,
)
from conftest import random_cochain


def test_trivial_rank1_holonomies(fan2):
    c = from_generators(fan2, 1, 0, [np.eye(1)] * 4)
    validate_cocycle(c)
    assert np.allclose(c.transport, 1.0)


def test_su2_preset_marked_holonomy(fan2):
    c = su2_preset(fan2)
    f = c.marked_face
    hol = c.transport[3 * f + 2] @ c.transport[3 * f + 1] @ c.transport[3 * f]
    np.testing.assert_allclose(hol, -np.eye(2), atol=1e-12)


def test_relation_violation_reports_residual(fan2):
    gens = [np.eye(2, dtype=complex)] * 4
    gens[0] = np.diag([np.exp(0.01j), np.exp(-0.01j)])  # breaks the -I relation
    with pytest.raises(RelationError) as e:
        from_generators(fan2, 2, 1, gens)
    assert e.value.residual > 1e-2


def test_commutant_dimensions(fan2_r2, su2_r2, triv1_r2, triv2_r2):
    assert is_irreducible(su2_r2) == (True, 1)
    assert is_irreducible(triv1_r2) == (True, 1)
    irred, dim = is_irreducible(triv2_r2)
    assert not irred and dim == 4


def test_rank1_any_cocycle_irreducible(fan2):
    phases = [np.array([[np.exp(1j * t)]]) for t in (0.3, 1.1, -0.4, 2.2)]
    c = from_generators(fan2, 1, 0, phases)
    assert is_irreducible(c) == (True, 1)


def test_twisted_dbar_kills_identity(surf_hyp, su2_r2):
    V = surf_hyp.n_vertices
    phi = BundleCochain(np.broadcast_to(np.eye(2), (V, 2, 2)).copy(), "vertex")
    out = bnd.twisted_dbar(phi, su2_r2, surf_hyp)
    assert np.linalg.norm(out.values) <= 1e-12


def test_rank1_trivial_reduces_to_scalar(surf_hyp, triv1_r2, rng):
    from modulilab._complexes import scalar_complex

    cx_b = bnd.operators(surf_hyp, triv1_r2)
    cx_s = scalar_complex(surf_hyp)
    assert np.max(np.abs((cx_b.dbar - cx_s.dbar).toarray())) == 0.0
    assert np.max(np.abs((cx_b.dbar_star - cx_s.dbar_star).toarray())) <= 1e-14


def test_rank1_gauge_cocycle_reduces_to_scalar(fan2_r1, surf_hyp_r1, rng):
    # End(E) of any line bundle is trivial: the conjugation kills phases
    phases = [np.array([[np.exp(1j * t)]]) for t in (0.9, -0.2, 0.5, 1.7)]
    c = from_generators(fan2_r1.refinement.parent, 1, 0, phases)
    c = refine_cocycle(c, fan2_r1)
    from modulilab._complexes import scalar_complex

    cx_b = bnd.operators(surf_hyp_r1, c)
    cx_s = scalar_complex(surf_hyp_r1)
    assert np.max(np.abs((cx_b.dbar - cx_s.dbar).toarray())) <= 1e-14


def test_adjointness(surf_hyp, su2_r2, rng):
    V, F = surf_hyp.n_vertices, surf_hyp.n_faces
    worst = 0.0
    for _ in range(50):
        f = random_cochain(rng, V, 2, "vertex")
        a = random_cochain(rng, F, 2, (0, 1))
        lhs = bnd.ip_bundle(bnd.twisted_dbar(f, su2_r2, surf_hyp), a, su2_r2, surf_hyp)
        rhs = bnd.ip_bundle(f, bnd.twisted_dbar_star(a, su2_r2, surf_hyp), su2_r2, surf_hyp)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    assert worst <= 1e-10


def test_delta0_inverse_roundtrip(surf_hyp, su2_r2, rng):
    cx = bnd.operators(surf_hyp, su2_r2)
    V = surf_hyp.n_vertices
    g = random_cochain(rng, V, 2, "vertex")
    gperp, _ = cx.project_off_kernel(g.values.reshape(-1))
    h = bnd.laplacian(BundleCochain(gperp.reshape(V, 2, 2), "vertex"), su2_r2, surf_hyp)
    back = bnd.delta0_inverse(h, su2_r2, surf_hyp)
    assert np.linalg.norm(back.values.reshape(-1) - gperp) <= 1e-8 * np.linalg.norm(gperp)


def test_delta0_inverse_kills_covariant_constant(surf_hyp, su2_r2):
    V = surf_hyp.n_vertices
    h = BundleCochain(np.broadcast_to(np.eye(2), (V, 2, 2)).copy(), "vertex")
    out = bnd.delta0_inverse(h, su2_r2, surf_hyp)
    assert np.linalg.norm(out.values) <= 1e-10


def test_delta0_rank1_trivial_matches_scalar(surf_hyp, triv1_r2, rng):
    from modulilab._complexes import scalar_complex

    V = surf_hyp.n_vertices
    h = rng.standard_normal(V) + 1j * rng.standard_normal(V)
    x_b = bnd.delta0_inverse(BundleCochain(h.reshape(V, 1, 1), "vertex"), triv1_r2, surf_hyp)
    x_s, _ = scalar_complex(surf_hyp).delta0_solve(h)
    assert np.linalg.norm(x_b.values.reshape(-1) - x_s) <= 1e-10 * np.linalg.norm(x_s)


def test_delta0_cg_path(surf_hyp, su2_r2, rng):
    V = surf_hyp.n_vertices
    h = random_cochain(rng, V, 2, "vertex")
    x_cg = bnd.delta0_inverse(h, su2_r2, surf_hyp, method="cg")
    x_dn = bnd.delta0_inverse(h, su2_r2, surf_hyp, method="dense")
    assert np.linalg.norm(x_cg.values - x_dn.values) <= 1e-8 * np.linalg.norm(x_dn.values)


def test_harmonic_projection_properties(surf_hyp, su2_r2, rng):
    V, F = surf_hyp.n_vertices, surf_hyp.n_faces
    f = random_cochain(rng, V, 2, "vertex")
    exact = bnd.twisted_dbar(f, su2_r2, surf_hyp)
    killed = bnd.harmonic_projection(exact, su2_r2, surf_hyp)
    assert np.linalg.norm(killed.values) <= 1e-8 * np.linalg.norm(exact.values)
    a = random_cochain(rng, F, 2, (0, 1))
    p1 = bnd.harmonic_projection(a, su2_r2, surf_hyp)
    p2 = bnd.harmonic_projection(p1, su2_r2, surf_hyp)
    assert np.linalg.norm(p2.values - p1.values) <= 1e-8 * np.linalg.norm(p1.values)
    g = random_cochain(rng, V, 2, "vertex")
    ortho = bnd.ip_bundle(p1, bnd.twisted_dbar(g, su2_r2, surf_hyp), su2_r2, surf_hyp)
    assert abs(ortho) <= 1e-8 * np.linalg.norm(p1.values) * np.linalg.norm(g.values)


def test_kernel_dim_equals_commutant(surf_hyp, su2_r2, triv1_r2, triv2_r2):
    for c in (su2_r2, triv1_r2, triv2_r2):
        _, cdim = is_irreducible(c)
        assert bnd.kernel_dimension(c, surf_hyp) == cdim


def test_ad_rank1_vanishes(surf_hyp, triv1_r2, rng):
    V, F = surf_hyp.n_vertices, surf_hyp.n_faces
    nu = random_cochain(rng, F, 1, (0, 1))
    f = random_cochain(rng, V, 1, "vertex")
    assert np.linalg.norm(bnd.ad_on_scalar(nu, f, triv1_r2, surf_hyp).values) == 0.0
    a = random_cochain(rng, F, 1, (0, 1))
    assert np.linalg.norm(bnd.ad_star(nu, a, triv1_r2, surf_hyp).values) <= 1e-14


def test_ad_kills_identity(surf_hyp, su2_r2, rng):
    V, F = surf_hyp.n_vertices, surf_hyp.n_faces
    nu = random_cochain(rng, F, 2, (0, 1))
    ident = BundleCochain(np.broadcast_to(np.eye(2), (V, 2, 2)).copy(), "vertex")
    assert np.linalg.norm(bnd.ad_on_scalar(nu, ident, su2_r2, surf_hyp).values) <= 1e-13


def test_ad_bilinearity(surf_hyp, su2_r2, rng):
    V, F = surf_hyp.n_vertices, surf_hyp.n_faces
    nu1 = random_cochain(rng, F, 2, (0, 1))
    nu2 = random_cochain(rng, F, 2, (0, 1))
    f = random_cochain(rng, V, 2, "vertex")
    lam = 0.3 - 1.1j
    combo = BundleCochain(nu1.values + lam * nu2.values, (0, 1))
    lhs = bnd.ad_on_scalar(combo, f, su2_r2, surf_hyp).values
    rhs = bnd.ad_on_scalar(nu1, f, su2_r2, surf_hyp).values + lam * bnd.ad_on_scalar(
        nu2, f, su2_r2, surf_hyp
    ).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_ad_star_calibration_adjointness(surf_hyp, su2_r2, rng):
    V, F = surf_hyp.n_vertices, surf_hyp.n_faces
    worst = 0.0
    for _ in range(20):
        nu = random_cochain(rng, F, 2, (0, 1))
        f = random_cochain(rng, V, 2, "vertex")
        a = random_cochain(rng, F, 2, (0, 1))
        lhs = bnd.ip_bundle(bnd.ad_on_scalar(nu, f, su2_r2, surf_hyp), a, su2_r2, surf_hyp)
        rhs = bnd.ip_bundle(f, bnd.ad_star(nu, a, su2_r2, surf_hyp), su2_r2, surf_hyp)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1.0))
    assert worst <= 1e-10


def test_ad_star_self_commutator_vanishes(surf_hyp, su2_r2):
    # real diagonal nu commutes with its conjugate transpose
    F = surf_hyp.n_faces
    diag = np.zeros((F, 2, 2), dtype=complex)
    diag[:, 0, 0] = 1.0
    diag[:, 1, 1] = -2.0
    nu = BundleCochain(diag, (0, 1))
    out = bnd.ad_star(nu, nu, su2_r2, surf_hyp)
    assert np.linalg.norm(out.values) <= 1e-13


def test_restricted_inverse_positivity(surf_hyp, su2_r2, rng):
    V = surf_hyp.n_vertices
    for _ in range(10):
        h = random_cochain(rng, V, 2, "vertex")
        x = bnd.delta0_inverse(h, su2_r2, surf_hyp)
        val = bnd.ip_bundle(x, h, su2_r2, surf_hyp)
        assert val.real >= -1e-10 * abs(val)


def test_twist_location_invisible_to_operators(fan2_r1, surf_hyp_r1, su2_r1):
    # multiplying an edge transport by a central phase moves the twist
    # between adjacent faces; End(E) conjugation is unchanged
    c = su2_r1
    U = c.transport.copy()
    f = c.marked_face
    h = 3 * f  # shared with face twin(h)//3
    t = int(c.mesh.twin[h])
    phase = np.conj(c.twist_phase)
    U[h] = phase * U[h]
    U[t] = U[h].conj().T
    moved = UnitaryCocycle(
        mesh=c.mesh, rank=2, degree=1, transport=U, marked_face=t // 3, generators=None
    )
    validate_cocycle(moved)
    cx1 = bnd.operators(surf_hyp_r1, c)
    cx2 = bnd.operators(surf_hyp_r1, moved)
    assert np.max(np.abs((cx1.dbar - cx2.dbar).toarray())) <= 1e-12


def test_refine_preserves_flatness_and_irreducibility(fan2, fan2_r1):
    c = refine_cocycle(su2_preset(fan2), fan2_r1)
    validate_cocycle(c)
    assert is_irreducible(c) == (True, 1)
    assert c.marked_face == 4 * su2_preset(fan2).marked_face + 3


def test_cocycle_roundtrip(tmp_path, fan2):
    c = su2_preset(fan2)
    p = tmp_path / "c.coc"
    save_cocycle(c, p)
    loaded = load_cocycle(fan2, p)
    np.testing.assert_allclose(loaded.transport, c.transport, atol=1e-12)
    assert (loaded.rank, loaded.degree) == (2, 1)


def test_kernel_hint_supports_iterative_path(surf_hyp_r1, su2_r1, rng):
    # above the dense cap the solver must still run, using the exact
    # covariant-constant kernel instead of a spectral factorization
    cx = bnd.operators(surf_hyp_r1, su2_r1)
    K = cx._cache["kernel_hint"]
    assert np.linalg.norm(cx.laplacian @ K) <= 1e-12
    assert np.linalg.norm(cx.laplacian_sym @ K) <= 1e-12
    old_cap = cx.dense_cap
    try:
        cx.dense_cap = 10
        assert cx.kernel_dim() == 1
        h = rng.standard_normal(K.shape[0]) + 1j * rng.standard_normal(K.shape[0])
        x_cg, st = cx.delta0_solve(h, method="auto")
        assert st["method"] == "cg"
    finally:
        cx.dense_cap = old_cap
    x_dense, _ = cx.delta0_solve(h, method="dense")
    assert np.linalg.norm(x_cg - x_dense) <= 1e-8 * np.linalg.norm(x_dense)


def test_cocycle_rejects_mismatched_surface(surf_hyp, fan2_r1):
    c = bnd.refine_cocycle(su2_preset(fan2_r1.refinement.parent), fan2_r1)
    with pytest.raises(CocycleError):
        bnd.operators(surf_hyp, c)
