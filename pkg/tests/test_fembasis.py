import numpy as np
import pytest

from hdgpfc.fembasis import (
    TABLE3_ROWS,
    SpaceKind,
    build_dofmap,
    build_ref_element,
    count_dofs_table3,
    element_skeleton_dofs,
    gauss_legendre,
    table3,
)
from hdgpfc.mesh import BOTTOM, build_cartesian_mesh

PUBLISHED = {
    "convergence level 1": [11520, 55296, 41472, 6912],
    "convergence level 2": [46080, 221184, 165888, 27648],
    "convergence level 3": [184320, 884736, 663552, 110592],
    "convergence level 4": [737280, 3538944, 2654208, 442368],
    "convergence level 5": [2949120, 14155776, 10616832, 1769472],
    "monocrystal": [1223600, 5873280, 4404960, 734160],
    "benchmark32": [329218, 1572864, 1182720, 198147],
    "polycrystal": [808020, 3878496, 2908872, 484812],
}


def test_gauss_rules():
    r = gauss_legendre(1)
    assert r.points[0] == pytest.approx(0.5) and r.weights[0] == pytest.approx(1.0)
    r = gauss_legendre(2)
    np.testing.assert_allclose(r.points, [0.5 - 1 / (2 * np.sqrt(3)), 0.5 + 1 / (2 * np.sqrt(3))])
    r = gauss_legendre(3)
    assert abs(np.sum(r.weights * r.points**5) - 1 / 6) < 1e-14
    for n in (1, 5, 32):
        r = gauss_legendre(n)
        assert abs(r.weights.sum() - 1) < 1e-14
        assert np.all(np.diff(r.points) > 0) and 0 < r.points[0] and r.points[-1] < 1
    for bad in (0, 33):
        with pytest.raises(ValueError):
            gauss_legendre(bad)


def test_bilinear_nodal():
    ref = build_ref_element(1)
    np.testing.assert_allclose(ref.nodes, [[0, 0], [1, 0], [0, 1], [1, 1]])
    vals = ref.eval(ref.nodes[:, 0], ref.nodes[:, 1])
    np.testing.assert_allclose(vals, np.eye(4), atol=1e-15)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_ref_invariants(k):
    ref = build_ref_element(k)
    np.testing.assert_allclose(ref.eval(ref.nodes[:, 0], ref.nodes[:, 1]), np.eye(ref.nb), atol=1e-12)
    assert np.abs(ref.phi.sum(axis=1) - 1).max() < 1e-13
    assert np.abs(ref.dphi.sum(axis=2)).max() < 1e-12


def test_k2_partition_of_unity_and_trace():
    ref = build_ref_element(2, 5)
    assert ref.phi.shape[0] == 25
    assert np.abs(ref.phi.sum(axis=1) - 1).max() < 1e-13
    restricted = ref.eval(ref.quad.points, np.zeros(5))
    np.testing.assert_allclose(ref.face_phi[BOTTOM], restricted, atol=1e-15)


def test_ref_errors():
    with pytest.raises(ValueError):
        build_ref_element(0)
    with pytest.raises(ValueError):
        build_ref_element(2, 2)


def test_dofmap_counts():
    m = build_cartesian_mesh(0, 2 * np.pi, 0, 2 * np.pi, 48, 48, True, True)
    assert build_dofmap(m, 1, SpaceKind.ELEMENT_SCALAR).size == 9216
    assert build_dofmap(m, 1, SpaceKind.ELEMENT_VECTOR).size == 2 * 9216
    e = build_dofmap(m, 1, SpaceKind.SKELETON_EDG).size
    h = build_dofmap(m, 1, SpaceKind.SKELETON_HDG).size
    assert e == 2304 and h == 9216


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("per", [False, True])
def test_edg_continuity_and_hdg_privacy(k, per):
    m = build_cartesian_mesh(0, 1, 0, 1, 3, 4, per, per)
    edg = build_dofmap(m, k, SpaceKind.SKELETON_EDG)
    assert edg.size == m.n_vertices + (k - 1) * m.n_faces
    ed = element_skeleton_dofs(m, edg)
    # a vertex seen from any incident element maps to the vertex id
    for e in range(m.n_elements):
        for c in range(4):
            assert ed[e, c] == m.element_vertices[e, c]
    hdg = build_dofmap(m, k, SpaceKind.SKELETON_HDG)
    assert hdg.size == m.n_faces * (k + 1)
    counts = np.bincount(hdg.face_dofs.ravel())
    assert np.all(counts == 1)


def test_table3_exact():
    for (label, counts) in table3():
        assert counts == PUBLISHED[label], label
    assert len(TABLE3_ROWS) == 8


def test_table3_examples():
    assert count_dofs_table3("C0IPDG", 48, 48, 1, True) == 11520
    assert count_dofs_table3("EDG", 256, 256, 1, False) == 198147
    assert count_dofs_table3("HDG", 256, 256, 1, False) == 1182720
    assert count_dofs_table3("LDG", 256, 256, 1, False) == 1572864
    assert count_dofs_table3("EDG", 402, 402, 1, True) == 484812
    with pytest.raises(ValueError):
        count_dofs_table3("C0IPDG", 4, 4, 2)
    with pytest.raises(ValueError):
        count_dofs_table3("FEM", 4, 4)


def _ratio(n, periodic):
    m = build_cartesian_mesh(0, 1, 0, 1, n, n, periodic, periodic)
    return build_dofmap(m, 1, SpaceKind.SKELETON_HDG).size / build_dofmap(m, 1, SpaceKind.SKELETON_EDG).size


def test_hdg_edg_ratio_periodic_is_four():
    for n in (8, 32, 128):
        assert _ratio(n, True) == 4.0


def test_hdg_edg_ratio_open_mesh_closed_form():
    # 2n(n+1) faces with two traces each over (n+1)^2 vertices
    for n in (8, 32, 128):
        assert _ratio(n, False) == pytest.approx(4 * n / (n + 1))
