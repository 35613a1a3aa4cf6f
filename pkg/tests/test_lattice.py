import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse.csgraph import minimum_spanning_tree

from abelian_higgs.lattice import (BlockPartition, Form, GeometryError, LatticeGeometry, Polymer, codifferential,
                                   connect_blocks, contract, exterior_derivative, minimal_tree_length,
                                   quadratic_forms, tree_length_from_distances)

geoms = st.one_of(st.tuples(st.just(2), st.integers(2, 6)), st.tuples(st.just(3), st.integers(2, 4)),
                  st.tuples(st.just(1), st.integers(2, 8)))


def test_cell_counts_2d():
    g = LatticeGeometry(2, 4)
    assert (g.n_sites, g.n_bonds, g.n_plaquettes) == (16, 24, 9)


def test_cell_counts_3d():
    g = LatticeGeometry(3, 3)
    assert g.n_bonds == 3 * 9 * 2
    assert g.n_plaquettes == 3 * 3 * 2 * 2
    assert g.n_cells(3) == 8


@pytest.mark.parametrize("d,L", [(0, 4), (5, 3), (2, 1), (2, 2.5)])
def test_bad_geometry(d, L):
    with pytest.raises(GeometryError):
        LatticeGeometry(d, L)


def test_only_dirichlet():
    with pytest.raises(GeometryError):
        LatticeGeometry(2, 4, "periodic")


@given(geoms, st.integers(0, 2 ** 32 - 1))
def test_dd_vanishes(dl, seed):
    d, L = dl
    g = LatticeGeometry(d, L)
    rng = np.random.default_rng(seed)
    for k in range(min(d, 3) - 1):
        assert (g.incidence(k + 1) @ g.incidence(k)).count_nonzero() == 0
        w = Form(g, k, rng.integers(-50, 50, g.n_cells(k)))
        assert np.all(exterior_derivative(exterior_derivative(w)).values == 0)


@given(geoms, st.integers(0, 2 ** 32 - 1))
def test_adjointness(dl, seed):
    d, L = dl
    g = LatticeGeometry(d, L)
    rng = np.random.default_rng(seed)
    for k in range(min(d, 3)):
        w = Form(g, k, rng.normal(size=g.n_cells(k)))
        e = Form(g, k + 1, rng.normal(size=g.n_cells(k + 1)))
        lhs = exterior_derivative(w).inner(e)
        rhs = w.inner(codifferential(e))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_incidence_matches_hand_plaquette():
    # single plaquette: bonds (0,0)->(1,0) axis 0, (0,0)->(0,1) axis 1, ...
    g = LatticeGeometry(2, 2)
    d1 = g.incidence(1).toarray()
    assert d1.shape == (1, 4)
    assert sorted(np.abs(d1[0])) == [1, 1, 1, 1]
    assert d1[0].sum() == 0


def test_laplacian_kinds():
    g = LatticeGeometry(2, 5)
    dl = g.laplacian("dirichlet").toarray()
    assert np.all(np.diag(dl) == 4)
    inner = g.laplacian("interior").toarray()
    assert np.allclose(inner.sum(axis=1), 0)
    d0 = g.incidence(0).toarray()
    assert np.allclose(inner, d0.T @ d0)
    with pytest.raises(GeometryError):
        g.laplacian("neumann")


def test_dirichlet_laplacian_against_stencil():
    # independent oracle: finite-difference stencil on the padded grid
    L = 5
    g = LatticeGeometry(2, L)
    rng = np.random.default_rng(3)
    f = rng.normal(size=g.n_sites)
    grid = np.zeros((L + 2, L + 2))
    grid[1:-1, 1:-1] = f.reshape(L, L)
    stencil = 4 * grid[1:-1, 1:-1] - grid[:-2, 1:-1] - grid[2:, 1:-1] - grid[1:-1, :-2] - grid[1:-1, 2:]
    assert np.allclose(g.laplacian("dirichlet") @ f, stencil.ravel())


def test_quadratic_forms():
    g = LatticeGeometry(2, 3)
    rho = np.arange(g.n_sites, dtype=float)
    A = np.ones(g.n_bonds)
    q = quadratic_forms(g, rho, A)
    assert q["gradient"] == pytest.approx(rho @ g.laplacian() @ rho)
    assert q["curl"] == pytest.approx(0.0)


def test_form_arithmetic_and_io(tmp_path):
    g = LatticeGeometry(2, 3)
    a = Form(g, 1, np.arange(g.n_bonds))
    b = Form.zeros(g, 1)
    assert (a + b).norm2() == pytest.approx(a.norm2())
    assert (2 * a - a).inner(a) == pytest.approx(a.norm2())
    a.to_csv(tmp_path / "a.csv")
    assert np.allclose(Form.from_csv(g, 1, tmp_path / "a.csv").values, a.values)
    a.save(tmp_path / "a.npy")
    assert np.allclose(Form.load(g, 1, tmp_path / "a.npy").values, a.values)
    with pytest.raises(GeometryError):
        Form(g, 1, np.zeros(3))
    with pytest.raises(GeometryError):
        a + Form.zeros(g, 0)
    with pytest.raises(GeometryError):
        codifferential(Form.zeros(g, 0))


def test_geometry_json_roundtrip():
    g = LatticeGeometry(3, 4)
    assert LatticeGeometry.from_json(g.to_json()) == g
    assert json.loads(g.to_json())["L"] == 4


def _brute_mst(D):
    # Prim's algorithm, written out for the oracle
    n = len(D)
    inside = {0}
    total = 0.0
    while len(inside) < n:
        best = min((D[i, j], j) for i in inside for j in range(n) if j not in inside)
        total += best[0]
        inside.add(best[1])
    return total


@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=1, max_size=7))
def test_tree_length_against_prim(points):
    pts = np.unique(np.array(points, float), axis=0)
    D = np.abs(pts[:, None, :] - pts[None, :, :]).sum(-1)
    assert minimal_tree_length(points) == pytest.approx(_brute_mst(D))


def test_tree_length_edge_cases():
    assert minimal_tree_length([[1, 2]]) == 0.0
    assert tree_length_from_distances(np.zeros((1, 1))) == 0.0
    with pytest.raises(ValueError):
        minimal_tree_length(np.zeros((0, 2)))


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=2, max_size=6))
def test_tree_length_bounds(points):
    pts = np.unique(np.array(points, float), axis=0)
    t = minimal_tree_length(pts)
    D = np.abs(pts[:, None, :] - pts[None, :, :]).sum(-1)
    # at least the diameter, at most a star from any point
    assert t >= D.max() - 1e-12
    assert t <= D.sum(axis=1).min() + 1e-12


def test_block_partition():
    g = LatticeGeometry(2, 8)
    p = BlockPartition(g, 2)
    assert p.grid == (4, 4)
    assert all(len(p.sites_in(b)) == 4 for b in range(p.n_blocks))
    assert p.block_distance(0, p.n_blocks - 1) == 3
    with pytest.raises(GeometryError):
        BlockPartition(g, 0)


def test_connect_blocks_diagonal_touch():
    m = np.zeros((4, 4), bool)
    m[0, 0] = m[1, 1] = m[3, 3] = True
    comps = connect_blocks(m)
    assert sorted(len(c) for c in comps) == [1, 2]


def test_polymer_components():
    grid = (4, 4)
    p = Polymer(frozenset({0, 5}), grid)
    q = Polymer(frozenset({15}), grid)
    assert p.connected and not (p | q).connected
    assert not p.overlaps(q)


@given(st.integers(0, 2 ** 16 - 1), st.integers(0, 3))
def test_contract_shrinks(bits, steps):
    m = np.array([(bits >> i) & 1 for i in range(16)], bool).reshape(4, 4)
    c = contract(m, steps)
    assert np.all(c <= m)
    # erosion by one step is the conjunction over the 3x3 neighbourhood (outside counts as set)
    if steps == 1:
        pad = np.pad(m, 1, constant_values=True)
        ref = np.ones_like(m)
        for dx, dy in itertools.product((-1, 0, 1), repeat=2):
            ref &= pad[1 + dx:5 + dx, 1 + dy:5 + dy]
        assert np.array_equal(c, ref)
