import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from abelian_higgs import operators as ops
from abelian_higgs.lattice import BlockPartition, LatticeGeometry
from abelian_higgs.model import BENCHMARK


@pytest.fixture(scope="module")
def small():
    g = LatticeGeometry(2, 5)
    T = ops.build_T(g, mu2=4.0, mA2=4.0)
    Ch, quad = ops.sqrt_covariance(T)
    return g, T, Ch, quad


def test_build_T_blocks(small):
    g, T, _, _ = small
    n0 = g.n_sites
    M = T.matrix
    assert np.allclose(M, M.T)
    assert np.allclose(M[:n0, n0:], 0)
    assert np.allclose(np.diag(M)[:n0], 4 + 4)
    with pytest.raises(ValueError):
        ops.build_T(g, degrees=(0,))


def test_build_T_from_couplings():
    g = LatticeGeometry(2, 3)
    T = ops.build_T(g, BENCHMARK)
    assert T.matrix[0, 0] == pytest.approx(4 + BENCHMARK.mu ** 2)


def test_sqrt_matches_scipy(small):
    _, T, Ch, quad = small
    oracle = np.real(sla.sqrtm(np.linalg.inv(T.matrix)))
    assert np.max(np.abs(Ch.matrix - oracle)) < 1e-8
    assert quad.passed


@pytest.mark.parametrize("t", [0.25, 1.0, 4.0, 25.0])
def test_scalar_square_root(t):
    q = ops.QuadratureSpec.adaptive(1e-8)
    assert abs(q.scalar(t) - t ** -0.5) * math.sqrt(t) <= 1e-8


def test_quadrature_cap():
    with pytest.raises(ops.ConvergenceError):
        ops.QuadratureSpec.adaptive(1e-15, extra_points=(1e-6, 1e6), n_cap=32)


def test_kernel_decay_rate_1d():
    g = LatticeGeometry(1, 40)
    T = ops.build_T(g, mu2=4.0, degrees=(0,))
    C = ops.LatticeOperator(np.linalg.inv(T.matrix), T.space)
    prof = ops.kernel_decay(C, "l1")
    assert prof.rate == pytest.approx(math.acosh(3.0), rel=1e-2)


def test_localize_splits(small):
    _, T, Ch, _ = small
    loc = ops.localize(Ch, 2)
    assert np.allclose(loc.loc.matrix + loc.delta.matrix, Ch.matrix)
    far = T.space.distance("l1") >= 2
    assert np.all(loc.loc.matrix[far] == 0)
    assert np.all(loc.delta.matrix[~far] == 0)


def test_localize_full_range_is_exact(small):
    _, T, Ch, _ = small
    loc = ops.localize(Ch, 100)
    assert np.all(loc.delta.matrix == 0)
    phi = np.random.default_rng(0).normal(size=len(T.space))
    ve = ops.v_epsilon(phi, T, Ch, loc)
    assert abs(ve.direct) < 1e-8 * phi @ phi


@given(st.integers(1, 5), st.integers(0, 2 ** 31))
def test_v_epsilon_block_split(r_cut, seed):
    g = LatticeGeometry(2, 5)
    T = ops.build_T(g, mu2=4.0, mA2=4.0)
    Ch, _ = ops.sqrt_covariance(T, ops.QuadratureSpec.build(64))
    loc = ops.localize(Ch, r_cut)
    phi = np.random.default_rng(seed).normal(size=len(T.space))
    blocks = BlockPartition(g, 2).site_block[T.space.base]
    ve = ops.v_epsilon(phi, T, Ch, loc, blocks)
    assert sum(ve.per_block.values()) == pytest.approx(ve.total, abs=1e-10 * max(1, abs(ve.total)))
    # total equals the direct quadratic form up to the quadrature error in C^1/2
    assert ve.total == pytest.approx(ve.direct, abs=1e-6 * phi @ phi)


def test_inverse_sqrt_loc(small):
    _, T, Ch, _ = small
    loc = ops.localize(Ch, 3)
    res = ops.inverse_sqrt_loc(T, Ch, loc.delta)
    assert res.converged
    assert np.allclose(res.matrix @ loc.loc.matrix, np.eye(len(T.space)), atol=1e-9)
    b = ops.inverse_sqrt_bounds(T, Ch, loc)
    assert np.all(b["ratios"] <= b["bound"] + 1e-12)


def test_neumann_divergence_reported(small):
    _, T, Ch, _ = small
    with pytest.raises(ops.ConvergenceError):
        ops.inverse_sqrt_loc(T, Ch, ops.LatticeOperator(3 * Ch.matrix, Ch.space))


def _spd(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    return X @ X.T / n + 0.3 * np.eye(n)


@given(st.integers(0, 2 ** 31), st.integers(2, 30), st.sampled_from([0.5, 1.0, 2.0]))
def test_trace_log_eigen_oracle(seed, n, R0):
    K = _spd(seed, n)
    exact = np.sum(np.log(np.linalg.eigvalsh(K)))
    assert ops.trace_log(K, R0) == pytest.approx(exact, rel=1e-8, abs=1e-9)


def test_log_operator_matches_logm():
    K = _spd(1, 12)
    L = ops.log_operator(K, 1.0).matrix
    assert np.max(np.abs(L - np.real(sla.logm(K)))) < 1e-9
    with pytest.raises(ValueError):
        ops.log_operator(K, 0.0)


def test_w1_determinant_identity():
    g = LatticeGeometry(2, 6)
    T = ops.build_T(g, mu2=4.0, mA2=4.0)
    Ch, _ = ops.sqrt_covariance(T)
    loc = ops.localize(Ch, 3)
    blocks = BlockPartition(g, 2).site_block[T.space.base]
    w1 = ops.w1_series(T, Ch, loc, blocks)
    lhs = np.linalg.slogdet(loc.loc.matrix)[1]
    rhs = np.linalg.slogdet(Ch.matrix)[1] + w1.total
    assert lhs == pytest.approx(rhs, rel=1e-6)
    assert sum(w1.per_block.values()) == pytest.approx(w1.total)


def test_w2_determinant_identity():
    g = LatticeGeometry(2, 6)
    T = ops.build_T(g, mu2=9.0, mA2=9.0)
    inside = np.all((g.coords >= 1) & (g.coords < 5), axis=1)[T.space.base]
    blocks = BlockPartition(g, 2).site_block[T.space.base]
    w2 = ops.w2_split(T, inside, blocks)
    lhs = -0.5 * np.linalg.slogdet(T.matrix[np.ix_(inside, inside)])[1]
    rhs = -0.5 * np.linalg.slogdet(T.matrix)[1] + w2.total
    assert lhs == pytest.approx(rhs, rel=1e-6)


@given(st.integers(2, 12), st.floats(1.0, 16.0), st.floats(0.0, 2.0))
def test_random_walk_converges(L, mu2, r):
    g = LatticeGeometry(1, L)
    T = ops.build_T(g, mu2=mu2, degrees=(0,))
    res = ops.random_walk_inverse(T, r, 60)
    exact = np.linalg.inv(T.matrix + r * np.eye(L))
    assert np.max(np.abs(res.partial - exact)) <= 1e-6 * np.max(np.abs(exact)) + (2 / (2 + mu2 + r)) ** 60
    # spectral radius of the Jacobi step is below the hopping bound 2d / (2d + mu^2 + r)
    assert res.jacobi_ratio <= 2 / (2 + mu2 + r) + 1e-12


def test_random_walk_support_exact():
    g = LatticeGeometry(2, 6)
    T = ops.build_T(g, mu2=3.0, degrees=(0,))
    dist = np.abs(g.coords[:, None, :] - g.coords[None, :, :]).sum(-1)
    for n in (0, 2, 5):
        P = ops.random_walk_partial(T, 0.0, n)
        assert np.all(P[dist > n] == 0)
        assert np.all(P[dist <= n][(dist[dist <= n] % 2) == (n % 2)] != 0)


def test_identity_report_and_writers(tmp_path):
    r = ops.IdentityReport.compare("x", 1.0 + 1e-12, 1.0, 1e-10)
    assert r.passed
    assert not ops.IdentityReport.compare("y", 2.0, 1.0, 1e-3).passed
    ops.write_reports_csv([r], tmp_path / "r.csv")
    ops.write_reports_json([r], tmp_path / "r.json")
    assert "x" in (tmp_path / "r.csv").read_text()
