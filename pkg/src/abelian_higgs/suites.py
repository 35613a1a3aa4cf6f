"""Verification suites behind the command line: each returns IdentityReport rows plus tables."""
from __future__ import annotations

import math

import numpy as np

from . import operators as ops
from .expansion import coefficients as coef
from .expansion import polymers as poly
from .lattice import BlockPartition, Form, LatticeGeometry, codifferential, exterior_derivative
from .model import Couplings
from .operators import IdentityReport


def _tol(default, override):
    return default if override is None else override


# -- lattice identities ----------------------------------------------------------------
def dec_checks(geometry: LatticeGeometry, n_pairs: int = 100, seed: int = 0, tol=None):
    rng = np.random.default_rng(seed)
    g = geometry
    out = []
    top = min(g.d, 3)
    for k in range(top - 1):
        dd = g.incidence(k + 1) @ g.incidence(k)
        out.append(IdentityReport.compare(f"d d = 0 on {k}-forms ({g.d}D L={g.L})", abs(dd).max() if dd.nnz else 0.0,
                                          0.0, _tol(0.0, tol), scale=1.0))
        dt = g.incidence(k).T @ g.incidence(k + 1).T
        out.append(IdentityReport.compare(f"delta delta = 0 on {k + 2}-forms ({g.d}D L={g.L})",
                                          abs(dt).max() if dt.nnz else 0.0, 0.0, _tol(0.0, tol), scale=1.0))
    for k in range(top):
        worst = 0.0
        for _ in range(n_pairs):
            w = Form(g, k, rng.standard_normal(g.n_cells(k)))
            e = Form(g, k + 1, rng.standard_normal(g.n_cells(k + 1)))
            lhs, rhs = exterior_derivative(w).inner(e), w.inner(codifferential(e))
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
        out.append(IdentityReport.compare(f"<d w, e> = <w, delta e> on {k}-forms, {n_pairs} pairs ({g.d}D L={g.L})",
                                          worst, 0.0, _tol(1e-12, tol), scale=1.0))
    lap = g.laplacian("interior").toarray()
    d0 = g.incidence(0).toarray()
    out.append(IdentityReport.compare(f"-Lap = delta d on 0-forms ({g.d}D L={g.L})", np.abs(lap - d0.T @ d0).max(), 0.0,
                                      _tol(0.0, tol), scale=1.0))
    nb_expected = g.d * g.L ** (g.d - 1) * (g.L - 1)
    out.append(IdentityReport.compare(f"bond count d L^(d-1) (L-1) ({g.d}D L={g.L})", g.n_bonds, nb_expected,
                                      _tol(0.0, tol), scale=1.0))
    return out


def dec_suite(geometry: LatticeGeometry, seed: int = 0, tol=None):
    rows = dec_checks(geometry, seed=seed, tol=tol)
    for extra in (LatticeGeometry(2, 6), LatticeGeometry(3, 4)):
        if extra != geometry:
            rows += dec_checks(extra, seed=seed, tol=tol)
    return rows


# -- action algebra ------------------------------------------------------------------------
def action_audit(couplings: Couplings, n_configs: int = 50, L: int = 4, seed: int = 0, tol=None):
    """Shifted unitary-gauge action against the original one, and its polynomial coefficients in rho."""
    from . import model as M
    c = couplings
    g = LatticeGeometry(2, L)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        rho = rng.uniform(-0.9 * c.rho0, 2.0 * c.rho0, g.n_sites)
        A = rng.normal(0.0, 1.0, g.n_bonds)
        v = c.period * rng.integers(-2, 3, g.n_plaquettes)
        lhs = M.action_shifted(g, c, rho, A, v) + float(np.sum(np.log1p(rho / c.rho0)))
        rhs = M.villain_weight(g, c, A, v) + M.action_higgs(g, c, (c.rho0 + rho).astype(complex), A)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    rows = [IdentityReport.compare(f"shifted action + Jacobian log = Villain + Higgs action, {n_configs} configs",
                                   worst, 0.0, _tol(1e-9, tol), scale=1.0),
            IdentityReport.compare("m_A = rho0 e0", c.m_A, c.rho0 * c.e0, _tol(1e-14, tol))]
    # one site of a free 2x2 box: rho enters through two bonds, so the quadratic part is (mu^2 + 2) / 2
    g2 = LatticeGeometry(2, 2)
    zeroA, zerov = np.zeros(g2.n_bonds), np.zeros(g2.n_plaquettes)
    xs = np.linspace(-0.5, 0.5, 5) * min(1.0, c.rho0)

    def s_of(x):
        rho = np.zeros(g2.n_sites)
        rho[0] = x
        return (M.action_shifted(g2, c, rho, zeroA, zerov, boundary="free") + math.log1p(x / c.rho0)
                - M.action_shifted(g2, c, np.zeros(g2.n_sites), zeroA, zerov, boundary="free"))
    coefs = np.linalg.solve(np.vander(xs, 5, increasing=True), [s_of(x) for x in xs])
    rows += [IdentityReport.compare("rho^2 coefficient = mu^2/2 + kinetic", coefs[2], 0.5 * c.mu ** 2 + 1.0, _tol(1e-9, tol)),
             IdentityReport.compare("rho^3 coefficient = sqrt(2 lambda) mu", coefs[3], math.sqrt(2 * c.lam) * c.mu,
                                    _tol(1e-7, tol)),
             IdentityReport.compare("rho^4 coefficient = lambda", coefs[4], c.lam, _tol(1e-6, tol)),
             IdentityReport.compare("no constant or linear term", abs(coefs[0]) + abs(coefs[1]), 0.0, _tol(1e-9, tol),
                                    scale=1.0)]
    return rows


# -- operator identities ------------------------------------------------------------------
def kernel_group(tol=None):
    g = LatticeGeometry(1, 40)
    T = ops.build_T(g, mu2=4.0, degrees=(0,))
    C = ops.LatticeOperator(np.linalg.inv(T.matrix), T.space)
    prof = ops.kernel_decay(C, "l1")
    return [IdentityReport.compare("kernel decay rate, 1D L=40 mu^2=4 vs arccosh(3)", prof.rate, math.acosh(3.0),
                                   _tol(1e-2, tol))], prof


def sqrt_group(L: int = 8, tol=None):
    g = LatticeGeometry(2, L)
    T = ops.build_T(g, mu2=4.0, mA2=4.0)
    Ch, quad = ops.sqrt_covariance(T)
    C = np.linalg.inv(T.matrix)
    err = np.linalg.norm(Ch.matrix @ Ch.matrix - C, 2) / np.linalg.norm(C, 2)
    rows = [IdentityReport.compare(f"C^1/2 C^1/2 = C, 2D {L}x{L}", err, 0.0, _tol(1e-6, tol), scale=1.0),
            IdentityReport.compare("scalar square-root self-test", quad.max_error, 0.0, _tol(1e-8, tol), scale=1.0),
            IdentityReport.compare("T C = 1", np.abs(T.matrix @ C - np.eye(len(C))).max(), 0.0, _tol(1e-10, tol), scale=1.0)]
    return rows, T, Ch


def localization_group(L: int = 16, r_cuts=range(2, 9), tol=None):
    """Sup-norm size of delta C^1/2 against r_cut with a log-linear fit."""
    g = LatticeGeometry(2, L)
    T = ops.build_T(g, mu2=4.0, mA2=4.0)
    Ch, _ = ops.sqrt_covariance(T)
    rs = np.array(list(r_cuts))
    vals = np.array([ops.sup_norm(ops.localize(Ch, r).delta.matrix) for r in rs])
    slope, icpt = np.polyfit(rs, np.log(vals), 1)
    fit = np.exp(slope * rs + icpt)
    resid = float(np.max(np.abs(vals / fit - 1)))
    table = [{"r_cut": int(r), "delta_sup": float(v), "fit": float(f)} for r, v, f in zip(rs, vals, fit)]
    rows = [IdentityReport.compare(f"delta C^1/2 fit residual, 2D {L}x{L}", resid, 0.0, _tol(0.1, tol), scale=1.0),
            IdentityReport.compare("delta C^1/2 decay slope is negative", max(slope, 0.0), 0.0, 0.0, scale=1.0)]
    return rows, table, {"slope": float(slope), "prefactor": float(math.exp(icpt))}


def det_group(sizes=(10, 50, 200), seed: int = 0, tol=None):
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        X = rng.standard_normal((n, n))
        K = X @ X.T / n + 0.5 * np.eye(n)
        exact = float(np.sum(np.log(np.linalg.eigvalsh(K))))
        vals = {R0: ops.trace_log(K, R0) for R0 in (0.5, 1.0, 2.0)}
        for R0, v in vals.items():
            rows.append(IdentityReport.compare(f"Tr log K vs eigenvalues, {n}x{n}, R0={R0}", v, exact, _tol(1e-8, tol)))
        rows.append(IdentityReport.compare(f"Tr log K agrees across R0, {n}x{n}", max(vals.values()) - min(vals.values()),
                                           0.0, _tol(1e-8, tol), scale=abs(exact)))
    return rows


def w1_group(L: int = 8, r_cut: int = 4, tol=None):
    g = LatticeGeometry(2, L)
    T = ops.build_T(g, mu2=4.0, mA2=4.0)
    Ch, _ = ops.sqrt_covariance(T)
    loc = ops.localize(Ch, r_cut)
    w1 = ops.w1_series(T, Ch, loc, BlockPartition(g, 2).site_block[T.space.base])
    lhs = np.linalg.slogdet(loc.loc.matrix)[1]
    rhs = np.linalg.slogdet(Ch.matrix)[1] + w1.total
    return [IdentityReport.compare(f"log det C_loc^1/2 = log det C^1/2 + W1, 2D {L}x{L} r_cut={r_cut}", lhs, rhs,
                                   _tol(1e-6, tol))]


def w2_group(L: int = 10, inner: int = 6, tol=None):
    g = LatticeGeometry(2, L)
    T = ops.build_T(g, mu2=9.0, mA2=9.0)
    lo = (L - inner) // 2
    inside = np.all((g.coords >= lo) & (g.coords < lo + inner), axis=1)
    region = inside[T.space.base]
    blocks = BlockPartition(g, 2).site_block[T.space.base]
    w2 = ops.w2_split(T, region, blocks)
    # det C_region^1/2 = det C^1/2 e^{W2} in log form
    lhs = -0.5 * np.linalg.slogdet(T.matrix[np.ix_(region, region)])[1]
    rhs = -0.5 * np.linalg.slogdet(T.matrix)[1] + w2.total
    return [IdentityReport.compare(f"log det C_region^1/2 = log det C^1/2 + W2, 2D {L}x{L}", lhs, rhs, _tol(1e-6, tol))]


def random_walk_group(tol=None):
    g = LatticeGeometry(1, 20)
    T = ops.build_T(g, mu2=9.0, degrees=(0,))
    res = ops.random_walk_inverse(T, 0.0, 30)
    err10 = res.errors[10]
    bound = 2 * g.d / (9.0 + 0.0) * 1.1
    # walks of length <= n cannot reach sites further than n: those entries are exactly zero
    dist = np.abs(g.coords[:, None, 0] - g.coords[None, :, 0])
    leaks = max(float(np.abs(ops.random_walk_partial(T, 0.0, n)[dist > n]).max()) for n in (0, 3, 7, 12))
    return [IdentityReport.compare("random walk entries beyond the walk length vanish", leaks, 0.0, 0.0, scale=1.0),
            IdentityReport.compare("random walk n=10 partial sum, 1D L=20 mu^2=9", err10, 0.0, _tol(1e-5, tol), scale=1.0),
            IdentityReport.compare("random walk error ratio <= 1.1 * 2d/(mu^2+r)", max(res.ratio - bound, 0.0), 0.0, 0.0,
                                   scale=1.0)]


def operator_suite(tol=None, r_cuts=range(2, 9), loc_L: int = 16):
    groups = {}
    groups["kernel decay"], prof = kernel_group(tol)
    groups["square root"], _, _ = sqrt_group(tol=tol)
    groups["localization"], table, fit = localization_group(loc_L, r_cuts, tol)
    groups["determinant identity"] = det_group(tol=tol)
    groups["W1 factorization"] = w1_group(tol=tol)
    groups["W2 factorization"] = w2_group(tol=tol)
    groups["random walk"] = random_walk_group(tol)
    return groups, {"kernel_profile": prof.to_dict(), "decay_table": table, "decay_fit": fit}


# -- expansion identities ---------------------------------------------------------------------
def _small_setup(L: int, couplings: Couplings, r_cut: int = 2):
    g = LatticeGeometry(2, L)
    T = ops.build_T(g, couplings)
    Ch, _ = ops.sqrt_covariance(T)
    loc = ops.localize(Ch, r_cut)
    sp = T.space
    n = len(sp)
    phi_mask = sp.base % 2 == 0
    setup = coef.VertexSetup(sp, loc.loc.matrix, couplings, np.ones(n, bool), phi_mask, ~phi_mask, T.matrix)
    return setup


def vertex_checks(family: str, setup, l_max: int = 4, seed: int = 0, tol=None):
    rng = np.random.default_rng(seed)
    n = setup.n
    xi_c = np.concatenate([np.nonzero(setup.phi_mask & setup.is_site)[0][:2], np.nonzero(setup.phi_mask & setup.is_bond)[0][:2]])
    eta_c = np.concatenate([np.nonzero(setup.psi_mask & setup.is_site)[0][:1], np.nonzero(setup.psi_mask & setup.is_bond)[0][:2],
                            n + np.nonzero(setup.is_bond)[0][:1]])
    if family in ("v_eps", "source"):
        l_max = 2
    system = coef.extract_coefficients(family, setup, l_max, xi_c, eta_c)
    phi = np.zeros(n)
    phi[xi_c] = rng.normal(0, 0.1, len(xi_c))
    psi = np.zeros(2 * n)
    psi[eta_c] = rng.normal(0, 0.1, len(eta_c))
    direct = coef.vertex_function(family, setup, phi, psi) - coef.vertex_function(family, setup, 0 * phi, 0 * psi)
    series = system.evaluate(phi, psi)
    # truncated series: compare with tolerance set by the first omitted order
    scale = max(abs(direct), 1e-12)
    return system, IdentityReport.compare(f"{family}: coefficient series reproduces the vertex (order {l_max})", series,
                                          direct, _tol(1e-6 if family in ("cosine", "log", "nn_cos", "linear_cos") else 1e-10, tol),
                                          scale=scale)


def spot_checks(couplings: Couplings, L: int = 4, tol=None):
    """Coefficients with the identity kernel against constants read off the Taylor series by hand."""
    g = LatticeGeometry(2, L)
    T = ops.build_T(g, couplings)
    sp = T.space
    n = len(sp)
    every = np.ones(n, bool)
    ident = coef.VertexSetup(sp, np.eye(n), couplings, every, every, every, T.matrix)
    c = couplings
    site = int(np.nonzero(ident.is_site)[0][L + 1])
    b = int(ident.bond_cells[len(ident.bond_cells) // 2])
    t, h = int(ident.bond_tail[len(ident.bond_cells) // 2]), int(ident.bond_head[len(ident.bond_cells) // 2])
    other = int(np.nonzero(ident.is_site)[0][0])

    def val(fam, sector, xi, eta=(), setup=ident):
        return float(coef.coefficient_values(fam, setup, sector, [list(xi)], [list(eta)])[0])

    cases = [
        ("quartic a(x,x,x,x) = lambda", val("quartic", (4, 0), [site] * 4), c.lam),
        ("cubic a(x,x,x) = sqrt(2 lambda) mu", val("cubic", (3, 0), [site] * 3), math.sqrt(2 * c.lam) * c.mu),
        ("cosine a(b,b) = -e0^2/2", val("cosine", (2, 0), [b, b]), -c.e0 ** 2 / 2),
        ("cosine a(b,b,b,b) = e0^4/24", val("cosine", (4, 0), [b] * 4), c.e0 ** 4 / 24),
        ("log a(x) = 1/rho0", val("log", (1, 0), [site]), 1 / c.rho0),
        ("log a(x,x) = -1/(2 rho0^2)", val("log", (2, 0), [site, site]), -1 / (2 * c.rho0 ** 2)),
        ("nearest-neighbour cos a(t,h,b,b) = e0^2/2", val("nn_cos", (4, 0), [t, h, b, b]), c.e0 ** 2 / 2),
        ("linear cos a(t,b,b) = e0^2/2", val("linear_cos", (3, 0), [t, b, b]), c.e0 ** 2 / 2),
        ("V_eps a(x,x) = T(x,x) - 1", val("v_eps", (2, 0), [site, site]), T.matrix[site, site] - 1),
        ("V_eps a(t,h) = T(t,h)", val("v_eps", (2, 0), [t, h]), T.matrix[t, h]),
        ("source a(b; source b) = e0", val("source", (1, 1), [b], [n + b]), c.e0),
    ]
    Ch, _ = ops.sqrt_covariance(T)
    true = coef.VertexSetup(sp, Ch.matrix, couplings, every, every, every, T.matrix)
    cases.append(("source with true kernel a(b; source b') = e0 C^1/2(b', b)",
                  val("source", (1, 1), [b], [n + b - 1], true), c.e0 * Ch.matrix[b - 1, b]))
    cases.append(("quartic vanishes off the diagonal with the identity kernel", val("quartic", (4, 0), [site] * 3 + [other]), 0.0))
    return [IdentityReport.compare(name, lhs, rhs, _tol(1e-12, tol), scale=max(abs(rhs), 1e-300) if rhs else 1.0)
            for name, lhs, rhs in cases]


def coefficient_decay_group(couplings: Couplings, L: int = 10, l_max: int = 6, n_per_sector: int = 3000, seed: int = 0,
                            families=None, r_cut_v_eps: int = 3, min_r2: float = 0.8):
    """log|a| against minimal tree length for sampled tuples with the true kernel C^1/2.

    V_eps vanishes for the exact square root, so that family uses the localized kernel and is
    fitted from the peak of its envelope outward.
    """
    from .expansion.bounds import envelope_fit
    g = LatticeGeometry(2, L)
    T = ops.build_T(g, couplings)
    Ch, _ = ops.sqrt_covariance(T)
    sp = T.space
    n = len(sp)
    dist = sp.distance("l1")
    every = np.ones(n, bool)
    rng = np.random.default_rng(seed)
    loc = ops.localize(Ch, r_cut_v_eps)
    rows, fits = [], {}
    for fam in families or coef.FAMILIES:
        K = loc.loc.matrix if fam == "v_eps" else Ch.matrix
        setup = coef.VertexSetup(sp, K, couplings, every, every, every, T.matrix)
        lengths, values = coef.decay_scan(fam, setup, dist, rng, l_max, n_per_sector)
        fit = envelope_fit(lengths, values, from_peak=fam == "v_eps")
        fits[fam] = fit
        rows.append(IdentityReport.compare(f"{fam}: log|a| decay slope against tree length is negative",
                                           max(fit.slope, 0.0), 0.0, 0.0, scale=1.0))
        rows.append(IdentityReport.compare(f"{fam}: envelope is linear (R^2 >= {min_r2})", max(min_r2 - fit.r2, 0.0),
                                           0.0, 0.0, scale=1.0))
    return rows, fits


def mayer_checks(n_instances: int = 20, max_blocks: int = 8, seed: int = 0, tol=None):
    """exp(sum H) = sum over disjoint collections of prod K, and the cluster log identity."""
    rng = np.random.default_rng(seed)
    rows = []
    worst_m, worst_c, worst_v = 0.0, 0.0, 0.0
    for _ in range(n_instances):
        nb = int(rng.integers(3, max_blocks + 1))
        H = {}
        for _ in range(int(rng.integers(2, 7))):
            a = int(rng.integers(0, nb))
            b = int(min(nb - 1, a + rng.integers(0, 3)))
            H[frozenset(range(a, b + 1))] = float(rng.uniform(-0.05, 0.05))
        K = poly.mayer_polymerize(H)
        worst_m = max(worst_m, abs(poly.partition_function(K) - math.exp(sum(H.values()))))
        E = poly.cluster_log(K, None)
        worst_c = max(worst_c, abs(sum(E.values()) - math.log(poly.partition_function(K))))
        sets = [frozenset({0}), frozenset({2})]
        worst_v = max(worst_v, abs(poly.ursell(sets)))
    rows.append(IdentityReport.compare(f"Mayer polymerization identity, {n_instances} random instances", worst_m, 0.0,
                                       _tol(1e-8, tol), scale=1.0))
    rows.append(IdentityReport.compare("cluster logarithm identity", worst_c, 0.0, _tol(1e-8, tol), scale=1.0))
    rows.append(IdentityReport.compare("truncated coefficient vanishes on disjoint polymers", worst_v, 0.0, 0.0, scale=1.0))
    return rows


def expansion_suite(couplings: Couplings, families=None, l_max: int = 4, L: int = 4, seed: int = 0, tol=None,
                    max_region_cells: int = 2500):
    families = list(families or coef.FAMILIES)
    g = LatticeGeometry(2, L)
    n_cells = g.n_sites + g.n_bonds
    if n_cells > max_region_cells:
        raise poly.TooManyCovers(f"region of {n_cells} cells exceeds the tractability guard ({max_region_cells})")
    setup = _small_setup(L, couplings)
    rows, systems = [], {}
    for fam in families:
        system, rep = vertex_checks(fam, setup, l_max, seed, tol)
        rows.append(rep)
        systems[fam] = system
    rows += spot_checks(couplings, tol=tol)
    rows += mayer_checks(seed=seed, tol=tol)
    return rows, systems
