"""Importance-sampled partition functions of the non-compact (gauge fixed) and compact Villain
formulations on a tiny lattice, for checking that they agree up to the (2 pi / e0)^(|sites|-1) factor.

Both integrals run over polar Higgs variables phi = rho exp(i theta).  The radial samples and the
underlying normal/uniform streams are shared between the two sides; proposals for the gauge field
and phases, the integrands and the vortex sum are side specific.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from ..lattice import LatticeGeometry
from ..model import ConfigError, Couplings, gauge_fix_constant

MAX_SITES = 4
TWO_PI = 2 * math.pi


@dataclass
class EquivalenceResult:
    log_Z_noncompact: float
    log_Z_compact: float
    ratio: float
    ratio_err: float
    obs_noncompact: float | None
    obs_noncompact_err: float | None
    obs_compact: float | None
    obs_compact_err: float | None
    n_samples: int
    ess_noncompact: float
    ess_compact: float

    @property
    def rel_err(self):
        return self.ratio_err / self.ratio

    @property
    def ratio_pull(self):
        return (self.ratio - 1.0) / self.ratio_err

    @property
    def obs_pull(self):
        if self.obs_noncompact is None:
            return 0.0
        return (self.obs_noncompact - self.obs_compact) / math.hypot(self.obs_noncompact_err, self.obs_compact_err)

    def to_dict(self):
        d = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in asdict(self).items()}
        d.update(rel_err=self.rel_err, ratio_pull=self.ratio_pull, obs_pull=float(self.obs_pull))
        return d


def _higgs_polar(s, rho, theta, A):
    """S_h for phi = rho exp(i theta), vectorized over rows."""
    t, h = s.ends[:, 0], s.ends[:, 1]
    rt, rh = rho[:, t], rho[:, h]
    ph = s.c.e0 * A + theta[:, t] - theta[:, h]
    kin = 0.5 * np.sum(rt ** 2 + rh ** 2 - 2 * rt * rh * np.cos(ph), axis=1)
    r2 = rho ** 2
    if s.boundary == "dirichlet":
        kin += r2 @ (0.5 * s.missing)
    pot = s.c.lam * r2 ** 2 - 0.25 * s.c.mu ** 2 * r2 + s.c.E
    return kin + pot.sum(axis=1)


def _gauss_logpdf(x, chol, logdet_prec):
    """log N(x; 0, prec^-1) with prec = L L^T; x (..., k), chol broadcastable (..., k, k)."""
    y = np.einsum("...i,...ij->...j", x, chol)
    k = x.shape[-1]
    return -0.5 * np.sum(y ** 2, axis=-1) - 0.5 * k * math.log(TWO_PI) + 0.5 * logdet_prec


def _chol(prec):
    L = np.linalg.cholesky(prec)
    return L, 2 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def _solve_upper(L, z):
    """x with L^T x = z for stacks of lower-triangular L."""
    return np.linalg.solve(np.swapaxes(L, -1, -2), z[..., None])[..., 0]


class _Setup:
    def __init__(self, geometry: LatticeGeometry, couplings: Couplings, vortex_range: int, boundary: str):
        if geometry.d != 2 or geometry.n_sites > MAX_SITES or geometry.n_plaquettes != 1:
            raise ConfigError("the equivalence check runs on the 2 x 2 lattice (one plaquette)")
        self.g = geometry
        self.c = couplings
        self.ends = geometry.bond_endpoints
        self.missing = geometry.missing_neighbours().astype(float)
        self.boundary = boundary
        self.D1 = geometry.incidence(1).toarray()
        self.D0 = geometry.incidence(0).toarray()
        self.nb, self.ns = geometry.n_bonds, geometry.n_sites
        G = np.zeros((self.nb, self.ns))
        G[np.arange(self.nb), self.ends[:, 0]] += 1
        G[np.arange(self.nb), self.ends[:, 1]] -= 1
        self.Gth = G[:, 1:]                        # relative phases (site 0 pinned) -> tail minus head
        self.P = couplings.period
        self.vort = np.arange(-vortex_range, vortex_range + 1) * self.P
        self.gauge_c = gauge_fix_constant(geometry, couplings.alpha)
        self.K = self.D1.T @ self.D1 + couplings.alpha * self.D0 @ self.D0.T
        self.floor = (4 / self.P) ** 2

    def weights(self, rho):
        return rho[:, self.ends[:, 0]] * rho[:, self.ends[:, 1]]

    def compact_prec(self, rho):
        w = self.weights(rho)
        return (self.D1.T @ self.D1)[None] + self.c.e0 ** 2 * w[:, :, None] * np.eye(self.nb)[None] + self.floor * np.eye(self.nb)

    def noncompact_prec(self, rho):
        nb, nt = self.nb, self.ns - 1
        B = np.concatenate([self.c.e0 * np.eye(nb), self.Gth], axis=1)
        w = self.weights(rho)
        prec = np.zeros((len(rho), nb + nt, nb + nt))
        prec[:, :nb, :nb] = self.K
        return prec + np.einsum("bi,nb,bj->nij", B, w, B)


# -- radial proposal --------------------------------------------------------------
class _RadialGrid:
    """Piecewise-constant proposal for rho on a tensor grid, from a Laplace estimate of its marginal."""

    def __init__(self, s: _Setup, n_cells: int = 24, rho_max: float | None = None):
        rho_max = rho_max or 2.0 * max(s.c.rho0, 2.0)
        edges = np.linspace(0.0, rho_max, n_cells + 1)
        self.edges = edges
        self.h = edges[1] - edges[0]
        centres = 0.5 * (edges[1:] + edges[:-1])
        grid = np.array(list(itertools.product(range(n_cells), repeat=s.ns)))
        rho = centres[grid]
        zero = np.zeros((len(rho), s.ns))
        _, ld = _chol(s.compact_prec(rho))
        ell = np.log(rho).sum(axis=1) - _higgs_polar(s, rho, zero, np.zeros((len(rho), s.nb))) - 0.5 * ld
        p = np.exp(ell - ell.max())
        p = 0.9 * p / p.sum() + 0.1 / len(p)            # defensive floor on every cell
        self.grid = grid
        self.p = p
        self.cum = np.cumsum(p)
        self.ns = s.ns

    def sample(self, u_cell, u_jitter):
        idx = np.minimum(np.searchsorted(self.cum, u_cell * self.cum[-1]), len(self.p) - 1)
        rho = self.edges[self.grid[idx]] + self.h * u_jitter
        return rho, np.log(self.p[idx] / self.cum[-1]) - self.ns * math.log(self.h)


# -- the two sides ------------------------------------------------------------------
def _noncompact(s: _Setup, rho, z, pick, widths=(1.2, 2.5), probs=(0.8, 0.2)):
    """Log weights and dA for the gauge-fixed side.

    (A, relative phases) follow a two-width Gaussian mixture built on the quadratic expansion of
    the action; the phases are wrapped to (-pi, pi] and their density summed over images.
    """
    nb, nt = s.nb, s.ns - 1
    L, ld = _chol(s.noncompact_prec(rho))
    comp = np.searchsorted(np.cumsum(probs), pick * np.sum(probs))
    scale = np.asarray(widths)[comp]
    x = _solve_upper(L, z[:, : nb + nt]) * scale[:, None]
    A = x[:, :nb]
    th = (x[:, nb:] + math.pi) % TWO_PI - math.pi
    shifts = np.array(list(itertools.product((-1, 0, 1), repeat=nt))) * TWO_PI
    pts = np.concatenate([np.repeat(A[:, None, :], len(shifts), 1), th[:, None, :] + shifts[None]], axis=2)
    k = nb + nt
    logs = []
    for p, wd in zip(probs, widths):
        lp = _gauss_logpdf(pts, (L / wd)[:, None], (ld - 2 * k * math.log(wd))[:, None])
        logs.append(math.log(p) + logsumexp(lp, axis=1))
    log_q = logsumexp(np.stack(logs), axis=0) - math.log(TWO_PI)      # global phase uniform
    theta = np.concatenate([np.zeros((len(rho), 1)), th], axis=1)
    dA = A @ s.D1.T
    div = A @ s.D0
    log_f = (-0.5 * np.sum(dA ** 2, 1) - 0.5 * s.c.alpha * np.sum(div ** 2, 1) - s.gauge_c
             - _higgs_polar(s, rho, theta, A) + np.log(rho).sum(1))
    return log_f - log_q, dA


def _compact(s: _Setup, rho, z, unif, theta_u, pick, p_uniform=0.1):
    """Log weights and per-sample vortex log-terms for the compact side.

    A' = A + (theta_tail - theta_head)/e0 (mod the period) follows a wrapped Gaussian mixed with the
    uniform law on the box; the phases are uniform; A is recovered by the measure-preserving shift.
    """
    nb, nt, P = s.nb, s.ns - 1, s.P
    L, ld = _chol(s.compact_prec(rho))
    uni = pick < p_uniform
    Ap = _solve_upper(L, z[:, :nb])
    Ap = np.where(uni[:, None], (unif - 0.5) * P, (Ap + P / 2) % P - P / 2)
    images = np.array(list(itertools.product((-1, 0, 1), repeat=nb))) * P
    lg = logsumexp(_gauss_logpdf(Ap[:, None, :] + images[None], L[:, None], ld[:, None]), axis=1)
    log_q = np.logaddexp(math.log(1 - p_uniform) + lg, math.log(p_uniform) - nb * math.log(P))
    log_q -= (nt + 1) * math.log(TWO_PI)
    th = (theta_u - 0.5) * TWO_PI
    theta = np.concatenate([np.zeros((len(rho), 1)), th], axis=1)
    A = Ap - th @ s.Gth.T / s.c.e0
    A = (A + P / 2) % P - P / 2
    F = (A @ s.D1.T)[:, 0][:, None] + s.vort[None, :]          # (n, n_vortex)
    lv = -0.5 * F ** 2
    log_f = logsumexp(lv, axis=1) - _higgs_polar(s, rho, theta, A) + np.log(rho).sum(1)
    return log_f - log_q, (lv, F)


def _ratio_of_means(a, b):
    """a.mean() / b.mean() and its delta-method standard error from paired samples."""
    N = len(a)
    ma, mb = a.mean(), b.mean()
    c = np.cov(a, b)
    rel2 = (c[0, 0] / ma ** 2 + c[1, 1] / mb ** 2 - 2 * c[0, 1] / (ma * mb)) / N
    r = ma / mb
    return r, abs(r) * math.sqrt(max(rel2, 0.0))


def equivalence_check(geometry: LatticeGeometry, couplings: Couplings, n_samples: int = 100_000,
                      vortex_range: int = 3, J: float | None = None, seed: int = 0,
                      boundary: str = "dirichlet", chunk: int = 20_000) -> EquivalenceResult:
    """Estimate Z^NC and Z^C; return Z^NC / ((2 pi/e0)^-(|sites|-1) Z^C) with its standard error.

    With ``J`` set, also the expectations of exp(-e0 J F) with F = dA (non-compact side) or
    F = dA + v (compact side) on the plaquette.
    """
    s = _Setup(geometry, couplings, vortex_range, boundary)
    radial = _RadialGrid(s)
    rng = np.random.default_rng(seed)
    nb, nt = s.nb, s.ns - 1
    lw_nc, lw_c, F_nc, vort = [], [], [], []
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        rho, lr = radial.sample(rng.random(m), rng.random((m, s.ns)))
        z = rng.standard_normal((m, nb + nt))
        unif = rng.random((m, nb))
        theta_u = rng.random((m, nt))
        pick = rng.random(m)
        a, F = _noncompact(s, rho, z, pick)
        b, (lv, Fv) = _compact(s, rho, z, unif, theta_u, pick)
        lw_nc.append(a - lr)
        lw_c.append(b - lr)
        F_nc.append(F)
        vort.append((lv, Fv))
        done += m
    lw_nc = np.concatenate(lw_nc)
    log_pref = -nt * math.log(s.P)
    lw_c = np.concatenate(lw_c) + log_pref
    shift = max(lw_nc.max(), lw_c.max())
    a = np.exp(lw_nc - shift)
    b = np.exp(lw_c - shift)
    ratio, ratio_err = _ratio_of_means(a, b)

    def ess(x):
        return float(x.sum() ** 2 / np.sum(x ** 2))

    obs = [None] * 4
    if J is not None:
        e0 = couplings.e0
        o_nc = np.exp(-e0 * J * np.concatenate(F_nc).sum(axis=1))
        lv = np.concatenate([v[0] for v in vort])
        Fv = np.concatenate([v[1] for v in vort])
        o_c = np.exp(logsumexp(lv - e0 * J * Fv, axis=1) - logsumexp(lv, axis=1))
        obs = [*_ratio_of_means(a * o_nc, a), *_ratio_of_means(b * o_c, b)]
    return EquivalenceResult(float(math.log(a.mean()) + shift), float(math.log(b.mean()) + shift - log_pref),
                             float(ratio), float(ratio_err), *obs, n_samples, ess(a), ess(b))
