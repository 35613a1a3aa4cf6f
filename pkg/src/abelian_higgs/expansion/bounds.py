"""Numeric checks of the decay bounds: fitted constants and pass/fail reports."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .coefficients import CoefficientSystem, weight_norm


@dataclass
class BoundFit:
    name: str
    c: float
    kappa: float
    n_points: int
    passed: bool
    detail: str = ""

    def to_dict(self):
        return asdict(self)


def fit_exponential_bound(name, sizes, values, require_decay=True) -> BoundFit:
    """Fit |value| <= c exp(-kappa size).

    kappa comes from a least-squares line through the largest |value| at each size; c is the
    smallest constant for which every point satisfies the bound with that kappa.
    """
    sizes = np.asarray(sizes, float)
    vals = np.abs(np.asarray(values, float))
    keep = vals > 0
    sizes, vals = sizes[keep], vals[keep]
    if len(vals) == 0:
        return BoundFit(name, 0.0, math.inf, 0, True, "all values vanish")
    us = np.unique(sizes)
    env = np.array([vals[sizes == s].max() for s in us])
    if len(us) >= 2:
        slope = np.polyfit(us, np.log(env), 1)[0]
        kappa = float(-slope)
    else:
        kappa = 0.0
    c = float(np.max(vals * np.exp(kappa * sizes)))
    ok = kappa > 0 if require_decay else True
    return BoundFit(name, c, kappa, int(len(vals)), bool(ok))


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def check_bound(name, lhs, rhs) -> BoundReport:
    return BoundReport(name, float(lhs), float(rhs), bool(lhs <= rhs))


def large_field_weight_bound(e0, p_lam, q_size, phi_norm2, m_min, gamma1, c=1.0) -> float:
    """c e0^2 exp(-3/8 p_lam |Q|) exp(-(m_min gamma1 - 1/p_lam) |phi|^2)."""
    return c * e0 ** 2 * math.exp(-0.375 * p_lam * q_size) * math.exp(-(m_min * gamma1 - 1 / p_lam) * phi_norm2)


def shifted_norm_bound(v_norm: float) -> float:
    """Right side of |H - H(0)| <= |V| / (1 - 16 |V|); infinite when 16 |V| >= 1."""
    return v_norm / (1 - 16 * v_norm) if 16 * v_norm < 1 else math.inf


# -- small-field logarithm on a handful of variables -----------------------------------
def small_field_log(V: CoefficientSystem, n_phi: int, psi_values: np.ndarray, p0: float, n_nodes: int = 24):
    """H(Psi) = log( int dmu(Phi) chi(Phi) exp(-V(Phi, Psi)) / int dmu(Phi) chi(Phi) ).

    dmu is the standard Gaussian on n_phi variables and chi restricts every |Phi_i| < p0; the
    integral uses a tensor Gauss-Legendre rule on [-p0, p0]^n_phi.
    """
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    x, w = p0 * x, p0 * w * np.exp(-0.5 * (p0 * x) ** 2) / math.sqrt(2 * math.pi)
    grid = np.array(list(itertools.product(x, repeat=n_phi)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=n_phi))), axis=1)
    z0 = wts.sum()
    out = []
    for psi in np.atleast_2d(psi_values):
        vals = np.array([V.evaluate(g, psi) for g in grid])
        out.append(math.log(np.sum(wts * np.exp(-vals)) / z0))
    return np.array(out)


def polynomial_coefficients(psi_points, values, degree: int) -> CoefficientSystem:
    """Least-squares symmetric coefficient system in Psi (second group) of the given degree."""
    psi_points = np.atleast_2d(psi_points)
    m = psi_points.shape[1]
    monos = [()]
    for k in range(1, degree + 1):
        monos += list(itertools.combinations_with_replacement(range(m), k))
    A = np.array([[np.prod(p[list(mo)]) if mo else 1.0 for mo in monos] for p in psi_points])
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    system = CoefficientSystem("fit")
    by_k: dict = {}
    for mo, cval in zip(monos, coef):
        k = len(mo)
        if k == 0:
            continue
        perms = set(itertools.permutations(mo))
        for p in perms:
            by_k.setdefault(k, []).append((p, cval / len(perms)))
    for k, items in by_k.items():
        system.add((0, k), np.zeros((len(items), 0), int), np.array([p for p, _ in items]), np.array([v for _, v in items]))
    return system


def small_field_norm_check(V: CoefficientSystem, n_phi: int, n_psi: int, p0: float, phi_weight: float,
                           psi_weight: float, degree: int = 4, spread: float = 0.3, n_nodes: int = 24):
    """Compare the weighted norm of H - H(0), fitted from direct integration, with |V| / (1 - 16 |V|)."""
    grid1 = np.linspace(-spread, spread, degree + 3)
    pts = np.array(list(itertools.product(grid1, repeat=n_psi)))
    vals = small_field_log(V, n_phi, pts, p0, n_nodes)
    H = polynomial_coefficients(pts, vals, degree)
    h_norm = weight_norm(H, psi_weight=psi_weight)
    v_norm = weight_norm(V, phi_weight=phi_weight, psi_weight=psi_weight)
    return check_bound("small-field logarithm", h_norm, shifted_norm_bound(v_norm)), H


@dataclass
class EnvelopeFit:
    slope: float
    intercept: float
    r2: float
    lengths: list
    envelope: list

    def to_dict(self):
        return asdict(self)


def envelope_fit(lengths, values, min_count: int = 20, floor: float = 1e-13, from_peak: bool = False) -> EnvelopeFit:
    """Line through log max|a| per integer tree length.

    Bins with fewer than ``min_count`` samples are dropped (their maximum is undersampled), as are
    values below ``floor`` times the largest one (round-off).  With ``from_peak`` the fit starts at
    the bin holding the largest envelope value.
    """
    L = np.round(np.asarray(lengths, float)).astype(int)
    a = np.abs(np.asarray(values, float))
    ok = a > floor * a.max()
    L, a = L[ok], a[ok]
    us, counts = np.unique(L, return_counts=True)
    us = us[counts >= min_count]
    env = np.array([a[L == u].max() for u in us])
    if from_peak and len(env):
        k = int(np.argmax(env))
        us, env = us[k:], env[k:]
    if len(us) < 3:
        raise ValueError("fewer than three populated length bins")
    y = np.log(env)
    slope, icpt = np.polyfit(us, y, 1)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1 - np.sum((y - np.polyval([slope, icpt], us)) ** 2) / ss if ss > 0 else 1.0
    return EnvelopeFit(float(slope), float(icpt), float(r2), us.tolist(), env.tolist())
