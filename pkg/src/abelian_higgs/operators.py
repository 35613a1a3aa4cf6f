"""Covariance operators: the quadratic form T, its square root, localization and determinant identities."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.integrate import quad_vec

from .lattice import BlockPartition, LatticeGeometry, _set_distance
from .model import Couplings


class ConvergenceError(RuntimeError):
    pass


# -- cell spaces ------------------------------------------------------------
class CellSpace:
    """An ordered list of lattice cells (sites first, then bonds) on which operators act."""

    def __init__(self, geometry: LatticeGeometry, degrees=(0, 1), masks: dict | None = None):
        self.geometry = geometry
        deg, idx = [], []
        for k in degrees:
            n = geometry.n_cells(k)
            sel = np.arange(n) if masks is None or k not in masks else np.nonzero(masks[k])[0]
            deg.append(np.full(len(sel), k))
            idx.append(sel)
        self.degree = np.concatenate(deg).astype(int)
        self.index = np.concatenate(idx).astype(int)
        self.degrees = tuple(degrees)

    def __len__(self):
        return len(self.degree)

    @property
    def cells(self):
        return list(zip(self.degree.tolist(), self.index.tolist()))

    @cached_property
    def base(self) -> np.ndarray:
        g = self.geometry
        return np.array([g.cell_base(k)[i] for k, i in self.cells], dtype=int)

    def distance(self, metric: str = "sup") -> np.ndarray:
        cache = self.__dict__.setdefault("_dist", {})
        if metric not in cache:
            g = self.geometry
            pts = [g.coords[g.cell_corners(k)[i]] for k, i in self.cells]
            cache[metric] = _set_distance(pts, pts, metric)
        return cache[metric]

    def blocks(self, partition: BlockPartition) -> np.ndarray:
        return partition.site_block[self.base]

    def subspace(self, mask) -> "CellSpace":
        mask = np.asarray(mask, bool)
        masks = {}
        for k in self.degrees:
            m = np.zeros(self.geometry.n_cells(k), bool)
            m[self.index[(self.degree == k) & mask]] = True
            masks[k] = m
        return CellSpace(self.geometry, self.degrees, masks)

    def positions_in(self, other: "CellSpace") -> np.ndarray:
        """Index in ``other`` of every cell of this space."""
        lookup = {c: j for j, c in enumerate(other.cells)}
        return np.array([lookup[c] for c in self.cells], dtype=int)


@dataclass
class LatticeOperator:
    matrix: np.ndarray
    space: CellSpace

    def __post_init__(self):
        n = len(self.space)
        if self.matrix.shape != (n, n):
            raise ValueError(f"operator shape {self.matrix.shape} does not match space of {n} cells")

    def __matmul__(self, other):
        if isinstance(other, LatticeOperator):
            return LatticeOperator(self.matrix @ other.matrix, self.space)
        return self.matrix @ other

    def restrict(self, mask) -> "LatticeOperator":
        mask = np.asarray(mask, bool)
        return LatticeOperator(self.matrix[np.ix_(mask, mask)], self.space.subspace(mask))

    @property
    def T(self):
        return LatticeOperator(self.matrix.T, self.space)


def build_T(geometry: LatticeGeometry, couplings: Couplings | None = None, *, mu2=None, mA2=None,
            degrees=(0, 1)) -> LatticeOperator:
    """Block diagonal quadratic form: -Lap + mu^2 on sites and delta d + m_A^2 on bonds."""
    if couplings is not None:
        mu2 = couplings.mu ** 2 if mu2 is None else mu2
        mA2 = couplings.m_A ** 2 if mA2 is None else mA2
    space = CellSpace(geometry, degrees)
    blocks = []
    for k in degrees:
        if k == 0:
            if mu2 is None:
                raise ValueError("site mass mu^2 required")
            blocks.append(geometry.laplacian("dirichlet").toarray() + mu2 * np.eye(geometry.n_sites))
        elif k == 1:
            if mA2 is None:
                raise ValueError("bond mass m_A^2 required")
            nb = geometry.n_bonds
            curl = geometry.incidence(1).toarray() if geometry.d >= 2 else np.zeros((0, nb))
            blocks.append(curl.T @ curl + mA2 * np.eye(nb))
        else:
            raise ValueError("T acts on sites and bonds only")
    return LatticeOperator(sla.block_diag(*blocks), space)


# -- kernel decay -------------------------------------------------------------
@dataclass
class KernelProfile:
    distances: np.ndarray
    max_abs: np.ndarray
    rate: float
    intercept: float
    window: tuple
    residual: float

    def to_dict(self):
        return {"distances": self.distances.tolist(), "max_abs": self.max_abs.tolist(), "rate": self.rate,
                "intercept": self.intercept, "window": list(self.window), "residual": self.residual}


def kernel_decay(op: LatticeOperator, metric: str = "l1", window=None) -> KernelProfile:
    """Largest |K(x, y)| at each distance and a log-linear fit of its decay.

    The default fit window is the middle third of the distance range.
    """
    D = np.rint(op.space.distance(metric)).astype(int)
    K = np.abs(op.matrix)
    rmax = int(D.max())
    dist = np.arange(rmax + 1)
    prof = np.zeros(rmax + 1)
    np.maximum.at(prof, D.ravel(), K.ravel())
    if window is None:
        window = (int(math.ceil(rmax / 3)), int(math.floor(2 * rmax / 3)))
    sel = (dist >= window[0]) & (dist <= window[1]) & (prof > 1e-300) & (dist > 0)
    if sel.sum() < 2:
        return KernelProfile(dist, prof, math.inf, -math.inf, tuple(window), 0.0)
    slope, icpt = np.polyfit(dist[sel], np.log(prof[sel]), 1)
    res = np.log(prof[sel]) - (slope * dist[sel] + icpt)
    return KernelProfile(dist, prof, float(-slope), float(icpt), tuple(window), float(np.max(np.abs(res))))


# -- square root ----------------------------------------------------------------
@dataclass
class QuadratureSpec:
    """Gauss-Legendre rule for T^(-1/2) = (2/pi) int_0^1 ((1-s)^2 T + s^2)^(-1) ds."""
    n_nodes: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    tol: float = 1e-8
    test_points: tuple = (0.25, 1.0, 4.0, 25.0)
    max_error: float = math.nan

    @classmethod
    def build(cls, n_nodes, tol=1e-8, test_points=(0.25, 1.0, 4.0, 25.0)):
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        q = cls(n_nodes, 0.5 * (x + 1), 0.5 * w, tol, tuple(test_points))
        q.max_error = max(abs(q.scalar(t) - t ** -0.5) * math.sqrt(t) for t in test_points)
        return q

    def scalar(self, t: float) -> float:
        s, w = self.nodes, self.weights
        return float((2 / math.pi) * np.sum(w / ((1 - s) ** 2 * t + s ** 2)))

    @property
    def passed(self):
        return self.max_error <= self.tol

    @classmethod
    def adaptive(cls, tol=1e-8, extra_points=(), n_start=16, n_cap=2048):
        pts = tuple(sorted({0.25, 1.0, 4.0, 25.0, *[float(p) for p in extra_points if p > 0]}))
        n = n_start
        while n <= n_cap:
            q = cls.build(n, tol, pts)
            if q.passed:
                return q
            n = int(n * 1.5)
        raise ConvergenceError(f"square-root quadrature did not reach {tol} with {n_cap} nodes")


def gershgorin(M: np.ndarray):
    off = np.sum(np.abs(M), axis=1) - np.abs(np.diag(M))
    return float(np.min(np.diag(M) - off)), float(np.max(np.diag(M) + off))


def sqrt_covariance(T: LatticeOperator, quad: QuadratureSpec | None = None, tol=1e-8):
    """C^(1/2) = T^(-1/2) by quadrature of resolvents; returns (operator, quadrature used)."""
    M = np.asarray(T.matrix, float)
    if quad is None:
        lo, hi = gershgorin(M)
        quad = QuadratureSpec.adaptive(tol, extra_points=(max(lo, 1e-3), hi))
    n = len(M)
    eye = np.eye(n)
    out = np.zeros_like(M)
    for s, w in zip(quad.nodes, quad.weights):
        c = sla.cho_factor((1 - s) ** 2 * M + s ** 2 * eye)
        out += w * sla.cho_solve(c, eye)
    out *= 2 / math.pi
    out = 0.5 * (out + out.T)
    return LatticeOperator(out, T.space), quad


# -- localization ----------------------------------------------------------------
@dataclass
class Localized:
    loc: LatticeOperator
    delta: LatticeOperator
    r_cut: float
    metric: str


def localize(op: LatticeOperator, r_cut: float, metric: str = "l1") -> Localized:
    """Keep entries between cells at distance strictly below r_cut; delta is the remainder."""
    keep = op.space.distance(metric) < r_cut
    loc = np.where(keep, op.matrix, 0.0)
    return Localized(LatticeOperator(loc, op.space), LatticeOperator(op.matrix - loc, op.space), r_cut, metric)


def sup_norm(M: np.ndarray) -> float:
    """Operator norm for the sup norm on vectors: the largest absolute row sum."""
    return float(np.max(np.sum(np.abs(M), axis=1)))


@dataclass
class NeumannResult:
    matrix: np.ndarray
    n_terms: int
    converged: bool
    last_term: float


def inverse_sqrt_loc(T: LatticeOperator, C_half: LatticeOperator, delta: LatticeOperator,
                     tol=1e-13, n_max=500) -> NeumannResult:
    """(C^(1/2) - delta)^(-1) as C^(-1/2) sum_n (delta C^(-1/2))^n, with C^(-1/2) = T C^(1/2)."""
    C_mhalf = T.matrix @ C_half.matrix
    X = delta.matrix @ C_mhalf
    term = C_mhalf.copy()
    acc = term.copy()
    scale = np.max(np.abs(acc))
    for n in range(1, n_max + 1):
        term = term @ X
        acc += term
        size = np.max(np.abs(term))
        if not np.isfinite(size) or size > 1e12 * scale:
            raise ConvergenceError("Neumann series for the localized inverse square root diverges")
        if size < tol * scale:
            return NeumannResult(acc, n, True, float(size))
    return NeumannResult(acc, n_max, False, float(size))


def inverse_sqrt_bounds(T: LatticeOperator, C_half: LatticeOperator, loc: Localized, n_probe=20, rng=None):
    """Sup-norm bound on the localized inverse square root plus ratios for random bounded probes."""
    res = inverse_sqrt_loc(T, C_half, loc.delta)
    rng = np.random.default_rng(0) if rng is None else rng
    probes = rng.uniform(-1, 1, (n_probe, len(T.space)))
    ratios = np.max(np.abs(probes @ res.matrix.T), axis=1) / np.max(np.abs(probes), axis=1)
    return {"bound": sup_norm(res.matrix), "ratios": ratios, "series": res}


# -- V_epsilon -----------------------------------------------------------------------
@dataclass
class VEpsilon:
    total: float
    direct: float
    per_block: dict


def v_epsilon(phi, T: LatticeOperator, C_half: LatticeOperator, loc: Localized, cell_blocks=None) -> VEpsilon:
    """<phi, (C_loc^(1/2) T C_loc^(1/2) - 1) phi> and its split over blocks.

    Per block: <delta phi, 1_B T delta phi> - 2 <C^(-1/2) phi, 1_B delta phi>.
    """
    phi = np.asarray(phi, float)
    Tm, Cl, dl = T.matrix, loc.loc.matrix, loc.delta.matrix
    direct = float(phi @ (Cl @ (Tm @ (Cl @ phi))) - phi @ phi)
    dphi = dl @ phi
    cm = Tm @ (C_half.matrix @ phi)
    density = dphi * (Tm @ dphi) - 2 * cm * dphi
    if cell_blocks is None:
        cell_blocks = np.zeros(len(phi), int)
    per = {}
    for b in np.unique(cell_blocks):
        per[int(b)] = float(np.sum(density[cell_blocks == b]))
    return VEpsilon(float(np.sum(density)), direct, per)


# -- logarithms and determinants ----------------------------------------------------
@dataclass
class LogResult:
    matrix: np.ndarray
    trace: float
    R0: float


def _log_parts(K, R0, epsrel, diag_only):
    n = len(K)
    eye = np.eye(n)

    def resolvent(x):
        return sla.solve(K + x * eye, eye, assume_a="pos")

    def upper(u):
        # K int_R0^inf dx/x (K + x)^-1 with x = R0/u becomes K int_0^1 (uK + R0)^-1 du
        M = K @ sla.solve(u * K + R0 * eye, eye, assume_a="pos")
        return np.diag(M).copy() if diag_only else M

    def lower(s):
        M = R0 * resolvent(R0 * s)
        return np.diag(M).copy() if diag_only else M

    up, _ = quad_vec(upper, 0.0, 1.0, epsabs=0.0, epsrel=epsrel, norm="max")
    lo, _ = quad_vec(lower, 0.0, 1.0, epsabs=0.0, epsrel=epsrel, norm="max")
    return up, lo


def log_operator(K, R0: float = 1.0, epsrel: float = 1e-13) -> LogResult:
    """log K = K int_R0^inf dx/x (K + x)^-1 - int_0^R0 (K + x)^-1 dx + log R0 for positive K."""
    K = np.asarray(K.matrix if isinstance(K, LatticeOperator) else K, float)
    if R0 <= 0:
        raise ValueError("R0 must be positive")
    up, lo = _log_parts(K, R0, epsrel, False)
    L = up - lo + math.log(R0) * np.eye(len(K))
    return LogResult(L, float(np.trace(L)), R0)


def log_diagonal(K, R0: float = 1.0, epsrel: float = 1e-13):
    """Diagonal of log K split into the two integrals: (upper part, lower part)."""
    K = np.asarray(K.matrix if isinstance(K, LatticeOperator) else K, float)
    return _log_parts(K, R0, epsrel, True)


def trace_log(K, R0: float = 1.0) -> float:
    up, lo = log_diagonal(K, R0)
    return float(np.sum(up - lo) + len(up) * math.log(R0))


@dataclass
class SeriesSplit:
    total: float
    per_block: dict
    n_terms: int


def w1_series(T: LatticeOperator, C_half: LatticeOperator, loc: Localized, cell_blocks=None,
              tol=1e-12, n_max=64) -> SeriesSplit:
    """W1 = -sum_n Tr (C^(-1/2) delta)^n / n, so that det C_loc^(1/2) = det C^(1/2) exp(W1)."""
    X = T.matrix @ C_half.matrix @ loc.delta.matrix
    n_cells = len(X)
    diag_acc = np.zeros(n_cells)
    P = X.copy()
    n_used = 0
    for n in range(1, n_max + 1):
        term = np.diag(P) / n
        diag_acc -= term
        n_used = n
        if abs(term.sum()) < tol and np.max(np.abs(term)) < tol:
            break
        P = P @ X
    if cell_blocks is None:
        cell_blocks = np.zeros(n_cells, int)
    per = {int(b): float(diag_acc[cell_blocks == b].sum()) for b in np.unique(cell_blocks)}
    return SeriesSplit(float(diag_acc.sum()), per, n_used)


@dataclass
class W2Split:
    total: float
    per_block: dict
    A: dict
    B: dict


def w2_split(T: LatticeOperator, region, cell_blocks, R0: float = 1.0, epsrel=1e-12) -> W2Split:
    """W2 = (Tr log T - Tr log T_region) / 2 with per-block resolvent integrals.

    A(B) collects the part with the resolvent integrated over [0, R0] and B(B) the part over
    [R0, inf); W2(B) = (A + B) / 2.
    """
    region = np.asarray(region, bool)
    cell_blocks = np.asarray(cell_blocks)
    up_f, lo_f = log_diagonal(T.matrix, R0, epsrel)
    up_r = np.zeros(len(region))
    lo_r = np.zeros(len(region))
    u, l = log_diagonal(T.matrix[np.ix_(region, region)], R0, epsrel)
    up_r[region], lo_r[region] = u, l
    logR = math.log(R0)
    A, B, per = {}, {}, {}
    for b in np.unique(cell_blocks):
        sel = cell_blocks == b
        A[int(b)] = float(np.sum(lo_r[sel] - lo_f[sel]))
        B[int(b)] = float(np.sum(up_f[sel] - up_r[sel]))
        n_full, n_reg = sel.sum(), (sel & region).sum()
        per[int(b)] = 0.5 * (A[int(b)] + B[int(b)] + (n_full - n_reg) * logR)
    return W2Split(float(sum(per.values())), per, A, B)


# -- random walk ----------------------------------------------------------------------
@dataclass
class RandomWalkResult:
    partial: np.ndarray
    errors: np.ndarray
    ratio: float
    jacobi_ratio: float


def _as_matrix(T):
    return np.asarray(T.matrix if isinstance(T, LatticeOperator) else T, float)


def _jacobi(T, r):
    M = _as_matrix(T)
    M = M + r * np.eye(len(M))
    Dinv = 1.0 / np.diag(M)
    step = Dinv[:, None] * (np.diag(np.diag(M)) - M)
    return M, Dinv, step


def random_walk_partial(T, r: float = 0.0, n: int = 10) -> np.ndarray:
    """n-th partial sum of (T + r)^(-1) = sum_k (D^(-1) N)^k D^(-1) with D the diagonal of T + r.

    For -Lap + mu^2 this is the sum over nearest-neighbour walks of length at most n.
    """
    _, Dinv, step = _jacobi(T, r)
    term = np.diag(Dinv)
    acc = term.copy()
    for _ in range(n):
        term = step @ term
        acc += term
    return acc


def random_walk_inverse(T, r: float = 0.0, n_max: int = 30) -> RandomWalkResult:
    """Partial sums up to n_max, their sup errors against the dense inverse and the fitted error ratio."""
    M, Dinv, step = _jacobi(T, r)
    exact = np.linalg.inv(M)
    term = np.diag(Dinv)
    acc = term.copy()
    errs = [np.max(np.abs(acc - exact))]
    for _ in range(n_max):
        term = step @ term
        acc += term
        errs.append(np.max(np.abs(acc - exact)))
    errs = np.array(errs)
    good = np.nonzero(errs > 1e-13 * np.max(np.abs(exact)))[0]
    half = good[len(good) // 2:] if len(good) >= 4 else good
    ratio = float(np.exp(np.polyfit(half, np.log(errs[half]), 1)[0])) if len(half) >= 2 else 0.0
    jr = float(np.max(np.abs(np.linalg.eigvals(step))))
    return RandomWalkResult(acc, errs, ratio, jr)


# -- reports ---------------------------------------------------------------------------
@dataclass
class IdentityReport:
    identity: str
    lhs: float
    rhs: float
    rel_err: float
    tolerance: float
    passed: bool

    @classmethod
    def compare(cls, identity, lhs, rhs, tolerance, scale=None):
        scale = max(abs(rhs), 1e-300) if scale is None else scale
        err = abs(lhs - rhs) / scale
        return cls(identity, float(lhs), float(rhs), float(err), float(tolerance), bool(err <= tolerance))

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def write_reports_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["identity", "lhs", "rhs", "rel_err", "tolerance", "pass"])
        w.writeheader()
        for r in reports:
            w.writerow(r.to_dict())


def write_reports_json(reports, path):
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
