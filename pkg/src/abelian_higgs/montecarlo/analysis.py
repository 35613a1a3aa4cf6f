"""Measurements on sampled chains: binned jackknife errors, truncated correlators, effective masses,
Wilson loops and large-field frequencies."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from ..lattice import LatticeGeometry
from .sampler import Chain

MIN_BINS = 20


class InsufficientBins(ValueError):
    pass


class FitError(ValueError):
    pass


# -- error analysis --------------------------------------------------------
def autocorrelation_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with the self-consistent window W >= c tau."""
    x = np.asarray(x, float)
    n = len(x)
    if n < 4:
        return 0.5
    y = x - x.mean()
    var = float(y @ y) / n
    if var == 0:
        return 0.5
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return max(0.5, float(tau))


def choose_bins(series_list, n_meas: int, min_bins: int = MIN_BINS, factor: float = 5.0):
    """Bin size >= factor * tau over the given scalar series; at least ``min_bins`` bins."""
    tau = max([autocorrelation_time(s) for s in series_list] + [0.5])
    size = max(1, int(math.ceil(factor * tau)))
    n_bins = n_meas // size
    if n_bins < min_bins:
        raise InsufficientBins(f"{n_meas} measurements give {n_bins} bins of size {size} (tau = {tau:.2f}); need {min_bins}")
    return size, n_bins, tau


def bin_means(X, size: int, n_bins: int):
    X = np.asarray(X)
    dt = np.complex128 if np.iscomplexobj(X) else np.float64
    return X[: size * n_bins].reshape((n_bins, size) + X.shape[1:]).mean(axis=1, dtype=dt)


def jackknife(bins, func):
    """Estimate and jackknife error of func(mean) from per-bin means (one array or a tuple of arrays)."""
    single = not isinstance(bins, (tuple, list))
    arrs = [bins] if single else list(bins)
    n = arrs[0].shape[0]
    tot = [a.sum(axis=0) for a in arrs]
    full = func(*[t / n for t in tot])
    loo = np.array([func(*[(t - a[i]) / (n - 1) for t, a in zip(tot, arrs)]) for i in range(n)])
    err = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return full, err, loo


# -- plaquette geometry ----------------------------------------------------
def plaquette_coords(geometry: LatticeGeometry) -> np.ndarray:
    return geometry.coords[geometry.cell_base(2)]


def interior_plaquettes(geometry: LatticeGeometry, frame: int) -> np.ndarray:
    """Plaquettes whose corners all lie at distance >= frame from the box faces."""
    x = plaquette_coords(geometry)
    ax = geometry.cell_axes(2)
    upper = x.copy()
    for j in range(2):
        upper[np.arange(len(x)), ax[:, j]] += 1
    return np.all(x >= frame, axis=1) & np.all(upper <= geometry.L - 1 - frame, axis=1)


def plaquette_shift(geometry: LatticeGeometry, offset) -> np.ndarray:
    """Index of each plaquette translated by ``offset`` (-1 when it leaves the box)."""
    lookup = geometry.cell_lookup(2)
    base = geometry.cell_base(2)
    axes = geometry.cell_axes(2)
    x = geometry.coords[base] + np.asarray(offset, int)
    out = -np.ones(len(base), np.int64)
    ok = np.all((x >= 0) & (x < geometry.L), axis=1)
    for i in np.nonzero(ok)[0]:
        out[i] = lookup.get((int(geometry.site_index(x[i])), tuple(int(a) for a in axes[i])), -1)
    return out


def translated_tuples(geometry: LatticeGeometry, plaquettes, frame: int = 0) -> np.ndarray:
    """All translates of a tuple of plaquettes that stay inside the measurement frame, shape (n_trans, n)."""
    plaquettes = [int(p) for p in plaquettes]
    inner = interior_plaquettes(geometry, frame)
    x = plaquette_coords(geometry)
    axes = geometry.cell_axes(2)
    p0 = plaquettes[0]
    offsets = [x[p] - x[p0] for p in plaquettes]
    rows = []
    lookup = geometry.cell_lookup(2)
    for q in np.nonzero(inner & np.all(axes == axes[p0], axis=1))[0]:
        row = []
        for p, off in zip(plaquettes, offsets):
            y = x[q] + off
            if np.any(y < 0) or np.any(y >= geometry.L):
                break
            idx = lookup.get((int(geometry.site_index(y)), tuple(int(a) for a in axes[p])), -1)
            if idx < 0 or not inner[idx]:
                break
            row.append(idx)
        else:
            rows.append(row)
    if not rows:
        raise ValueError("no translate of the plaquette tuple fits inside the frame")
    return np.array(rows, np.int64)


# -- correlators -----------------------------------------------------------
@dataclass
class CorrelatorEstimate:
    t: np.ndarray
    mean: np.ndarray
    err: np.ndarray
    connected: bool = True
    n_bins: int = 0
    bin_size: int = 0
    tau: float = 0.0
    samples: np.ndarray | None = field(default=None, repr=False)   # leave-one-bin-out values

    def rows(self):
        return [(int(t), float(m), float(e)) for t, m, e in zip(self.t, self.mean, self.err)]

    def to_dict(self):
        return {"t": [int(t) for t in self.t], "mean": [float(m) for m in self.mean], "err": [float(e) for e in self.err],
                "connected": self.connected, "n_bins": self.n_bins, "bin_size": self.bin_size, "tau": self.tau}


def _chain_bins(chain: Chain, extra=()):
    F = chain.F
    series = [chain.action, np.mean(F.astype(np.float64) ** 2, axis=1)] + list(extra)
    return choose_bins(series, len(F))


def _pair_bins(F, pairs, size, n_bins):
    """Per-bin pair-averaged products and per-bin single means of both members."""
    prod = np.zeros(n_bins)
    for i in range(n_bins):
        blk = F[i * size:(i + 1) * size].astype(np.float64)
        prod[i] = np.mean(blk[:, pairs[:, 0]] * blk[:, pairs[:, 1]])
    return prod


def _connected_pairs(F, pairs_by_t, size, n_bins):
    singles = bin_means(F, size, n_bins)
    prods = np.stack([_pair_bins(F, pr, size, n_bins) for pr in pairs_by_t], axis=1)

    def f(pr, s):
        return np.array([pr[k] - np.mean(s[pp[:, 0]] * s[pp[:, 1]]) for k, pp in enumerate(pairs_by_t)])
    return jackknife((prods, singles), f)


def truncated_two_point(chain: Chain, p1: int, p2: int, frame: int = 0, translate: bool = True,
                        orbit: tuple[int, int] | None = None) -> CorrelatorEstimate:
    """<F(p1) F(p2)> - <F(p1)> <F(p2)>, averaged over translates of the pair inside the frame.

    ``orbit=(k, n)`` keeps every n-th translate starting at k (for splitting the translation orbit).
    """
    g = chain.geometry
    pairs = translated_tuples(g, [p1, p2], frame) if translate else np.array([[p1, p2]])
    if orbit is not None:
        pairs = pairs[orbit[0]::orbit[1]]
    size, n_bins, tau = _chain_bins(chain)
    mean, err, loo = _connected_pairs(chain.F, [pairs], size, n_bins)
    sep = np.abs(plaquette_coords(g)[p2] - plaquette_coords(g)[p1]).sum()
    return CorrelatorEstimate(np.array([sep]), mean, err, True, n_bins, size, tau, loo)


def two_point_profile(chain: Chain, separations, axis: int = 0, frame: int = 0, base=None,
                      orbit: tuple[int, int] | None = None) -> CorrelatorEstimate:
    """Truncated F-F correlator between plaquettes displaced by t along ``axis``, translation averaged."""
    g = chain.geometry
    inner = interior_plaquettes(g, frame)
    base = int(np.nonzero(inner)[0][0]) if base is None else base
    pairs_by_t = []
    for t in separations:
        off = np.zeros(g.d, int)
        off[axis] = t
        partner = plaquette_shift(g, off)[base]
        pr = translated_tuples(g, [base, partner], frame)
        if orbit is not None:
            pr = pr[orbit[0]::orbit[1]]
        pairs_by_t.append(pr)
    size, n_bins, tau = _chain_bins(chain)
    mean, err, loo = _connected_pairs(chain.F, pairs_by_t, size, n_bins)
    return CorrelatorEstimate(np.asarray(separations), mean, err, True, n_bins, size, tau, loo)


def row_sums(geometry: LatticeGeometry, F, axis: int = 0, frame: int = 0):
    """Sum of F over interior plaquettes in each slice of fixed coordinate along ``axis``.

    Returns (slice coordinates, sums of shape (n_meas, n_slices), plaquettes per slice).
    """
    inner = interior_plaquettes(geometry, frame)
    x = plaquette_coords(geometry)[:, axis]
    coords = np.unique(x[inner])
    M = np.zeros((geometry.n_plaquettes, len(coords)))
    for j, c in enumerate(coords):
        M[inner & (x == c), j] = 1.0
    counts = M.sum(axis=0)
    return coords, np.asarray(F, np.float64) @ M, counts


def projected_correlator(chain: Chain, separations=None, axis: int = 0, frame: int = 0) -> CorrelatorEstimate:
    """Zero-momentum correlator: truncated covariance of slice sums at distance t, per plaquette in a slice."""
    coords, S, counts = row_sums(chain.geometry, chain.F, axis, frame)
    n = len(coords)
    separations = list(range(n)) if separations is None else list(separations)
    size, n_bins, tau = choose_bins([chain.action, S.mean(axis=1)], len(S))
    singles = bin_means(S, size, n_bins)
    prods = []
    for t in separations:
        prods.append(bin_means(S[:, : n - t] * S[:, t:], size, n_bins).mean(axis=1))
    prods = np.stack(prods, axis=1)
    norm = counts.mean()

    def f(pr, s):
        return np.array([(pr[k] - np.mean(s[: n - t] * s[t:])) / norm for k, t in enumerate(separations)])
    mean, err, loo = jackknife((prods, singles), f)
    return CorrelatorEstimate(np.asarray(separations), mean, err, True, n_bins, size, tau, loo)


# -- n-point cumulants -----------------------------------------------------
def set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def cumulant_from_moments(moments: dict, n: int):
    """Joint cumulant of n variables from the moments m[S] (S a sorted tuple of indices)."""
    total = 0.0
    for part in set_partitions(range(n)):
        k = len(part)
        term = (-1) ** (k - 1) * math.factorial(k - 1)
        for blk in part:
            term = term * moments[tuple(sorted(blk))]
        total = total + term
    return total


def _subsets(n):
    return [s for k in range(1, n + 1) for s in itertools.combinations(range(n), k)]


def truncated_moment(X) -> float:
    """Connected moment of the columns of X (samples x n) from the sample moments."""
    X = np.asarray(X, float)
    n = X.shape[1]
    mom = {s: float(np.mean(np.prod(X[:, list(s)], axis=1))) for s in _subsets(n)}
    return float(cumulant_from_moments(mom, n))


def n_point_truncated(chain: Chain, plaquettes, frame: int = 0, translate: bool = True):
    """Translation-averaged connected n-point function of F (n <= 4); returns (value, error)."""
    n = len(plaquettes)
    if n > 4:
        raise ValueError("n-point truncation is supported for n <= 4")
    if n < 1:
        raise ValueError("need at least one plaquette")
    tuples = translated_tuples(chain.geometry, plaquettes, frame) if translate else np.array([plaquettes])
    subs = _subsets(n)
    size, n_bins, tau = _chain_bins(chain)
    mom = np.zeros((n_bins, len(tuples), len(subs)))
    for i in range(n_bins):
        blk = chain.F[i * size:(i + 1) * size].astype(np.float64)
        X = blk[:, tuples]                                 # (size, n_trans, n)
        for j, s in enumerate(subs):
            mom[i, :, j] = np.prod(X[:, :, list(s)], axis=2).mean(axis=0)

    def f(m):
        return float(np.mean(cumulant_from_moments({s: m[:, j] for j, s in enumerate(subs)}, n)))
    val, err, _ = jackknife(mom, f)
    return float(val), float(err)


# -- effective mass ----------------------------------------------------------
@dataclass
class MassFit:
    m: float
    m_err: float
    amplitude: float
    window: tuple
    chi2_dof: float
    m_eff: np.ndarray
    m_eff_err: np.ndarray
    sign: int = 1

    @property
    def significance(self):
        return self.m / self.m_err if self.m_err > 0 else math.inf

    def to_dict(self):
        d = asdict(self)
        d["m_eff"] = [float(v) for v in self.m_eff]
        d["m_eff_err"] = [float(v) for v in self.m_eff_err]
        d["window"] = [int(w) for w in self.window]
        d["significance"] = float(self.significance)
        return d


def _m_eff(C):
    C = np.asarray(C, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(C[:-1] / C[1:])


def _fit_exp(t, C, err):
    def model(tt, a, m):
        return a * np.exp(-m * tt)
    m0 = float(np.clip(np.mean(_m_eff(C)), 1e-3, 20)) if len(C) > 1 else 1.0
    p, _ = curve_fit(model, t, C, p0=(C[0] * math.exp(m0 * t[0]), m0), sigma=err, absolute_sigma=True, maxfev=20000)
    chi2 = float(np.sum(((model(t, *p) - C) / err) ** 2))
    return p, chi2


def effective_mass(corr: CorrelatorEstimate, window=None, min_snr: float = 3.0) -> MassFit:
    """m_eff(t) = log(C(t)/C(t+1)) and a single-exponential fit A exp(-m t) over a window.

    Without an explicit window the fit runs from the second separation up to the last one with
    sign * C / err >= min_snr.  The sign is that of C at the start of the window: the F-F correlator
    at nonzero separation is negative (reflection reverses plaquette orientation), so the fit runs on
    -C there.  Errors on m come from refitting the leave-one-bin-out samples when present,
    otherwise from the fit covariance.
    """
    t, C, err = np.asarray(corr.t), np.asarray(corr.mean, float), np.asarray(corr.err, float)
    lo = 1 if len(t) > 2 else 0
    if window is not None:
        lo = int(np.searchsorted(t, window[0]))
    sign = -1 if lo < len(C) and C[lo] < 0 else 1
    C = sign * C
    samples = None if corr.samples is None else sign * np.asarray(corr.samples)
    m_eff = _m_eff(C)
    if samples is not None:
        loo = np.array([_m_eff(s) for s in samples])
        n = len(loo)
        m_eff_err = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            m_eff_err = np.sqrt((err[:-1] / C[:-1]) ** 2 + (err[1:] / C[1:]) ** 2)
    if window is None:
        hi = lo
        while hi + 1 < len(t) and C[hi + 1] > 0 and C[hi + 1] >= min_snr * err[hi + 1]:
            hi += 1
        window = (int(t[lo]), int(t[hi]))
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        raise FitError(f"fit window {window} holds fewer than two points")
    if np.any(C[sel] <= 0):
        raise FitError("non-positive correlator inside the fit window")
    if window[0] < t.min() or window[1] > t.max():
        raise FitError("fit window outside the measured range")
    safe_err = np.where(err[sel] > 0, err[sel], np.abs(C[sel]) * 1e-12 + 1e-300)
    p, chi2 = _fit_exp(t[sel].astype(float), C[sel], safe_err)
    dof = max(1, int(sel.sum()) - 2)
    if samples is not None:
        ms = []
        for s in samples:
            if np.any(s[sel] <= 0):
                continue
            ms.append(_fit_exp(t[sel].astype(float), s[sel], safe_err)[0][1])
        ms = np.array(ms)
        n = len(ms)
        m_err = float(np.sqrt((n - 1) / n * np.sum((ms - ms.mean()) ** 2))) if n > 1 else math.inf
    else:
        _, cov = curve_fit(lambda tt, a, m: a * np.exp(-m * tt), t[sel].astype(float), C[sel], p0=p,
                           sigma=safe_err, absolute_sigma=True)
        m_err = float(math.sqrt(max(cov[1, 1], 0.0)))
    if not math.isfinite(p[1]):
        raise FitError("fitted mass is not finite")
    return MassFit(float(p[1]), m_err, float(p[0]), tuple(window), chi2 / dof, m_eff, m_eff_err, sign)


def kernel_decay_rate(t, values) -> float:
    """Decay rate of exact kernel values from a straight line through log|value| against t."""
    t = np.asarray(t, float)
    v = np.abs(np.asarray(values, float))
    return float(-np.polyfit(t, np.log(v), 1)[0])


# -- Wilson loops ------------------------------------------------------------
def rectangle_loop(geometry: LatticeGeometry, base_site: int, width: int, height: int, axes=(0, 1)):
    """Oriented bond list (bond, sign) of the counter-clockwise boundary of a width x height rectangle."""
    lookup = geometry.cell_lookup(1)
    mu, nu = axes
    x = int(base_site)
    loop = []

    def step(x, ax, sgn):
        y = geometry.shift(x, ax, sgn)
        if y < 0:
            raise ValueError("loop leaves the box")
        tail = x if sgn > 0 else y
        loop.append((lookup[(tail, (ax,))], sgn))
        return y
    for _ in range(width):
        x = step(x, mu, 1)
    for _ in range(height):
        x = step(x, nu, 1)
    for _ in range(width):
        x = step(x, mu, -1)
    for _ in range(height):
        x = step(x, nu, -1)
    return loop


def loop_surface(geometry: LatticeGeometry, loop) -> np.ndarray:
    """Integer 2-chain c whose boundary is the given closed bond loop (d = 2 box)."""
    b = np.zeros(geometry.n_bonds)
    for bond, s in loop:
        b[bond] += s
    if np.any(np.abs(geometry.incidence(0).T @ b) > 1e-12):
        raise ValueError("loop is not closed")
    D = geometry.incidence(1).T.toarray()
    c, *_ = np.linalg.lstsq(D, b, rcond=None)
    ci = np.round(c)
    if np.max(np.abs(D @ ci - b)) > 1e-9:
        raise ValueError("loop does not bound an integer surface")
    return ci


def wilson_values(chain: Chain, surface: np.ndarray) -> np.ndarray:
    """W = prod over the loop of exp(i e0 A_b) = exp(i e0 <F, c>) for each measurement."""
    e0 = chain.couplings.e0 if chain.couplings is not None else 1.0
    nz = np.nonzero(surface)[0]
    phase = chain.F[:, nz].astype(np.float64) @ surface[nz]
    return np.exp(1j * e0 * phase)


def wilson_loop_correlation(chain: Chain, loop1, loop2, translations=None):
    """Re(<W1 conj W2> - <W1><conj W2>) with jackknife error; optionally averaged over common shifts."""
    g = chain.geometry
    c1, c2 = loop_surface(g, loop1), loop_surface(g, loop2)
    shifts = translations if translations is not None else [np.zeros(g.d, int)]
    W1s, W2s = [], []
    for off in shifts:
        sh = plaquette_shift(g, off)
        s1, s2 = np.zeros_like(c1), np.zeros_like(c2)
        ok = True
        for src, dst in ((c1, s1), (c2, s2)):
            for p in np.nonzero(src)[0]:
                if sh[p] < 0:
                    ok = False
                    break
                dst[sh[p]] = src[p]
        if ok:
            W1s.append(wilson_values(chain, s1))
            W2s.append(wilson_values(chain, s2))
    if not W1s:
        raise ValueError("no admissible translation of the loops")
    W1, W2 = np.stack(W1s, 1), np.stack(W2s, 1)
    size, n_bins, _ = _chain_bins(chain)
    prod = bin_means((W1 * np.conj(W2)).mean(axis=1), size, n_bins)
    a = bin_means(W1, size, n_bins)
    b = bin_means(np.conj(W2), size, n_bins)
    val, err, _ = jackknife((prod.real, a.real, a.imag, b.real, b.imag),
                            lambda p, ar, ai, br, bi: p - np.mean(ar * br - ai * bi))
    return float(val), float(err)


# -- large-field frequencies ---------------------------------------------------
def large_field_statistics(chain: Chain, thresholds, block_mask=None):
    """Fraction of blocks whose sup |Phi| (unitary gauge) reaches each threshold, with jackknife errors."""
    B = chain.block_max.astype(np.float64)
    if block_mask is not None:
        B = B[:, np.asarray(block_mask, bool)]
    size, n_bins, _ = choose_bins([chain.action, B.mean(axis=1)], len(B))
    rows = []
    for z in thresholds:
        frac = (B >= z).mean(axis=1)
        val, err, _ = jackknife(bin_means(frac, size, n_bins), lambda m: float(m))
        rows.append((float(z), float(val), float(err)))
    return rows
