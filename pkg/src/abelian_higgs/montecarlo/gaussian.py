"""Exact covariance of F = dA for the massive Gaussian gauge field, used to validate the sampler."""
from __future__ import annotations

import numpy as np

from ..lattice import LatticeGeometry
from .analysis import CorrelatorEstimate, plaquette_shift, translated_tuples, interior_plaquettes, row_sums


def field_strength_covariance(geometry: LatticeGeometry, mA2: float) -> np.ndarray:
    """d (delta d + m_A^2)^-1 d* on plaquettes, with delta d = d1^T d1 on bonds."""
    D = geometry.incidence(1).toarray()
    K = D.T @ D + mA2 * np.eye(geometry.n_bonds)
    return D @ np.linalg.solve(K, D.T)


def exact_profile(geometry: LatticeGeometry, mA2: float, separations, axis=0, frame=0, base=None) -> np.ndarray:
    """Translation average of the exact covariance over the same pairs the estimator uses."""
    cov = field_strength_covariance(geometry, mA2)
    inner = interior_plaquettes(geometry, frame)
    base = int(np.nonzero(inner)[0][0]) if base is None else base
    out = []
    for t in separations:
        off = np.zeros(geometry.d, int)
        off[axis] = t
        partner = plaquette_shift(geometry, off)[base]
        pr = translated_tuples(geometry, [base, partner], frame)
        out.append(float(np.mean(cov[pr[:, 0], pr[:, 1]])))
    return np.array(out)


def exact_projected(geometry: LatticeGeometry, mA2: float, separations, axis=0, frame=0) -> np.ndarray:
    """Exact counterpart of the zero-momentum slice-sum correlator."""
    cov = field_strength_covariance(geometry, mA2)
    coords, M, counts = row_sums(geometry, np.eye(geometry.n_plaquettes), axis, frame)
    S = M.T @ cov @ M
    n = len(coords)
    return np.array([np.mean(np.diag(S, t)) / counts.mean() for t in separations])


def compare_to_exact(est: CorrelatorEstimate, exact, n_sigma: float = 3.0):
    """Rows (t, measured, error, exact, pull, within) and the overall pass flag."""
    rows = []
    for t, m, e, x in zip(est.t, est.mean, est.err, exact):
        pull = (m - x) / e if e > 0 else np.inf
        rows.append({"t": int(t), "mc": float(m), "err": float(e), "exact": float(x), "pull": float(pull),
                     "within": bool(abs(pull) <= n_sigma)})
    return rows, all(r["within"] for r in rows)
