"""Cross terms between separated large-field components and their polymer activities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polymers import TooManyCovers, mayer_polymerize, rectangular_paths
from .regions import RegionDecomposition


@dataclass
class LargeFieldActivities:
    sigma: dict
    f: dict | None
    pair_terms: dict


def sigma_and_f(T, regions: RegionDecomposition, phi, with_f: bool = True) -> LargeFieldActivities:
    """sigma(X) = 1/2 sum over ordered block pairs (B, B') in different Q-tilde components,
    joined by the rectangular paths X, of <phi_B, T_{B,L1} C_{L1} T_{L1,B'} phi_B'>.

    C_{L1} is the inverse of T restricted to Lambda1.  f(X) is the Mayer activity built from sigma.
    """
    part = regions.partition
    space = T.space
    phi = np.asarray(phi, float)
    cell_blocks = space.blocks(part)
    lam1 = regions.lambda1[cell_blocks]
    qt = ~lam1
    comps = regions.Qtilde_components
    comp_of = {}
    for i, comp in enumerate(comps):
        for b in comp:
            comp_of[b] = i
    sigma: dict = {}
    pairs: dict = {}
    if len(comps) >= 2 and lam1.any():
        M = T.matrix
        C = np.linalg.inv(M[np.ix_(lam1, lam1)])
        q_idx = np.nonzero(qt)[0]
        G = M[np.ix_(q_idx, np.nonzero(lam1)[0])] @ C @ M[np.ix_(np.nonzero(lam1)[0], q_idx)]
        qb = cell_blocks[q_idx]
        phq = phi[q_idx]
        blocks = sorted(comp_of)
        sel = {b: np.nonzero(qb == b)[0] for b in blocks}
        for a in blocks:
            for b in blocks:
                if comp_of[a] == comp_of[b]:
                    continue
                val = float(phq[sel[a]] @ G[np.ix_(sel[a], sel[b])] @ phq[sel[b]])
                X = rectangular_paths(part, a, b)
                pairs[(a, b)] = val
                sigma[X] = sigma.get(X, 0.0) + 0.5 * val
    f = None
    if with_f:
        try:
            f = mayer_polymerize(sigma) if sigma else {}
        except TooManyCovers:
            f = None
    return LargeFieldActivities(sigma, f, pairs)
