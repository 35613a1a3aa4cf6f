"""Polymer activities on small block sets: Mayer grouping, two-stage grouping and cluster logarithms.

Block sets are bit masks over a local enumeration of the blocks involved.  Collections of
polymers are grouped into clusters whose members overlap (share a block); distinct clusters
then have disjoint supports, which is the compatibility used everywhere here.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..lattice import BlockPartition

MAX_COVERS = 10 ** 7


class TooManyCovers(RuntimeError):
    pass


def _as_set(s) -> frozenset:
    return s.blocks if hasattr(s, "blocks") else frozenset(s)


class _Local:
    """Map a finite set of global block ids onto bit positions."""

    def __init__(self, polymer_sets):
        blocks = sorted(set().union(*polymer_sets)) if polymer_sets else []
        self.blocks = blocks
        self.pos = {b: i for i, b in enumerate(blocks)}
        self.n = len(blocks)
        if 3 ** self.n > MAX_COVERS:
            raise TooManyCovers(f"{self.n} blocks exceed the cover enumeration guard")

    def mask(self, s) -> int:
        m = 0
        for b in s:
            m |= 1 << self.pos[b]
        return m

    def unmask(self, m: int) -> frozenset:
        return frozenset(self.blocks[i] for i in range(self.n) if m >> i & 1)


def _zeta(vals, n):
    """Sum over subsets: out[U] = sum_{W subset U} vals[W]."""
    out = np.array(vals, dtype=float)
    for i in range(n):
        bit = 1 << i
        idx = np.arange(len(out))
        sel = idx[(idx & bit) != 0]
        out[sel] += out[sel ^ bit]
    return out


def _mobius(vals, n):
    """Inverse of _zeta."""
    out = np.array(vals, dtype=float)
    for i in range(n):
        bit = 1 << i
        idx = np.arange(len(out))
        sel = idx[(idx & bit) != 0]
        out[sel] -= out[sel ^ bit]
    return out


def _hard_core(weights: dict, n: int) -> np.ndarray:
    """Z(U) = sum over collections of pairwise disjoint polymers inside U of the product of weights."""
    by_low = {}
    for m, w in weights.items():
        low = (m & -m).bit_length() - 1
        by_low.setdefault(low, []).append((m, w))
    Z = np.zeros(1 << n)
    Z[0] = 1.0
    for U in range(1, 1 << n):
        low = (U & -U).bit_length() - 1
        acc = Z[U & ~(1 << low)]
        for m, w in by_low.get(low, ()):
            if m & U == m:
                acc += w * Z[U & ~m]
        Z[U] = acc
    return Z


def _free(weights: dict, n: int) -> np.ndarray:
    """Z(U) = prod over polymers inside U of (1 + w): any collection of distinct polymers."""
    logs = np.zeros(1 << n)
    for m, w in weights.items():
        if w <= -1:
            raise ValueError("free-gas weight must exceed -1")
        logs[m] += math.log1p(w)
    return np.exp(_zeta(logs, n))


def _reachable(masks):
    """All unions of overlap-connected collections of the given masks."""
    masks = list(set(masks))
    reach = set(masks)
    frontier = list(masks)
    while frontier:
        nxt = []
        for U in frontier:
            for m in masks:
                if m & U and (m | U) not in reach:
                    reach.add(m | U)
                    nxt.append(m | U)
        frontier = nxt
    return reach


def _connected_from_union(F: np.ndarray, n: int) -> np.ndarray:
    """Split F(U) (collections with union exactly U) into overlap-connected parts K.

    F(U) = sum_{Y contains min(U), Y subset U} K(Y) F(U \\ Y), F(empty) = 1.
    """
    K = np.zeros(1 << n)
    for U in range(1, 1 << n):
        low = U & -U
        rest = U ^ low
        acc = F[U]
        sub = rest
        while True:
            Y = sub | low
            if Y != U:
                acc -= K[Y] * F[U ^ Y]
            if sub == 0:
                break
            sub = (sub - 1) & rest
        K[U] = acc
    return K


def connected_activities(families, kinds=None) -> dict:
    """Weight of each connected union of polymers drawn from several families.

    ``families`` is a list of dicts mapping block sets to weights.  Within a ``hard`` family the
    chosen polymers are pairwise disjoint; within a ``free`` family any distinct polymers may be
    chosen.  Polymers of different families may overlap freely.  The result maps each union Z
    of an overlap-connected collection to the sum over such collections of the product of weights.
    """
    kinds = kinds or ["hard"] * len(families)
    sets = [_as_set(s) for fam in families for s in fam]
    loc = _Local(sets)
    n = loc.n
    G = np.ones(1 << n)
    masks = []
    for fam, kind in zip(families, kinds):
        w = {}
        for s, val in fam.items():
            m = loc.mask(_as_set(s))
            if m == 0:
                continue
            w[m] = w.get(m, 0.0) + float(val)
            masks.append(m)
        G *= _hard_core(w, n) if kind == "hard" else _free(w, n)
    F = _mobius(G, n)
    K = _connected_from_union(F, n)
    return {loc.unmask(U): float(K[U]) for U in sorted(_reachable(masks))}


def mayer_polymerize(H: dict) -> dict:
    """K(Y) = sum over overlap-connected collections of distinct polymers with union Y of prod (e^H - 1).

    Then the sum over collections of disjoint Y of prod K(Y) equals exp(sum_X H(X)).
    """
    return connected_activities([{_as_set(X): math.expm1(h) for X, h in H.items()}], ["free"])


def group_components(stage1: list, stage2: list) -> dict:
    """Two-stage grouping.

    ``stage1`` is a list of hard-core families (for instance Mayer polymers Y and small-field
    pieces P); their overlap-connected unions Z receive the summed product weight K'(Z).
    ``stage2`` is a list of hard-core families (for instance X and Q-tilde components) grouped
    together with the Z of stage one into components C with weight K#(C).
    """
    Kp = connected_activities(stage1) if stage1 else {}
    return connected_activities(list(stage2) + [Kp])


def partition_function(K: dict) -> float:
    """Sum over collections of pairwise disjoint polymers of the product of activities."""
    loc = _Local([_as_set(s) for s in K])
    w = {}
    for s, val in K.items():
        m = loc.mask(_as_set(s))
        w[m] = w.get(m, 0.0) + val
    return float(_hard_core(w, loc.n)[-1])


def ursell(sets) -> float:
    """Truncated coefficient: sum over connected spanning subgraphs of the incompatibility graph of (-1)^edges."""
    n = len(sets)
    if n == 1:
        return 1.0
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2) if sets[i] & sets[j]]
    total = 0
    for k in range(n - 1, len(edges) + 1):
        for sub in itertools.combinations(edges, k):
            parent = list(range(n))

            def find(a):
                while parent[a] != a:
                    parent[a] = parent[parent[a]]
                    a = parent[a]
                return a
            comps = n
            for i, j in sub:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
                    comps -= 1
            if comps == 1:
                total += (-1) ** k
    return float(total)


def cluster_log(K: dict, n_max: int | None = 4) -> dict:
    """E(C) with log sum_{disjoint} prod K = sum_C E(C), indexed by the union C of each cluster.

    With an integer ``n_max`` the cluster series is summed over clusters of at most n_max
    polymers with Ursell coefficients.  With ``n_max=None`` the full series is resummed exactly:
    E(C) is the Moebius inversion over block subsets of log Z restricted to subsets.
    """
    keys = [_as_set(s) for s in K]
    if n_max is None:
        loc = _Local(keys)
        w = {}
        for s, val in K.items():
            m = loc.mask(_as_set(s))
            w[m] = w.get(m, 0.0) + val
        Z = _hard_core(w, loc.n)
        if np.any(Z <= 0):
            raise ValueError("partition function not positive on a subset; the logarithm is undefined")
        E = _mobius(np.log(Z), loc.n)
        return {loc.unmask(U): float(E[U]) for U in sorted(_reachable(list(w)))}
    items = [(_as_set(s), float(K[s])) for s in K]
    P = len(items)
    out: dict = {}
    count = 0
    for size in range(1, n_max + 1):
        for combo in itertools.combinations_with_replacement(range(P), size):
            count += 1
            if count > MAX_COVERS:
                raise TooManyCovers("too many clusters for the truncated series")
            sets = [items[i][0] for i in combo]
            phi = ursell(sets)
            if phi == 0.0:
                continue
            mult = 1
            for _, grp in itertools.groupby(combo):
                mult *= math.factorial(len(list(grp)))
            val = phi / mult * math.prod(items[i][1] for i in combo)
            C = frozenset().union(*sets)
            out[C] = out.get(C, 0.0) + val
    return out


# -- geometry helpers for large-field cross terms --------------------------------
def rectangular_paths(partition: BlockPartition, a: int, b: int) -> frozenset:
    """Union of the axis-ordered block paths from block a to block b, over all d! axis orders."""
    ca = partition.block_coords(a).astype(int)
    cb = partition.block_coords(b).astype(int)
    d = len(ca)
    out = set()
    for order in itertools.permutations(range(d)):
        cur = ca.copy()
        out.add(tuple(cur))
        for ax in order:
            step = 1 if cb[ax] > cur[ax] else -1
            while cur[ax] != cb[ax]:
                cur[ax] += step
                out.add(tuple(cur))
    return frozenset(int(np.ravel_multi_index(c, partition.grid)) for c in out)
