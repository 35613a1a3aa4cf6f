"""Power-series coefficients of the small-field interaction vertices.

Two fields enter: Phi on the inner cells (Omega1) and Psi on the outer ones.  Psi is indexed by
an extended range: j < n is the boundary field Psi1 on cell j and n + j is the source Psi2 on
bond cell j (the codifferential of the plaquette source).  A vertex function f(Phi, Psi) is
written as sum over ordered tuples a(xi; eta) prod Phi(xi_i) prod Psi(eta_j).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..lattice import BlockPartition, Polymer, tree_length_from_distances
from ..model import Couplings

FAMILIES = ("cosine", "quartic", "cubic", "log", "nn_cos", "linear_cos", "v_eps", "source")


@dataclass
class VertexSetup:
    """Kernel and masks on the cells of the inner region (sites first, then bonds)."""
    space: object
    kernel: np.ndarray
    couplings: Couplings
    omega0: np.ndarray
    phi_mask: np.ndarray
    psi_mask: np.ndarray
    T: np.ndarray | None = None

    def __post_init__(self):
        self.n = len(self.space)
        self.is_site = self.space.degree == 0
        self.is_bond = self.space.degree == 1
        g = self.space.geometry
        pos = {c: j for j, c in enumerate(self.space.cells)}
        ends = g.bond_endpoints
        tails, heads, bonds = [], [], []
        for j, (k, i) in enumerate(self.space.cells):
            if k != 1:
                continue
            t, h = pos.get((0, int(ends[i, 0]))), pos.get((0, int(ends[i, 1])))
            if t is None or h is None:
                continue
            bonds.append(j)
            tails.append(t)
            heads.append(h)
        self.bond_cells = np.array(bonds, int)
        self.bond_tail = np.array(tails, int)
        self.bond_head = np.array(heads, int)

    # slot masks
    def phi_slots(self, kind):
        m = self.phi_mask
        return m & (self.is_site if kind == "site" else self.is_bond if kind == "bond" else True)

    def psi_slots(self, kind):
        m = np.concatenate([self.psi_mask, np.zeros(self.n, bool)])
        if kind == "site":
            m[: self.n] &= self.is_site
        elif kind == "bond":
            m[: self.n] &= self.is_bond
        return m

    def source_slots(self):
        m = np.zeros(2 * self.n, bool)
        m[self.n:] = self.omega0 & self.is_bond
        return m

    def eta_cell(self, eta):
        eta = np.asarray(eta)
        return np.where(eta >= self.n, eta - self.n, eta)

    def v_eps_matrix(self):
        if self.T is None:
            raise ValueError("v_eps needs the quadratic form T on the region")
        K = self.kernel
        return K @ self.T @ K - np.eye(self.n)


@dataclass
class CoefficientSystem:
    family: str
    sectors: dict = field(default_factory=dict)

    def add(self, sector, xi, eta, values):
        xi = np.asarray(xi, int).reshape(len(values), sector[0])
        eta = np.asarray(eta, int).reshape(len(values), sector[1])
        keep = np.asarray(values) != 0
        self.sectors[sector] = (xi[keep], eta[keep], np.asarray(values, float)[keep])

    def evaluate(self, phi, psi) -> float:
        phi = np.asarray(phi, float)
        psi = np.asarray(psi, float)
        total = 0.0
        for (n, m), (xi, eta, a) in self.sectors.items():
            prod = a.copy()
            for j in range(n):
                prod *= phi[xi[:, j]]
            for j in range(m):
                prod *= psi[eta[:, j]]
            total += prod.sum()
        return float(total)

    def n_entries(self):
        return sum(len(v[2]) for v in self.sectors.values())

    def entry(self, xi, eta=()):
        sec = (len(xi), len(eta))
        if sec not in self.sectors:
            return 0.0
        X, E, a = self.sectors[sec]
        hit = np.all(X == np.asarray(xi, int), axis=1) & (np.all(E == np.asarray(eta, int), axis=1) if len(eta) else True)
        return float(a[hit].sum())


# -- family definitions --------------------------------------------------------------
def _cos_prefactor(e0, n, m, sign=1.0):
    l = n + m
    if l == 0 or l % 2:
        return 0.0
    return sign * e0 ** l * (-1) ** (l // 2) / (math.factorial(n) * math.factorial(m))


def _prod_columns(K, rows, xi, eta):
    """For each tuple, the vector over ``rows`` of prod_j K[row, xi_j] prod_j K[row, eta_j]."""
    out = np.ones((len(rows), xi.shape[0] if xi.ndim == 2 else eta.shape[0]))
    for j in range(xi.shape[1]):
        out *= K[np.ix_(rows, xi[:, j])]
    for j in range(eta.shape[1]):
        out *= K[np.ix_(rows, eta[:, j])]
    return out


def coefficient_values(family: str, setup: VertexSetup, sector, xi, eta) -> np.ndarray:
    """Coefficients of one family for a batch of tuples (xi: (N, n), eta: (N, m))."""
    n_tot, m = sector
    xi = np.atleast_2d(np.asarray(xi, int))
    eta = np.atleast_2d(np.asarray(eta, int))
    N = max(xi.shape[0], eta.shape[0])
    xi = xi.reshape(N, n_tot)
    eta = eta.reshape(N, m)
    c = setup.couplings
    K = setup.kernel
    n = setup.n
    e0 = c.e0
    cell_eta = setup.eta_cell(eta) if m else eta
    zeros = np.zeros(N)

    def slot_ok(xi_kind, eta_kind, xi_part=xi, eta_part=eta):
        ok = np.ones(N, bool)
        pm = setup.phi_slots(xi_kind)
        qm = setup.psi_slots(eta_kind)
        for j in range(xi_part.shape[1]):
            ok &= pm[xi_part[:, j]]
        for j in range(eta_part.shape[1]):
            ok &= qm[eta_part[:, j]]
        return ok

    if family in ("cosine", "quartic", "cubic", "log"):
        l = n_tot + m
        if family == "cosine":
            pref = _cos_prefactor(e0, n_tot, m)
            rows = np.nonzero(setup.omega0 & setup.is_bond)[0]
            kind = "bond"
        else:
            rows = np.nonzero(setup.omega0 & setup.is_site)[0]
            kind = "site"
            multi = math.factorial(l) / (math.factorial(n_tot) * math.factorial(m))
            if family == "quartic":
                pref = c.lam * multi if l == 4 else 0.0
            elif family == "cubic":
                pref = math.sqrt(2 * c.lam) * c.mu * multi if l == 3 else 0.0
            else:
                pref = (-1) ** (l + 1) / (l * c.rho0 ** l) * multi if l >= 1 else 0.0
        if pref == 0.0 or len(rows) == 0:
            return zeros
        vals = pref * _prod_columns(K, rows, xi, cell_eta).sum(axis=0)
        return np.where(slot_ok(kind, kind), vals, 0.0)

    if family in ("nn_cos", "linear_cos"):
        extra = 2 if family == "nn_cos" else 1
        n_cos = n_tot - extra
        if n_cos < 0:
            return zeros
        pref = _cos_prefactor(e0, n_cos, m, sign=-1.0)
        if pref == 0.0 or len(setup.bond_cells) == 0:
            return zeros
        b, t, h = setup.bond_cells, setup.bond_tail, setup.bond_head
        w = (setup.omega0[b] & setup.omega0[t] & setup.omega0[h]).astype(float)
        cos_part = _prod_columns(K, b, xi[:, extra:], cell_eta) * w[:, None]
        if family == "nn_cos":
            pre = K[np.ix_(t, xi[:, 0])] * K[np.ix_(h, xi[:, 1])]
        else:
            pre = K[np.ix_(t, xi[:, 0])] + K[np.ix_(h, xi[:, 0])]
        vals = pref * np.sum(pre * cos_part, axis=0)
        ok = slot_ok("site", "bond", xi[:, :extra], eta[:, :0]) & slot_ok("bond", "bond", xi[:, extra:], eta)
        return np.where(ok, vals, 0.0)

    if family == "v_eps":
        M = setup.v_eps_matrix()
        if (n_tot, m) == (2, 0):
            vals = M[xi[:, 0], xi[:, 1]]
        elif (n_tot, m) == (1, 1):
            vals = 2 * M[xi[:, 0], cell_eta[:, 0]]
        elif (n_tot, m) == (0, 2):
            vals = M[cell_eta[:, 0], cell_eta[:, 1]]
        else:
            return zeros
        return np.where(slot_ok(None, None), vals, 0.0)

    if family == "source":
        src = setup.source_slots()
        if (n_tot, m) == (1, 1):
            ok = setup.phi_slots("bond")[xi[:, 0]] & src[eta[:, 0]]
            vals = e0 * K[cell_eta[:, 0], xi[:, 0]]
        elif (n_tot, m) == (0, 2):
            ok = setup.psi_slots("bond")[eta[:, 0]] & src[eta[:, 1]]
            vals = e0 * K[cell_eta[:, 1], cell_eta[:, 0]]
        else:
            return zeros
        return np.where(ok, vals, 0.0)

    raise ValueError(f"unknown vertex family {family!r}")


def family_sectors(family: str, l_max: int):
    """Sectors (n, m) that can be non-zero, with total order n + m at most l_max (Phi slot count n)."""
    out = []
    for l in range(1, l_max + 1):
        for n in range(0, l + 1):
            out.append((n, l - n))
    if family == "quartic":
        return [s for s in out if sum(s) == 4]
    if family == "cubic":
        return [s for s in out if sum(s) == 3]
    if family == "cosine":
        return [s for s in out if sum(s) % 2 == 0]
    if family in ("nn_cos", "linear_cos"):
        extra = 2 if family == "nn_cos" else 1
        res = []
        for l in range(2, l_max + 1, 2):
            for n in range(0, l + 1):
                res.append((n + extra, l - n))
        return res
    if family == "v_eps":
        return [(2, 0), (1, 1), (0, 2)]
    if family == "source":
        return [(1, 1), (0, 2)]
    return out


def slot_kinds(family: str, sector) -> list:
    """Cell kind admitted by each slot of a sector: 'site', 'bond', 'any', or 'source' (extended Psi2 index)."""
    n, m = sector
    if family in ("quartic", "cubic", "log"):
        return ["site"] * (n + m)
    if family == "cosine":
        return ["bond"] * (n + m)
    if family in ("nn_cos", "linear_cos"):
        extra = 2 if family == "nn_cos" else 1
        return ["site"] * extra + ["bond"] * (n + m - extra)
    if family == "v_eps":
        return ["any"] * (n + m)
    if family == "source":
        return ["bond"] * (n + m - 1) + ["source"]
    raise ValueError(f"unknown vertex family {family!r}")


def decay_scan(family: str, setup: VertexSetup, dist: np.ndarray, rng: np.random.Generator, l_max: int = 6,
               n_per_sector: int = 2000, max_radius: int = 8):
    """Sample tuples of nearby admissible cells and return (tree length, coefficient) of the non-zero ones.

    Each tuple is drawn around a random anchor cell with every slot inside a random radius, so
    short and long tuples are both represented.  Phi slots use ``phi_mask``, Psi slots ``psi_mask``.
    """
    n = setup.n
    pools = {"site": setup.is_site, "bond": setup.is_bond, "any": np.ones(n, bool),
             "source": setup.omega0 & setup.is_bond}
    lengths, values = [], []
    for sector in family_sectors(family, l_max):
        n_phi, m = sector
        if n_phi + m == 0 or n_phi + m > l_max and family not in ("nn_cos", "linear_cos"):
            continue
        if family in ("nn_cos", "linear_cos") and n_phi + m - (2 if family == "nn_cos" else 1) > l_max - 2:
            continue
        kinds = slot_kinds(family, sector)
        masks = [pools[k] & (setup.phi_mask if j < n_phi else (setup.psi_mask if k != "source" else True))
                 for j, k in enumerate(kinds)]
        if any(not mk.any() for mk in masks):
            continue
        anchors = rng.integers(0, n, n_per_sector)
        radii = rng.integers(0, max_radius + 1, n_per_sector)
        cells = np.empty((n_per_sector, n_phi + m), int)
        keep = np.ones(n_per_sector, bool)
        for i in range(n_per_sector):
            near = dist[anchors[i]] <= radii[i]
            for j, mk in enumerate(masks):
                opts = np.nonzero(near & mk)[0]
                if len(opts) == 0:
                    keep[i] = False
                    break
                cells[i, j] = rng.choice(opts)
        cells = cells[keep]
        xi = cells[:, :n_phi]
        eta = cells[:, n_phi:] + n * np.array([k == "source" for k in kinds[n_phi:]], int)
        vals = coefficient_values(family, setup, sector, xi, eta)
        for i in np.nonzero(vals)[0]:
            lengths.append(tuple_tree_length(cells[i], dist))
            values.append(vals[i])
    return np.array(lengths), np.array(values)


def _tuples(cands, k):
    rows = list(itertools.product(cands, repeat=k))
    return np.array(rows, int).reshape(len(rows), k)


def extract_coefficients(family: str, setup: VertexSetup, l_max: int = 4, xi_cells=None, eta_cells=None,
                         max_tuples: int = 5_000_000) -> CoefficientSystem:
    """Enumerate all tuples over the given candidate cells and compute the coefficients.

    ``xi_cells`` restricts Phi slots and ``eta_cells`` (extended Psi indices) restricts Psi slots.
    """
    xi_c = np.nonzero(setup.phi_mask)[0] if xi_cells is None else np.asarray(xi_cells, int)
    if eta_cells is None:
        eta_c = np.concatenate([np.nonzero(setup.psi_mask)[0], setup.n + np.nonzero(setup.omega0 & setup.is_bond)[0]])
    else:
        eta_c = np.asarray(eta_cells, int)
    system = CoefficientSystem(family)
    for sector in family_sectors(family, l_max):
        n, m = sector
        count = len(xi_c) ** n * len(eta_c) ** m
        if count == 0:
            continue
        if count > max_tuples:
            raise RuntimeError(f"sector {sector} needs {count} tuples; restrict the candidate cells")
        xi = _tuples(xi_c, n)
        eta = _tuples(eta_c, m)
        XI = np.repeat(xi, len(eta), axis=0)
        ETA = np.tile(eta, (len(xi), 1))
        system.add(sector, XI, ETA, coefficient_values(family, setup, sector, XI, ETA))
    return system


def vertex_function(family: str, setup: VertexSetup, phi, psi) -> float:
    """Direct evaluation of the vertex whose series the coefficients describe."""
    n = setup.n
    c = setup.couplings
    K = setup.kernel
    phi = np.where(setup.phi_mask, np.asarray(phi, float), 0.0)
    psi = np.asarray(psi, float)
    psi1 = np.where(setup.psi_mask, psi[:n], 0.0)
    psi2 = np.where(setup.omega0 & setup.is_bond, psi[n:], 0.0)
    full = K @ (phi + psi1)
    kphi = K @ phi
    sites = setup.omega0 & setup.is_site
    bonds = setup.omega0 & setup.is_bond
    if family == "cosine":
        return float(np.sum(np.cos(c.e0 * full[bonds]) - 1.0))
    if family == "quartic":
        return float(c.lam * np.sum(full[sites] ** 4))
    if family == "cubic":
        return float(math.sqrt(2 * c.lam) * c.mu * np.sum(full[sites] ** 3))
    if family == "log":
        return float(np.sum(np.log1p(full[sites] / c.rho0)))
    if family in ("nn_cos", "linear_cos"):
        b, t, h = setup.bond_cells, setup.bond_tail, setup.bond_head
        w = setup.omega0[b] & setup.omega0[t] & setup.omega0[h]
        one_m_cos = 1.0 - np.cos(c.e0 * full[b])
        pre = kphi[t] * kphi[h] if family == "nn_cos" else kphi[t] + kphi[h]
        return float(np.sum(np.where(w, pre * one_m_cos, 0.0)))
    if family == "v_eps":
        x = phi + psi1
        return float(x @ setup.v_eps_matrix() @ x)
    if family == "source":
        return float(c.e0 * np.sum(full[bonds] * psi2[bonds]))
    raise ValueError(f"unknown vertex family {family!r}")


# -- norms ---------------------------------------------------------------------------------
def tuple_tree_length(cells, dist: np.ndarray) -> float:
    u = np.unique(np.asarray(cells, int))
    if len(u) <= 1:
        return 0.0
    return tree_length_from_distances(dist[np.ix_(u, u)])


def weight_norm(system: CoefficientSystem, dist: np.ndarray | None = None, phi_weight: float = 1.0,
                psi_weight: float = 1.0, mass: float = 0.0, eta_to_cell=None) -> float:
    """sum over sectors of max over pinned slot and point of sum e^(mass t) phi_w^n psi_w^m |a|.

    t is the minimal tree length through the cells of the tuple; ``eta_to_cell`` maps Psi
    indices to cells for that purpose.
    """
    total = 0.0
    for (n, m), (xi, eta, a) in system.sectors.items():
        if len(a) == 0:
            continue
        w = phi_weight ** n * psi_weight ** m * np.abs(a)
        if mass and dist is not None:
            ecell = eta_to_cell(eta) if (eta_to_cell is not None and m) else eta
            t = np.array([tuple_tree_length(np.concatenate([xi[i], ecell[i]]), dist) for i in range(len(a))])
            w = w * np.exp(mass * t)
        best = 0.0
        for s in range(n):
            pts, inv = np.unique(xi[:, s], return_inverse=True)
            best = max(best, np.bincount(inv, weights=w).max())
        for s in range(m):
            ecell = eta_to_cell(eta[:, s]) if eta_to_cell is not None else eta[:, s]
            pts, inv = np.unique(ecell, return_inverse=True)
            best = max(best, np.bincount(inv, weights=w).max())
        if n + m == 0:
            best = float(np.sum(w))
        total += best
    return float(total)


def shift_coefficients(system: CoefficientSystem) -> CoefficientSystem:
    """H(Psi) -> H#(Psi, phi) = H(Psi + phi).

    Input sectors (0, k) hold coefficients of Psi only; the output sector (p, q) has p Psi slots
    (first group) and q phi slots (second group), obtained by choosing which positions keep Psi.
    """
    out: dict = {}
    for (n, k), (xi, eta, a) in system.sectors.items():
        if n != 0:
            raise ValueError("shift expects a system in the second field only")
        for keep in itertools.product((True, False), repeat=k):
            idx_keep = [j for j in range(k) if keep[j]]
            idx_shift = [j for j in range(k) if not keep[j]]
            sec = (len(idx_keep), len(idx_shift))
            X = eta[:, idx_keep]
            E = eta[:, idx_shift]
            out.setdefault(sec, []).append((X, E, a))
    res = CoefficientSystem(system.family + "#")
    for sec, parts in out.items():
        X = np.concatenate([p[0] for p in parts])
        E = np.concatenate([p[1] for p in parts])
        A = np.concatenate([p[2] for p in parts])
        # merge duplicate tuples
        keys = np.concatenate([X, E], axis=1)
        if keys.shape[1]:
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            A = np.bincount(inv.ravel(), weights=A, minlength=len(uniq))
            X, E = uniq[:, : sec[0]], uniq[:, sec[0]:]
        else:
            A = np.array([A.sum()])
            X, E = np.zeros((1, 0), int), np.zeros((1, 0), int)
        res.add(sec, X, E, A)
    return res


def polymer_of_support(cells, space, partition: BlockPartition, omega1_blocks) -> Polymer | None:
    """Block cover of the cells of a tuple; None when it misses Omega1."""
    blocks = frozenset(int(b) for b in space.blocks(partition)[np.asarray(cells, int)])
    if not any(omega1_blocks[b] for b in blocks):
        return None
    return Polymer(blocks, partition.grid)
