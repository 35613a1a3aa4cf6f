"""Cubic lattice geometry with zero (Dirichlet) boundary, discrete forms and block partitions.

Cells of degree 0, 1, 2, 3 are sites, bonds, plaquettes and cubes.  A cell of
degree k is labelled by its base site x and an increasing tuple of k axes; it
exists when every corner lies inside the box {0..L-1}^d.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial.distance import cdist

METRICS = {"sup": "chebyshev", "l1": "cityblock"}


class GeometryError(ValueError):
    pass


class LatticeGeometry:
    """Box {0..L-1}^d; fields vanish outside the box."""

    def __init__(self, d: int, L: int, boundary: str = "dirichlet"):
        if int(d) != d or d < 1 or d > 4:
            raise GeometryError(f"dimension must be an integer in 1..4, got {d}")
        if int(L) != L or L < 2:
            raise GeometryError(f"side length must be an integer >= 2, got {L}")
        if boundary != "dirichlet":
            raise GeometryError(f"only dirichlet boundary is supported, got {boundary!r}")
        self.d = int(d)
        self.L = int(L)
        self.boundary = boundary
        self.shape = (self.L,) * self.d
        self.coords = np.array(list(itertools.product(range(self.L), repeat=self.d)), dtype=np.int64)
        self._cells = {k: self._build_cells(k) for k in range(0, min(self.d, 3) + 1)}

    def __repr__(self):
        return f"LatticeGeometry(d={self.d}, L={self.L}, boundary={self.boundary!r})"

    def __eq__(self, other):
        return isinstance(other, LatticeGeometry) and (self.d, self.L, self.boundary) == (
            other.d, other.L, other.boundary)

    def __hash__(self):
        return hash((self.d, self.L, self.boundary))

    # -- indexing -----------------------------------------------------------
    def site_index(self, x) -> int | np.ndarray:
        x = np.asarray(x)
        return np.ravel_multi_index(tuple(np.moveaxis(x, -1, 0)), self.shape)

    def _build_cells(self, k):
        base, axes = [], []
        for ax in itertools.combinations(range(self.d), k):
            ok = np.all(self.coords[:, list(ax)] < self.L - 1, axis=1) if k else np.ones(len(self.coords), bool)
            idx = np.nonzero(ok)[0]
            base.append(idx)
            axes.append(np.tile(np.array(ax, dtype=np.int64), (len(idx), 1)))
        base = np.concatenate(base) if base else np.zeros(0, np.int64)
        axes = np.concatenate(axes) if axes else np.zeros((0, k), np.int64)
        order = np.lexsort((tuple(axes.T) if k else ()) + (base,)) if len(base) else np.zeros(0, np.int64)
        return base[order], axes[order].reshape(len(base), k)

    def n_cells(self, k: int) -> int:
        if k not in self._cells:
            return 0
        return len(self._cells[k][0])

    @property
    def n_sites(self):
        return self.n_cells(0)

    @property
    def n_bonds(self):
        return self.n_cells(1)

    @property
    def n_plaquettes(self):
        return self.n_cells(2)

    def cell_base(self, k: int) -> np.ndarray:
        """Index of the base site of every k-cell."""
        return self._cells[k][0]

    def cell_axes(self, k: int) -> np.ndarray:
        return self._cells[k][1]

    def cell_lookup(self, k: int) -> dict:
        base, axes = self._cells[k]
        return {(int(b), tuple(int(a) for a in ax)): i for i, (b, ax) in enumerate(zip(base, axes))}

    def shift(self, site: int, axis: int, step: int = 1) -> int:
        x = self.coords[site].copy()
        x[axis] += step
        if x[axis] < 0 or x[axis] >= self.L:
            return -1
        return int(self.site_index(x))

    @cached_property
    def bond_endpoints(self) -> np.ndarray:
        """(n_bonds, 2) array of (tail, head) with head = tail + e_mu."""
        base, axes = self._cells[1]
        stride = np.array([self.L ** (self.d - 1 - m) for m in range(self.d)])
        return np.stack([base, base + stride[axes[:, 0]]], axis=1)

    def cell_corners(self, k: int) -> np.ndarray:
        """(n_cells, 2**k) site indices of the corners of each k-cell."""
        base, axes = self._cells[k]
        stride = np.array([self.L ** (self.d - 1 - m) for m in range(self.d)])
        corners = []
        for eps in itertools.product((0, 1), repeat=k):
            off = np.zeros(len(base), np.int64)
            for j, e in enumerate(eps):
                if e:
                    off += stride[axes[:, j]]
            corners.append(base + off)
        return np.stack(corners, axis=1) if corners else base[:, None]

    def missing_neighbours(self) -> np.ndarray:
        """Number of nearest neighbours of each site that lie outside the box."""
        x = self.coords
        return np.sum(x == 0, axis=1) + np.sum(x == self.L - 1, axis=1)

    # -- incidence ----------------------------------------------------------
    @cached_property
    def _incidence(self):
        out = {}
        for k in range(0, min(self.d, 3)):
            out[k] = self._build_incidence(k)
        return out

    def _build_incidence(self, k):
        """Sparse matrix of d acting on k-forms: shape (n_{k+1}, n_k)."""
        base, axes = self._cells[k + 1]
        lookup = self.cell_lookup(k)
        rows, cols, vals = [], [], []
        stride = np.array([self.L ** (self.d - 1 - m) for m in range(self.d)])
        for c, (b, ax) in enumerate(zip(base, axes)):
            ax = tuple(int(a) for a in ax)
            for j, mu in enumerate(ax):
                face = ax[:j] + ax[j + 1:]
                sign = (-1) ** j
                # face at x + e_mu carries +sign, face at x carries -sign
                rows += [c, c]
                cols += [lookup[(int(b + stride[mu]), face)], lookup[(int(b), face)]]
                vals += [sign, -sign]
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(base), self.n_cells(k)), dtype=float)

    def incidence(self, k: int) -> sp.csr_matrix:
        """Matrix of the exterior derivative on k-forms."""
        if k < 0 or k >= min(self.d, 3):
            raise GeometryError(f"no exterior derivative on {k}-forms in d={self.d}")
        return self._incidence[k]

    def laplacian(self, kind: str = "dirichlet") -> sp.csr_matrix:
        """Positive site Laplacian.

        ``interior`` is delta d over bonds inside the box.  ``dirichlet`` also counts
        the bonds leading to the (zero) exterior, so its diagonal is 2d everywhere.
        """
        d0 = self.incidence(0)
        lap = (d0.T @ d0).tocsr()
        if kind == "interior":
            return lap
        if kind == "dirichlet":
            return (lap + sp.diags(self.missing_neighbours().astype(float))).tocsr()
        raise GeometryError(f"unknown laplacian kind {kind!r}")

    # -- distances ----------------------------------------------------------
    def cell_distance(self, cells_a, cells_b=None, metric: str = "sup") -> np.ndarray:
        """Infimum site distance between cells; cells are (degree, index) pairs."""
        pa = self._corner_points(cells_a)
        pb = pa if cells_b is None else self._corner_points(cells_b)
        return _set_distance(pa, pb, metric)

    def _corner_points(self, cells):
        pts = []
        for k, i in cells:
            pts.append(self.coords[self.cell_corners(k)[i]])
        return pts

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        return {"d": self.d, "L": self.L, "boundary": self.boundary}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["d"]), int(data["L"]), data.get("boundary", "dirichlet"))

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))


def _set_distance(pa, pb, metric):
    m = METRICS[metric]
    out = np.full((len(pa), len(pb)), np.inf)
    # group by number of corners to vectorize
    for na in {len(p) for p in pa}:
        ia = [i for i, p in enumerate(pa) if len(p) == na]
        A = np.stack([pa[i] for i in ia])
        for nb in {len(p) for p in pb}:
            ib = [j for j, p in enumerate(pb) if len(p) == nb]
            B = np.stack([pb[j] for j in ib])
            best = np.full((len(ia), len(ib)), np.inf)
            for s in range(na):
                for t in range(nb):
                    best = np.minimum(best, cdist(A[:, s], B[:, t], metric=m))
            out[np.ix_(ia, ib)] = best
    return out


# -- forms ----------------------------------------------------------------
@dataclass
class Form:
    geometry: LatticeGeometry
    degree: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.geometry.n_cells(self.degree)
        if self.values.shape != (n,):
            raise GeometryError(f"{self.degree}-form needs {n} values, got shape {self.values.shape}")

    def _check(self, other):
        if not isinstance(other, Form) or other.degree != self.degree or other.geometry != self.geometry:
            raise GeometryError("forms live on different spaces")

    def __add__(self, other):
        self._check(other)
        return Form(self.geometry, self.degree, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return Form(self.geometry, self.degree, self.values - other.values)

    def __mul__(self, s):
        return Form(self.geometry, self.degree, self.values * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def inner(self, other) -> float:
        self._check(other)
        return float(self.values @ other.values)

    def norm2(self) -> float:
        return float(self.values @ self.values)

    @classmethod
    def zeros(cls, geometry, degree):
        return cls(geometry, degree, np.zeros(geometry.n_cells(degree)))

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([np.arange(len(self.values)), self.values]),
                   delimiter=",", header="index,value", comments="", fmt=["%d", "%.17g"])

    @classmethod
    def from_csv(cls, geometry, degree, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        vals = np.zeros(geometry.n_cells(degree))
        vals[data[:, 0].astype(int)] = data[:, 1]
        return cls(geometry, degree, vals)

    def save(self, path):
        np.save(path, self.values)

    @classmethod
    def load(cls, geometry, degree, path):
        return cls(geometry, degree, np.load(path))


def exterior_derivative(form: Form) -> Form:
    g = form.geometry
    return Form(g, form.degree + 1, g.incidence(form.degree) @ form.values)


def codifferential(form: Form) -> Form:
    """Adjoint of the exterior derivative for the plain sum inner product."""
    g = form.geometry
    if form.degree == 0:
        raise GeometryError("codifferential of a 0-form is not defined")
    return Form(g, form.degree - 1, g.incidence(form.degree - 1).T @ form.values)


def quadratic_forms(geometry: LatticeGeometry, rho=None, A=None, laplacian: str = "dirichlet") -> dict:
    """Gradient energy <rho, -Lap rho>, curl energy |dA|^2 and divergence energy |delta A|^2."""
    out = {}
    if rho is not None:
        rho = np.asarray(rho, float)
        out["gradient"] = float(rho @ (geometry.laplacian(laplacian) @ rho))
    if A is not None:
        A = np.asarray(A, float)
        if geometry.d >= 2:
            dA = geometry.incidence(1) @ A
            out["curl"] = float(dA @ dA)
        dd = geometry.incidence(0).T @ A
        out["divergence"] = float(dd @ dd)
    return out


# -- trees ----------------------------------------------------------------
def tree_length_from_distances(D: np.ndarray) -> float:
    """Length of a minimal spanning tree for a symmetric distance matrix."""
    D = np.asarray(D, float)
    n = len(D)
    if n == 0:
        raise ValueError("minimal tree of an empty set")
    if n == 1:
        return 0.0
    tiny = 1e-300
    W = np.where((D == 0) & ~np.eye(n, dtype=bool), tiny, D)
    np.fill_diagonal(W, 0.0)
    mst = minimum_spanning_tree(W)
    vals = mst.data
    return float(vals[vals > 1e-200].sum())


def minimal_tree_length(points, metric: str = "l1") -> float:
    """Length of the shortest tree joining a finite point set."""
    pts = np.asarray(points, float)
    if pts.size == 0:
        raise ValueError("minimal tree of an empty set")
    if pts.ndim == 1:
        pts = pts[:, None]
    pts = np.unique(pts, axis=0)
    if len(pts) == 1:
        return 0.0
    return tree_length_from_distances(cdist(pts, pts, metric=METRICS[metric]))


# -- blocks ---------------------------------------------------------------
class BlockPartition:
    """Cubes of side r; each cell belongs to the block of its base site."""

    def __init__(self, geometry: LatticeGeometry, r: int):
        if int(r) != r or r < 1:
            raise GeometryError(f"block side must be a positive integer, got {r}")
        self.geometry = geometry
        self.r = int(r)
        self.grid = tuple(-(-geometry.L // self.r) for _ in range(geometry.d))
        self.n_blocks = int(np.prod(self.grid))
        bc = geometry.coords // self.r
        self.site_block = np.ravel_multi_index(tuple(bc.T), self.grid)

    def cell_block(self, k: int) -> np.ndarray:
        return self.site_block[self.geometry.cell_base(k)]

    def block_coords(self, b) -> np.ndarray:
        return np.array(np.unravel_index(b, self.grid)).T

    def sites_in(self, b: int) -> np.ndarray:
        return np.nonzero(self.site_block == b)[0]

    def mask_to_grid(self, mask) -> np.ndarray:
        return np.asarray(mask, bool).reshape(self.grid)

    def block_distance(self, a: int, b: int) -> int:
        ca, cb = self.block_coords(a), self.block_coords(b)
        return int(np.max(np.abs(ca - cb)))


def connect_blocks(mask_or_blocks, grid: Sequence[int] | None = None) -> list[frozenset]:
    """Connected components of a block set; blocks touching at a corner are connected."""
    if grid is None:
        grid_mask = np.asarray(mask_or_blocks, bool)
        grid = grid_mask.shape
    else:
        grid_mask = np.zeros(int(np.prod(grid)), bool)
        grid_mask[list(mask_or_blocks)] = True
        grid_mask = grid_mask.reshape(grid)
    structure = ndimage.generate_binary_structure(len(grid), len(grid))
    labels, n = ndimage.label(grid_mask, structure=structure)
    flat = labels.ravel()
    return [frozenset(np.nonzero(flat == i)[0].tolist()) for i in range(1, n + 1)]


@dataclass(frozen=True)
class Polymer:
    blocks: frozenset
    grid: tuple = field(compare=False)

    @property
    def size(self) -> int:
        return len(self.blocks)

    @property
    def components(self) -> list[frozenset]:
        return connect_blocks(self.blocks, self.grid)

    @property
    def connected(self) -> bool:
        return len(self.components) <= 1

    def __or__(self, other):
        return Polymer(self.blocks | other.blocks, self.grid)

    def overlaps(self, other) -> bool:
        return bool(self.blocks & other.blocks)


def contract(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    """Remove every block within sup-distance ``steps`` of the complement; outside the grid counts as inside."""
    mask = np.asarray(mask, bool)
    if steps <= 0:
        return mask.copy()
    structure = ndimage.generate_binary_structure(mask.ndim, mask.ndim)
    return ndimage.binary_erosion(mask, structure=structure, iterations=steps, border_value=1)


def cells_in_blocks(partition: BlockPartition, blocks: Iterable[int], degrees=(0, 1)) -> dict:
    """Boolean masks per degree for cells whose base site lies in the given blocks."""
    bl = np.zeros(partition.n_blocks, bool)
    bl[list(blocks)] = True
    return {k: bl[partition.cell_block(k)] for k in degrees}
