"""Metropolis sampler for the compact Villain Higgs model and for the massive Gaussian gauge field.

Fields are stored flat: phi as (re, im) arrays on sites, A on bonds, and the vortex field as
integers n on plaquettes with v = n * 2 pi / e0.  All sweeps run inside numba kernels.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from ..lattice import BlockPartition, LatticeGeometry
from ..model import ConfigError, Couplings

MODELS = ("villain_higgs", "gaussian")


@dataclass
class MCConfig:
    sweeps: int = 10_000
    thermalization: int = 1_000
    stride: int = 10
    width_phi: float = 1.0
    width_A: float = 1.0
    vortex_range: int = 1
    vortex_updates: bool = True
    seed: int = 0
    chains: int = 1
    tune: bool = True
    check_every: int = 100
    store_fields: bool = True
    block_r: int = 4

    def __post_init__(self):
        if self.sweeps <= self.thermalization:
            raise ConfigError("sweeps must exceed thermalization sweeps")
        if self.width_phi <= 0 or self.width_A <= 0:
            raise ConfigError("proposal widths must be positive")
        if self.stride < 1 or self.chains < 1:
            raise ConfigError("stride and chain count must be positive")

    @property
    def n_measurements(self) -> int:
        return (self.sweeps - self.thermalization) // self.stride

    def to_dict(self):
        return asdict(self)


@dataclass
class Chain:
    model: str
    geometry: LatticeGeometry
    couplings: Couplings | None
    mA2: float
    config: MCConfig
    F: np.ndarray                   # (n_meas, n_plaquettes) float32
    block_max: np.ndarray           # (n_meas, n_blocks) block sup of |Phi| in unitary gauge
    action: np.ndarray              # (n_meas,)
    acceptance: dict
    widths: dict
    action_drift: float
    seed: int
    wall_time: float
    final_state: dict = field(default_factory=dict)

    @property
    def n_measurements(self):
        return len(self.action)


# -- lattice tables --------------------------------------------------------
def _tables(geometry: LatticeGeometry):
    d = geometry.d
    ns, nb, npl = geometry.n_sites, geometry.n_bonds, geometry.n_plaquettes
    ends = geometry.bond_endpoints.astype(np.int64)
    site_bond = -np.ones((ns, 2 * d), np.int64)
    site_role = np.zeros((ns, 2 * d), np.int64)    # +1 tail, -1 head
    fill = np.zeros(ns, np.int64)
    for b in range(nb):
        t, h = ends[b]
        site_bond[t, fill[t]] = b
        site_role[t, fill[t]] = 1
        fill[t] += 1
        site_bond[h, fill[h]] = b
        site_role[h, fill[h]] = -1
        fill[h] += 1
    if npl:
        inc = geometry.incidence(1).tocsr()
        plaq_bonds = np.zeros((npl, 4), np.int64)
        plaq_sign = np.zeros((npl, 4), np.float64)
        for p in range(npl):
            sl = slice(inc.indptr[p], inc.indptr[p + 1])
            plaq_bonds[p] = inc.indices[sl]
            plaq_sign[p] = inc.data[sl]
        incT = inc.T.tocsr()
        width = max(1, int(np.max(np.diff(incT.indptr))))
        bond_plaq = -np.ones((nb, width), np.int64)
        bond_psign = np.zeros((nb, width), np.float64)
        for b in range(nb):
            sl = slice(incT.indptr[b], incT.indptr[b + 1])
            k = sl.stop - sl.start
            bond_plaq[b, :k] = incT.indices[sl]
            bond_psign[b, :k] = incT.data[sl]
    else:
        plaq_bonds = np.zeros((0, 4), np.int64)
        plaq_sign = np.zeros((0, 4))
        bond_plaq = -np.ones((nb, 1), np.int64)
        bond_psign = np.zeros((nb, 1))
    missing = geometry.missing_neighbours().astype(np.float64)
    return ends, site_bond, site_role, plaq_bonds, plaq_sign, bond_plaq, bond_psign, missing


# -- numba kernels ---------------------------------------------------------
@numba.njit(cache=True)
def _plaq_F(p, A, nv, P, plaq_bonds, plaq_sign):
    s = nv[p] * P
    for j in range(4):
        s += plaq_sign[p, j] * A[plaq_bonds[p, j]]
    return s


@numba.njit(cache=True)
def _full_action(kind, re, im, A, nv, e0, lam, mu2, E, mA2, P, ends, missing, plaq_bonds, plaq_sign):
    s = 0.0
    for p in range(plaq_bonds.shape[0]):
        f = _plaq_F(p, A, nv, P, plaq_bonds, plaq_sign)
        s += 0.5 * f * f
    if kind == 1:
        for b in range(A.shape[0]):
            s += 0.5 * mA2 * A[b] * A[b]
        return s
    for b in range(A.shape[0]):
        t = ends[b, 0]
        h = ends[b, 1]
        c = math.cos(e0 * A[b])
        sn = math.sin(e0 * A[b])
        lr = c * re[t] - sn * im[t] - re[h]
        li = sn * re[t] + c * im[t] - im[h]
        s += 0.5 * (lr * lr + li * li)
    for x in range(re.shape[0]):
        m2 = re[x] * re[x] + im[x] * im[x]
        s += 0.5 * missing[x] * m2 + lam * m2 * m2 - 0.25 * mu2 * m2 + E
    return s


@numba.njit(cache=True)
def _site_energy(x, pr, pi, re, im, A, e0, lam, mu2, ends, site_bond, site_role, missing):
    m2 = pr * pr + pi * pi
    s = 0.5 * missing[x] * m2 + lam * m2 * m2 - 0.25 * mu2 * m2
    for j in range(site_bond.shape[1]):
        b = site_bond[x, j]
        if b < 0:
            break
        c = math.cos(e0 * A[b])
        sn = math.sin(e0 * A[b])
        if site_role[x, j] == 1:
            h = ends[b, 1]
            lr = c * pr - sn * pi - re[h]
            li = sn * pr + c * pi - im[h]
        else:
            t = ends[b, 0]
            lr = c * re[t] - sn * im[t] - pr
            li = sn * re[t] + c * im[t] - pi
        s += 0.5 * (lr * lr + li * li)
    return s


@numba.njit(cache=True)
def _bond_higgs(b, a, re, im, e0, ends):
    t = ends[b, 0]
    h = ends[b, 1]
    c = math.cos(e0 * a)
    sn = math.sin(e0 * a)
    lr = c * re[t] - sn * im[t] - re[h]
    li = sn * re[t] + c * im[t] - im[h]
    return 0.5 * (lr * lr + li * li)


@numba.njit(cache=True)
def _sweep(kind, re, im, A, nv, e0, lam, mu2, mA2, P, wphi, wA, vrange, do_vortex, compact,
           ends, site_bond, site_role, missing, plaq_bonds, plaq_sign, bond_plaq, bond_psign, acc):
    """One sweep over sites, bonds and (optionally) vortex variables; returns the action change."""
    dS_total = 0.0
    if kind == 0 and wphi > 0:
        for x in range(re.shape[0]):
            pr = re[x] + wphi * (2.0 * np.random.random() - 1.0)
            pi = im[x] + wphi * (2.0 * np.random.random() - 1.0)
            dS = (_site_energy(x, pr, pi, re, im, A, e0, lam, mu2, ends, site_bond, site_role, missing)
                  - _site_energy(x, re[x], im[x], re, im, A, e0, lam, mu2, ends, site_bond, site_role, missing))
            acc[1] += 1
            if dS <= 0.0 or np.random.random() < math.exp(-dS):
                re[x] = pr
                im[x] = pi
                dS_total += dS
                acc[0] += 1
    if wA > 0:
        for b in range(A.shape[0]):
            delta = wA * (2.0 * np.random.random() - 1.0)
            a_new = A[b] + delta
            dS = 0.0
            for j in range(bond_plaq.shape[1]):
                p = bond_plaq[b, j]
                if p < 0:
                    break
                f = _plaq_F(p, A, nv, P, plaq_bonds, plaq_sign)
                g = f + bond_psign[b, j] * delta
                dS += 0.5 * (g * g - f * f)
            if kind == 1:
                dS += 0.5 * mA2 * (a_new * a_new - A[b] * A[b])
            else:
                dS += _bond_higgs(b, a_new, re, im, e0, ends) - _bond_higgs(b, A[b], re, im, e0, ends)
            acc[3] += 1
            if dS <= 0.0 or np.random.random() < math.exp(-dS):
                A[b] = a_new
                dS_total += dS
                acc[2] += 1
                if compact:
                    # keep A in [-P/2, P/2); the compensating vortex shift leaves F unchanged
                    k = math.floor(A[b] / P + 0.5)
                    if k != 0:
                        A[b] -= k * P
                        for j in range(bond_plaq.shape[1]):
                            p = bond_plaq[b, j]
                            if p < 0:
                                break
                            nv[p] += int(round(bond_psign[b, j])) * k
    if do_vortex and kind == 0:
        d3 = bond_plaq.shape[1] > 2
        if not d3:
            for p in range(plaq_bonds.shape[0]):
                step = 1 + int(np.random.random() * vrange)
                if np.random.random() < 0.5:
                    step = -step
                f = _plaq_F(p, A, nv, P, plaq_bonds, plaq_sign)
                g = f + step * P
                dS = 0.5 * (g * g - f * f)
                acc[5] += 1
                if dS <= 0.0 or np.random.random() < math.exp(-dS):
                    nv[p] += step
                    dS_total += dS
                    acc[4] += 1
        else:
            # closed update: add the coboundary of an integer on one bond
            for b in range(A.shape[0]):
                step = 1 + int(np.random.random() * vrange)
                if np.random.random() < 0.5:
                    step = -step
                dS = 0.0
                for j in range(bond_plaq.shape[1]):
                    p = bond_plaq[b, j]
                    if p < 0:
                        break
                    f = _plaq_F(p, A, nv, P, plaq_bonds, plaq_sign)
                    g = f + bond_psign[b, j] * step * P
                    dS += 0.5 * (g * g - f * f)
                acc[5] += 1
                if dS <= 0.0 or np.random.random() < math.exp(-dS):
                    for j in range(bond_plaq.shape[1]):
                        p = bond_plaq[b, j]
                        if p < 0:
                            break
                        nv[p] += int(round(bond_psign[b, j])) * step
                    dS_total += dS
                    acc[4] += 1
    return dS_total


@numba.njit(cache=True)
def _seed(s):
    np.random.seed(s)


@numba.njit(cache=True)
def _measure(kind, re, im, A, nv, P, e0, rho0, ends, plaq_bonds, plaq_sign, site_blk, bond_blk, n_blocks, F_out, bmax_out):
    for p in range(plaq_bonds.shape[0]):
        F_out[p] = _plaq_F(p, A, nv, P, plaq_bonds, plaq_sign)
    for k in range(n_blocks):
        bmax_out[k] = 0.0
    if kind == 0:
        for x in range(re.shape[0]):
            r = abs(math.sqrt(re[x] * re[x] + im[x] * im[x]) - rho0)
            if r > bmax_out[site_blk[x]]:
                bmax_out[site_blk[x]] = r
    for b in range(A.shape[0]):
        a = A[b]
        if kind == 0:
            t = ends[b, 0]
            h = ends[b, 1]
            a += (math.atan2(im[t], re[t]) - math.atan2(im[h], re[h])) / e0
            a -= P * math.floor(a / P + 0.5)
        a = abs(a)
        if a > bmax_out[bond_blk[b]]:
            bmax_out[bond_blk[b]] = a


# -- driver ----------------------------------------------------------------
def chain_seeds(master_seed: int, chains: int) -> list[int]:
    """Independent per-chain seeds derived from the master seed by a counter."""
    ss = np.random.SeedSequence(int(master_seed))
    return [int(s.generate_state(1, np.uint32)[0]) for s in ss.spawn(chains)]


def run_chain(geometry: LatticeGeometry, config: MCConfig, model: str = "villain_higgs",
              couplings: Couplings | None = None, mA2: float | None = None, seed: int | None = None,
              initial: dict | None = None) -> Chain:
    """Run one Metropolis chain and collect measurements every ``stride`` sweeps after thermalization.

    ``model='villain_higgs'`` samples exp(-1/2 |dA + v|^2 - S_h(phi, A)) with compact A and integer
    vortex steps; ``model='gaussian'`` samples exp(-1/2 |dA|^2 - m_A^2/2 |A|^2) (A only).
    """
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}")
    if geometry.d not in (2, 3):
        raise ConfigError("the sampler supports d = 2 or d = 3")
    kind = MODELS.index(model)
    if kind == 0 and couplings is None:
        raise ConfigError("villain_higgs needs couplings")
    if kind == 1:
        if mA2 is None:
            mA2 = couplings.m_A ** 2 if couplings is not None else 4.0
    else:
        mA2 = couplings.m_A ** 2
    e0 = couplings.e0 if couplings is not None else 1.0
    lam = couplings.lam if couplings is not None else 0.0
    mu2 = couplings.mu ** 2 if couplings is not None else 0.0
    E = couplings.E if couplings is not None else 0.0
    rho0 = couplings.rho0 if couplings is not None else 0.0
    P = couplings.period if couplings is not None else 2 * math.pi
    ends, site_bond, site_role, plaq_bonds, plaq_sign, bond_plaq, bond_psign, missing = _tables(geometry)
    part = BlockPartition(geometry, min(config.block_r, geometry.L))
    site_blk = part.cell_block(0).astype(np.int64)
    bond_blk = part.cell_block(1).astype(np.int64)
    seed = config.seed if seed is None else seed
    _seed(int(seed) % (2 ** 32))

    ns, nb, npl = geometry.n_sites, geometry.n_bonds, geometry.n_plaquettes
    initial = initial or {}
    re = np.array(initial.get("re", np.full(ns, rho0 if kind == 0 else 0.0)), float)
    im = np.array(initial.get("im", np.zeros(ns)), float)
    A = np.array(initial.get("A", np.zeros(nb)), float)
    nv = np.array(initial.get("n", np.zeros(npl)), np.int64)
    wphi, wA = float(config.width_phi), float(config.width_A)
    compact = kind == 0
    do_vortex = bool(config.vortex_updates) and kind == 0

    def action():
        return _full_action(kind, re, im, A, nv, e0, lam, mu2, E, mA2, P, ends, missing, plaq_bonds, plaq_sign)

    S = action()
    drift = 0.0
    n_meas = config.n_measurements
    F_store = np.zeros((n_meas if config.store_fields else 0, npl), np.float32)
    bmax_store = np.zeros((n_meas, part.n_blocks), np.float32)
    S_store = np.zeros(n_meas)
    F_buf = np.zeros(npl)
    b_buf = np.zeros(part.n_blocks)
    acc = np.zeros(6, np.int64)
    t0 = time.perf_counter()
    window = 50
    m = 0
    for sweep in range(config.sweeps):
        thermal = sweep < config.thermalization
        if thermal and config.tune and sweep % window == 0:
            if sweep > 0:
                for key, (i, j) in (("phi", (0, 1)), ("A", (2, 3))):
                    if acc[j] == 0:
                        continue
                    rate = acc[i] / acc[j]
                    factor = 1.0 if 0.3 <= rate <= 0.6 else min(2.0, max(0.5, rate / 0.45))
                    if key == "phi":
                        wphi *= factor
                    else:
                        wA *= factor
            acc[:] = 0
        if sweep == config.thermalization:
            acc[:] = 0
        S += _sweep(kind, re, im, A, nv, e0, lam, mu2, mA2, P, wphi, wA, config.vortex_range, do_vortex, compact,
                    ends, site_bond, site_role, missing, plaq_bonds, plaq_sign, bond_plaq, bond_psign, acc)
        if not math.isfinite(S):
            raise FloatingPointError(f"non-finite action at sweep {sweep}")
        if config.check_every and (sweep + 1) % config.check_every == 0:
            exact = action()
            drift = max(drift, abs(exact - S) / max(1.0, abs(exact)))
            S = exact
        if not thermal and (sweep - config.thermalization + 1) % config.stride == 0 and m < n_meas:
            _measure(kind, re, im, A, nv, P, e0, rho0, ends, plaq_bonds, plaq_sign, site_blk, bond_blk,
                     part.n_blocks, F_buf, b_buf)
            if config.store_fields:
                F_store[m] = F_buf
            bmax_store[m] = b_buf
            S_store[m] = S
            m += 1
    wall = time.perf_counter() - t0
    rates = {}
    for key, (i, j) in (("phi", (0, 1)), ("A", (2, 3)), ("vortex", (4, 5))):
        rates[key] = float(acc[i] / acc[j]) if acc[j] else float("nan")
    for key in ("phi", "A"):
        r = rates[key]
        if r == r and not (0.2 <= r <= 0.7) and (config.width_phi if key == "phi" else config.width_A) > 0:
            warnings.warn(f"{key} acceptance {r:.3f} outside [0.2, 0.7] after tuning", RuntimeWarning)
    if drift > 1e-8:
        warnings.warn(f"incremental action drifted by {drift:.2e}", RuntimeWarning)
    return Chain(model, geometry, couplings, float(mA2), config, F_store, bmax_store, S_store, rates,
                 {"phi": wphi, "A": wA}, float(drift), int(seed), wall,
                 {"re": re.copy(), "im": im.copy(), "A": A.copy(), "n": nv.copy()})


def run_chains(geometry, config: MCConfig, model="villain_higgs", couplings=None, mA2=None) -> list[Chain]:
    """Independent chains, one RNG stream each; run sequentially (the kernels release no GIL)."""
    return [run_chain(geometry, config, model, couplings, mA2, seed=s)
            for s in chain_seeds(config.seed, config.chains)]


def merge_chains(chains: list[Chain]) -> Chain:
    """Concatenate measurement streams of chains with the same setup (chain-major order)."""
    first = chains[0]
    if len(chains) == 1:
        return first
    return Chain(first.model, first.geometry, first.couplings, first.mA2, first.config,
                 np.concatenate([c.F for c in chains]), np.concatenate([c.block_max for c in chains]),
                 np.concatenate([c.action for c in chains]), first.acceptance, first.widths,
                 max(c.action_drift for c in chains), first.seed, sum(c.wall_time for c in chains))
