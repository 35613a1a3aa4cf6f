"""Abelian Higgs model on the lattice: couplings, actions, gauge fixing and configuration IO."""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .lattice import GeometryError, LatticeGeometry

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Couplings:
    e0: float
    lam: float
    mu: float
    alpha: float = 1.0
    E_override: float | None = None

    def __post_init__(self):
        for name in ("e0", "lam", "mu", "alpha"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigError(f"coupling {name} must be a positive number, got {val!r}")

    @property
    def m_A(self) -> float:
        return self.mu * self.e0 / math.sqrt(8 * self.lam)

    @property
    def rho0(self) -> float:
        return self.mu / math.sqrt(8 * self.lam)

    @property
    def E(self) -> float:
        if self.E_override is not None:
            return float(self.E_override)
        return self.mu ** 4 / (64 * self.lam)

    @property
    def period(self) -> float:
        """Spacing 2 pi / e0 of the vortex lattice and of the compact gauge circle."""
        return 2 * math.pi / self.e0

    @classmethod
    def from_masses(cls, e0, mu, m_A, alpha=1.0):
        lam = (mu * e0 / m_A) ** 2 / 8
        return cls(e0=e0, lam=lam, mu=mu, alpha=alpha)

    def derived(self) -> dict:
        return {"m_A": self.m_A, "rho0": self.rho0, "E": self.E}


BENCHMARK = Couplings(e0=0.2, lam=0.005, mu=2.0)


@dataclass
class GaugeHiggsConfig:
    phi: np.ndarray
    A: np.ndarray
    v: np.ndarray

    def validate(self, geometry: LatticeGeometry, couplings: Couplings):
        if self.phi.shape != (geometry.n_sites,):
            raise ConfigError("phi has the wrong shape")
        if self.A.shape != (geometry.n_bonds,):
            raise ConfigError("A has the wrong shape")
        check_vortex(geometry, couplings, self.v)

    @classmethod
    def zeros(cls, geometry, couplings):
        return cls(np.full(geometry.n_sites, couplings.rho0, complex),
                   np.zeros(geometry.n_bonds), np.zeros(geometry.n_plaquettes))


@dataclass
class SourceField:
    J: np.ndarray

    def __post_init__(self):
        self.J = np.asarray(self.J, float)
        if np.any(np.abs(self.J) >= 1):
            raise ConfigError("source must satisfy |J| < 1")


def check_vortex(geometry: LatticeGeometry, couplings: Couplings, v, tol=1e-9):
    v = np.asarray(v, float)
    if v.shape != (geometry.n_plaquettes,):
        raise ConfigError("v has the wrong shape")
    n = v / couplings.period
    if np.any(np.abs(n - np.round(n)) > tol):
        raise DomainError("vortex field must take values in (2 pi / e0) Z")
    if geometry.d >= 3:
        dv = geometry.incidence(2) @ v
        if np.any(np.abs(dv) > tol * max(1.0, couplings.period)):
            raise DomainError("vortex field must be closed (dv = 0)")


# -- actions --------------------------------------------------------------
def action_noncompact(geometry: LatticeGeometry, A) -> float:
    dA = geometry.incidence(1) @ np.asarray(A, float)
    return 0.5 * float(dA @ dA)


def villain_weight(geometry: LatticeGeometry, couplings: Couplings, A, v) -> float:
    check_vortex(geometry, couplings, v)
    F = geometry.incidence(1) @ np.asarray(A, float) + np.asarray(v, float)
    return 0.5 * float(F @ F)


def field_strength(geometry: LatticeGeometry, A, v) -> np.ndarray:
    return geometry.incidence(1) @ np.asarray(A, float) + np.asarray(v, float)


def action_higgs(geometry: LatticeGeometry, couplings: Couplings, phi, A, boundary="dirichlet") -> float:
    """Covariant kinetic term plus quartic potential.

    The bond term is |exp(i e0 A_xy) phi(x) - phi(y)|^2 / 2 for the bond x -> y, so the action
    is invariant under phi -> exp(i e0 theta) phi, A -> A + d theta.  With ``boundary='dirichlet'``
    the bonds to the exterior, where phi = 0, contribute |phi(x)|^2 / 2 each.
    """
    phi = np.asarray(phi, complex)
    A = np.asarray(A, float)
    tail, head = geometry.bond_endpoints.T
    link = np.exp(1j * couplings.e0 * A) * phi[tail] - phi[head]
    kin = 0.5 * float(np.sum(np.abs(link) ** 2))
    mod2 = np.abs(phi) ** 2
    if boundary == "dirichlet":
        kin += 0.5 * float(geometry.missing_neighbours() @ mod2)
    elif boundary != "free":
        raise ConfigError(f"unknown boundary {boundary!r}")
    pot = couplings.lam * mod2 ** 2 - 0.25 * couplings.mu ** 2 * mod2 + couplings.E
    return kin + float(np.sum(pot))


def action_shifted(geometry: LatticeGeometry, couplings: Couplings, rho, A, v, boundary="dirichlet") -> float:
    """Action in unitary gauge after writing |phi| = rho0 + rho, including the -log Jacobian.

    With ``boundary='dirichlet'`` the exterior has phi = 0, i.e. rho = -rho0 and A = 0.
    """
    rho = np.asarray(rho, float)
    A = np.asarray(A, float)
    r0, e0, lam, mu = couplings.rho0, couplings.e0, couplings.lam, couplings.mu
    if np.any(rho <= -r0):
        raise DomainError("rho must exceed -rho0")
    check_vortex(geometry, couplings, v)
    tail, head = geometry.bond_endpoints.T
    F = geometry.incidence(1) @ A + np.asarray(v, float)
    c = 1.0 - np.cos(e0 * A)
    s = 0.5 * F @ F
    s += 0.5 * couplings.m_A ** 2 * A @ A
    s += 0.5 * np.sum((rho[head] - rho[tail]) ** 2)
    if boundary == "dirichlet":
        s += 0.5 * geometry.missing_neighbours() @ (rho + r0) ** 2
    elif boundary != "free":
        raise ConfigError(f"unknown boundary {boundary!r}")
    s += 0.5 * mu ** 2 * rho @ rho
    s += r0 ** 2 * np.sum(c - 0.5 * (e0 * A) ** 2)
    s += r0 * np.sum((rho[head] + rho[tail]) * c)
    s += np.sum(rho[head] * rho[tail] * c)
    s += np.sum(lam * rho ** 4 + math.sqrt(2 * lam) * mu * rho ** 3 - np.log1p(rho / r0))
    return float(s)


def unitary_gauge(couplings: Couplings, geometry: LatticeGeometry, phi, A):
    """Return (rho, A_u) with rho = |phi| - rho0 and A_u = A + (arg phi(x) - arg phi(y)) / e0 wrapped."""
    phi = np.asarray(phi, complex)
    theta = np.angle(phi)
    tail, head = geometry.bond_endpoints.T
    Au = np.asarray(A, float) + (theta[tail] - theta[head]) / couplings.e0
    P = couplings.period
    Au = Au - P * np.round(Au / P)
    return np.abs(phi) - couplings.rho0, Au


# -- gauge fixing ---------------------------------------------------------
def _reduced_laplacian(geometry: LatticeGeometry, x0: int):
    lap = geometry.laplacian("interior").toarray()
    keep = np.arange(geometry.n_sites) != x0
    return lap[:, keep]


def gauge_fix_constant(geometry: LatticeGeometry, alpha: float, x0: int = 0) -> float:
    """Constant c making the gauge-fixing weight exp(-G) integrate to one over each gauge orbit.

    c = log of the Gaussian integral of exp(-alpha/2 |delta A + Lap theta|^2) over theta with
    theta(x0) = 0; it does not depend on A because delta A is orthogonal to constants.
    """
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    M = _reduced_laplacian(geometry, x0)
    n = M.shape[1]
    sign, logdet = np.linalg.slogdet(M.T @ M)
    if sign <= 0:
        raise GeometryError("reduced gauge operator is singular")
    return 0.5 * n * math.log(2 * math.pi / alpha) - 0.5 * logdet


def gauge_fixing(geometry: LatticeGeometry, couplings: Couplings, A, x0: int = 0) -> float:
    div = geometry.incidence(0).T @ np.asarray(A, float)
    return 0.5 * couplings.alpha * float(div @ div) + gauge_fix_constant(geometry, couplings.alpha, x0)


def gauge_orbit_integral_mc(geometry: LatticeGeometry, alpha: float, A, n_samples: int,
                            rng: np.random.Generator, x0: int = 0, widen: float = 1.2):
    """Importance-sampling estimate of log of the gauge orbit integral, with its relative standard error.

    The proposal is a Gaussian centred at the least-squares gauge angle for A, with covariance
    ``widen**2`` times the inverse gauge operator.  Only the part of delta A that no gauge angle
    can cancel survives in the weights, so the estimate tests the A-independence of the integral.
    """
    M = _reduced_laplacian(geometry, x0)
    n = M.shape[1]
    b = geometry.incidence(0).T @ np.asarray(A, float)
    centre = -np.linalg.lstsq(M, b, rcond=None)[0]
    prec = alpha * (M.T @ M) / widen ** 2
    chol = np.linalg.cholesky(prec)
    z = rng.standard_normal((n_samples, n))
    theta = centre + np.linalg.solve(chol.T, z.T).T
    log_q = -0.5 * np.sum(z ** 2, axis=1) - 0.5 * n * math.log(2 * math.pi) + np.sum(np.log(np.diag(chol)))
    r = b[None, :] + theta @ M.T
    log_f = -0.5 * alpha * np.sum(r ** 2, axis=1)
    lw = log_f - log_q
    shift = lw.max()
    w = np.exp(lw - shift)
    mean = w.mean()
    err = w.std(ddof=1) / math.sqrt(n_samples)
    return math.log(mean) + shift, err / mean


def source_pairing(geometry: LatticeGeometry, couplings: Couplings, A, v, J) -> float:
    F = field_strength(geometry, A, v)
    return couplings.e0 * float(F @ np.asarray(J, float))


# -- configuration files ----------------------------------------------------
DEFAULTS: dict[str, Any] = {
    "lattice": {"d": 2, "L": 8, "boundary": "dirichlet"},
    "couplings": {"e0": 0.2, "lam": 0.005, "mu": 2.0, "alpha": 1.0},
    "seed": 12345,
}


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return merge_config(data)


def merge_config(data: dict | None) -> dict:
    out = json.loads(json.dumps(DEFAULTS))
    for key, val in (data or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key].update(val)
        else:
            out[key] = val
    return out


def geometry_from_config(cfg: dict) -> LatticeGeometry:
    lat = cfg.get("lattice", {})
    try:
        return LatticeGeometry(int(lat.get("d", 2)), int(lat.get("L", 8)), lat.get("boundary", "dirichlet"))
    except (GeometryError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def couplings_from_config(cfg: dict) -> Couplings:
    c = dict(cfg.get("couplings", {}))
    if "lambda" in c:
        c["lam"] = c.pop("lambda")
    if "m_A" in c:
        # the gauge mass fixes lambda; a lambda merged in from the defaults is ignored
        try:
            return Couplings.from_masses(float(c["e0"]), float(c["mu"]), float(c["m_A"]), float(c.get("alpha", 1.0)))
        except KeyError as exc:
            raise ConfigError(f"missing coupling {exc}") from exc
    try:
        return Couplings(e0=float(c["e0"]), lam=float(c["lam"]), mu=float(c["mu"]),
                         alpha=float(c.get("alpha", 1.0)), E_override=c.get("E"))
    except KeyError as exc:
        raise ConfigError(f"missing coupling {exc}") from exc


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def couplings_json(c: Couplings) -> str:
    d = asdict(c)
    d.update(c.derived())
    return json.dumps(d)
