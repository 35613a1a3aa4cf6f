"""Small/large field regions of a configuration on a block partition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..lattice import BlockPartition, connect_blocks, contract


@dataclass
class Thresholds:
    p_lam: float
    p0_lam: float
    r: int
    eps: float = 0.1

    @classmethod
    def from_coupling(cls, lam: float, d: int, eps: float = 0.1, a: float | None = None):
        """Default thresholds |log lam|^(2d+1), |log lam|^a with a = (4d+1)/2, and r = [|log lam|^2]."""
        ll = abs(math.log(lam))
        a = (4 * d + 1) / 2 if a is None else a
        return cls(ll ** (2 * d + 1), ll ** a, max(1, int(ll ** 2)), eps)


@dataclass
class RegionDecomposition:
    partition: BlockPartition
    lambda0: np.ndarray
    lambda1: np.ndarray
    omega0: np.ndarray
    omega1: np.ndarray
    thresholds: dict = field(default_factory=dict)

    @property
    def P(self):
        return self.lambda1 & ~self.omega1

    @property
    def Qtilde(self):
        return ~self.lambda1

    @property
    def Q(self) -> list[frozenset]:
        return connect_blocks(self.partition.mask_to_grid(~self.lambda0))

    @property
    def Qtilde_components(self) -> list[frozenset]:
        return connect_blocks(self.partition.mask_to_grid(~self.lambda1))

    def cell_mask(self, name: str, space) -> np.ndarray:
        blocks = getattr(self, name)
        return np.asarray(blocks)[space.blocks(self.partition)]

    def summary(self):
        return {k: int(np.sum(getattr(self, k))) for k in ("lambda0", "lambda1", "omega0", "omega1", "P", "Qtilde")}


def block_sup(values, space, partition: BlockPartition) -> np.ndarray:
    out = np.zeros(partition.n_blocks)
    np.maximum.at(out, space.blocks(partition), np.abs(np.asarray(values, float)))
    return out


def classify_regions(phi, space, partition: BlockPartition, p_lam: float, p0_lam: float,
                     phi_prime=None) -> RegionDecomposition:
    """Lambda0: blocks with sup|phi| < p_lam; Lambda1 = Lambda0 minus a one-block collar;
    Omega0: blocks of Lambda1 with sup|phi'| < p0_lam; Omega1 = Omega0 minus a two-block collar.

    ``phi`` lives on the cells of ``space``; ``phi_prime`` defaults to ``phi``.
    """
    if p_lam <= 0 or p0_lam <= 0:
        raise ValueError("thresholds must be positive")
    phi_prime = phi if phi_prime is None else phi_prime
    grid = partition.grid
    lam0 = block_sup(phi, space, partition) < p_lam
    lam1 = contract(lam0.reshape(grid), 1).ravel()
    om0 = lam1 & (block_sup(phi_prime, space, partition) < p0_lam)
    om1 = contract(om0.reshape(grid), 2).ravel()
    return RegionDecomposition(partition, lam0, lam1, om0, om1, {"p_lam": p_lam, "p0_lam": p0_lam, "r": partition.r})
