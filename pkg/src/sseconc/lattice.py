"""Periodic square lattices and chains: site indexing, bonds, separation classes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LatticeGeometry:
    Lx: int
    Ly: int
    periodic: bool = True
    bonds: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def N(self) -> int:
        return self.Lx * self.Ly

    @property
    def is_chain(self) -> bool:
        return self.Ly == 1

    @property
    def coordination(self) -> int:
        return 2 if self.is_chain else 4

    def coords(self, i: int) -> tuple[int, int]:
        return i % self.Lx, i // self.Lx

    def site(self, x: int, y: int) -> int:
        return (x % self.Lx) + self.Lx * (y % self.Ly)

    def parity(self) -> np.ndarray:
        """(-1)**(x+y) per site, used for staggered fields and magnetization."""
        idx = np.arange(self.N)
        return np.where(((idx % self.Lx) + (idx // self.Lx)) % 2 == 0, 1, -1).astype(np.int64)

    def separation_index(self) -> np.ndarray:
        """``sep[i, j]`` is the canonical index ``dx + Lx*dy`` of ``j - i``."""
        x = np.arange(self.N) % self.Lx
        y = np.arange(self.N) // self.Lx
        dx = (x[None, :] - x[:, None]) % self.Lx
        dy = (y[None, :] - y[:, None]) % self.Ly
        return (dx + self.Lx * dy).astype(np.int64)

    def canonical(self, sep) -> tuple[int, int]:
        return canonical_separation(self, sep)


def build_lattice(Lx: int, Ly: int = 1, periodic: bool = True) -> LatticeGeometry:
    """Build a square lattice (``Ly >= 2``) or a chain (``Ly == 1``).

    Periodic lattices list every nearest-neighbour bond once per direction, so a
    periodic ``L x L`` lattice has ``2N`` bonds and a periodic ring has ``N``.
    Open boundaries only drop the wrapping bonds; they exist for dimer and small
    cluster checks against exact diagonalization.
    """
    Lx, Ly = int(Lx), int(Ly)
    if Lx < 1 or Ly < 1:
        raise ValueError(f"lattice extents must be positive, got Lx={Lx}, Ly={Ly}")
    if Lx < 2:
        raise ValueError("Lx must be at least 2")
    if Ly == 1 and periodic and Lx < 3:
        raise ValueError("a periodic chain needs at least 3 sites (2 sites would double-count the bond)")

    bonds = []
    for y in range(Ly):
        for x in range(Lx):
            i = x + Lx * y
            if periodic or x + 1 < Lx:
                bonds.append((i, (x + 1) % Lx + Lx * y))
    if Ly > 1:
        for y in range(Ly):
            for x in range(Lx):
                i = x + Lx * y
                if periodic or y + 1 < Ly:
                    bonds.append((i, x + Lx * ((y + 1) % Ly)))
    arr = np.asarray(bonds, dtype=np.int64).reshape(-1, 2)
    return LatticeGeometry(Lx, Ly, bool(periodic), arr)


def canonical_separation(geometry: LatticeGeometry, sep) -> tuple[int, int]:
    dx, dy = (int(sep[0]), int(sep[1])) if len(sep) == 2 else (int(sep[0]), 0)
    dx %= geometry.Lx
    dy %= geometry.Ly
    if dx == 0 and dy == 0:
        raise ValueError(f"separation {tuple(sep)} is zero modulo ({geometry.Lx}, {geometry.Ly})")
    return dx, dy


def site_pairs_at_separation(geometry: LatticeGeometry, sep) -> list[tuple[int, int]]:
    """All ordered pairs ``(i, i + sep)``, one per base site, with periodic wrap."""
    dx, dy = canonical_separation(geometry, sep)
    pairs = []
    for i in range(geometry.N):
        x, y = geometry.coords(i)
        if not geometry.periodic and (x + dx >= geometry.Lx or y + dy >= geometry.Ly):
            continue
        pairs.append((i, geometry.site(x + dx, y + dy)))
    return pairs
