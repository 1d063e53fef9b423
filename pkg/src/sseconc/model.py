"""Hamiltonians, SSE vertex weights and directed-loop scattering tables.

Conventions (Pauli units, unit exchange):

* XXZ:  H = sum_<ij> [-(sx sx + sy sy) + delta sz sz] - h_stag sum_i (-1)^(x+y) sz_i,
  sampled in the sz eigenbasis.
* TFIM: H = -lam sum_<ij> sx sx - sum_i sz_i - h_x sum_i sx_i,
  sampled in the sx eigenbasis, where the transverse field is a spin flip.

Site fields are shared out over the bonds touching a site, so every bond vertex
carries ``f_i s_i + f_j s_j`` with ``f_i = h_i / degree(i)``.

A four-leg vertex is a 4-bit integer: bit k is set when leg k carries spin +1.
Legs 0 and 1 are the lower (incoming) states on the bond's first and second
site, legs 2 and 3 the upper (outgoing) states.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linprog

from .lattice import LatticeGeometry

XXZ = "xxz"
TFIM = "tfim"
LAMBDA_C = 0.32841


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    beta: float
    delta: float = 0.0
    lam: float = 0.0
    h_x: float = 0.0
    h_stag: float = 0.0
    epsilon: float = 0.1

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in (XXZ, TFIM):
            raise ValueError(f"unknown model kind {self.kind!r}; expected 'xxz' or 'tfim'")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.lam < 0 or self.h_x < 0 or self.h_stag < 0:
            raise ValueError("lam, h_x and h_stag must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class VertexTable:
    """Diagonal and off-diagonal matrix elements of ``C - H_term``.

    ``diag[c, bi + 2*bj]`` is the diagonal bond weight of class ``c`` with
    ``bi, bj`` the spin bits, ``vertex[c, v]`` the weight of four-leg vertex
    ``v``. ``site_weight`` is the weight of both TFIM site operators (constant
    and flip); it is zero for XXZ, which has no site operators.
    """

    kind: str
    bond_sites: np.ndarray
    bond_class: np.ndarray
    diag: np.ndarray
    vertex: np.ndarray
    offdiag: float
    site_weight: float
    constant: float
    n_sites: int

    @property
    def n_bonds(self) -> int:
        return len(self.bond_sites)

    @property
    def n_terms(self) -> int:
        return self.n_bonds + (self.n_sites if self.site_weight > 0 else 0)

    @property
    def total_constant(self) -> float:
        """Sum of all offsets, so that E = total_constant - <n>/beta."""
        return self.n_bonds * self.constant + (self.n_sites * self.site_weight)


@dataclass(frozen=True)
class LoopRules:
    """``prob[c, v, k_in, k_out]``: exit-leg distribution for a head entering
    leg ``k_in`` of vertex ``v`` of bond class ``c``."""

    prob: np.ndarray
    max_bounce: float
    heat_bath_groups: int

    def cumulative(self) -> np.ndarray:
        cum = np.cumsum(self.prob, axis=-1)
        for idx in zip(*np.nonzero(self.prob.sum(axis=-1) > 0)):
            last = int(np.nonzero(self.prob[idx] > 0)[0][-1])
            cum[idx][last:] = 1.0
        return cum


def _bits(v: int) -> tuple[int, int, int, int]:
    return v & 1, (v >> 1) & 1, (v >> 2) & 1, (v >> 3) & 1


def build_model(kind: str, geometry: LatticeGeometry, beta: float, **params) -> tuple[ModelSpec, VertexTable]:
    spec = ModelSpec(kind=kind, beta=beta, **params)
    return spec, vertex_table(spec, geometry)


def vertex_table(spec: ModelSpec, geometry: LatticeGeometry) -> VertexTable:
    bonds = np.asarray(geometry.bonds, dtype=np.int64)
    N = geometry.N
    degree = np.bincount(bonds.ravel(), minlength=N).astype(float)
    if spec.kind == XXZ:
        site_field = spec.h_stag * geometry.parity().astype(float)
        jz = -spec.delta
        offdiag = 2.0
        site_weight = 0.0
    else:
        site_field = np.full(N, spec.h_x)
        jz = spec.lam
        offdiag = 0.0
        site_weight = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        per_bond = np.where(degree > 0, site_field / np.maximum(degree, 1), 0.0)
    pairs = np.stack([per_bond[bonds[:, 0]], per_bond[bonds[:, 1]]], axis=1)
    classes, bond_class = np.unique(pairs, axis=0, return_inverse=True)
    bond_class = bond_class.reshape(-1).astype(np.int64)

    field_max = float(np.max(np.abs(classes).sum(axis=1))) if len(classes) else 0.0
    constant = abs(jz) + field_max + spec.epsilon

    diag = np.empty((len(classes), 4))
    vertex = np.zeros((len(classes), 16))
    for c, (fi, fj) in enumerate(classes):
        for bi in (0, 1):
            for bj in (0, 1):
                si, sj = 2 * bi - 1, 2 * bj - 1
                diag[c, bi + 2 * bj] = constant + jz * si * sj + fi * si + fj * sj
        for v in range(16):
            b0, b1, b2, b3 = _bits(v)
            if (b0, b1) == (b2, b3):
                vertex[c, v] = diag[c, b0 + 2 * b1]
            elif b0 != b1 and b2 == b1 and b3 == b0:
                vertex[c, v] = offdiag
    if np.any(diag < 0) or np.any(vertex < 0):
        raise ValueError("negative vertex weight after offset; check model parameters")
    return VertexTable(
        kind=spec.kind,
        bond_sites=bonds,
        bond_class=bond_class,
        diag=diag,
        vertex=vertex,
        offdiag=offdiag,
        site_weight=site_weight,
        constant=constant,
        n_sites=N,
    )


def _solve_group(w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetric non-negative ``a`` with row sums ``w`` and minimal trace."""
    idx = [(k, l) for k in range(4) for l in range(k, 4)]
    A_eq = np.zeros((4, len(idx)))
    for col, (k, l) in enumerate(idx):
        A_eq[k, col] += 1.0
        if k != l:
            A_eq[l, col] += 1.0
    cost = np.array([1.0 if k == l else 0.0 for k, l in idx])
    res = linprog(cost, A_eq=A_eq, b_eq=w, bounds=(0, None), method="highs")
    a = np.zeros((4, 4))
    if res.status != 0:
        total = w.sum()
        return np.outer(w, w) / total, True
    for col, (k, l) in enumerate(idx):
        a[k, l] = a[l, k] = max(res.x[col], 0.0)
    return a, False


def directed_loop_table(table: VertexTable) -> LoopRules:
    """Minimal-bounce directed-loop probabilities for every (vertex, entrance leg).

    All vertices reachable from one another by an entrance/exit flip pair share
    the defect configuration ``u = v ^ (1 << k_in)``; within such a group the
    balance condition ``W(v) P(v, k->l) = W(v') P(v', l->k)`` says the matrix
    ``a[k, l] = W(u ^ 1<<k) P(u ^ 1<<k, k->l)`` is symmetric with row sums equal
    to the weights. The trace of ``a`` (total bounce weight) is minimised by a
    small linear program; heat-bath weights are the fallback.
    """
    if table.kind != XXZ:
        raise ValueError("directed loops are defined for the XXZ model; the TFIM uses cluster updates")
    ncls = table.vertex.shape[0]
    prob = np.zeros((ncls, 16, 4, 4))
    fallback = 0
    for c in range(ncls):
        for u in range(16):
            w = np.array([table.vertex[c, u ^ (1 << k)] for k in range(4)])
            if not np.any(w > 0):
                continue
            a, hb = _solve_group(w)
            fallback += hb
            for k in range(4):
                if w[k] > 0:
                    row = a[k] / w[k]
                    prob[c, u ^ (1 << k), k] = row / row.sum()
    bounce = 0.0
    for c in range(ncls):
        for v in range(16):
            if table.vertex[c, v] > 0:
                bounce = max(bounce, float(np.max(np.diagonal(prob[c, v]))))
    return LoopRules(prob=prob, max_bounce=bounce, heat_bath_groups=fallback)


def fingerprint(spec: ModelSpec, geometry: LatticeGeometry) -> bytes:
    payload = json.dumps(
        {"model": spec.to_dict(), "Lx": geometry.Lx, "Ly": geometry.Ly, "periodic": geometry.periodic},
        sort_keys=True,
    ).encode()
    return hashlib.sha256(payload).digest()
