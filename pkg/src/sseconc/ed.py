"""Exact thermal expectation values for small clusters by full diagonalization.

This is the ground truth the Monte Carlo estimators and the entanglement
formulas are checked against. Everything is dense; sites are ordered with
site 0 as the most significant qubit and ``|0> = |up>`` (sz = +1).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import LatticeGeometry, site_pairs_at_separation
from .model import TFIM, XXZ, ModelSpec

MAX_SITES = 14
MAX_SPARSE_SITES = 20

PAULI = {
    "0": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


@dataclass
class SpectralState:
    energies: np.ndarray
    vectors: np.ndarray
    beta: float
    log_Z: float
    weights: np.ndarray
    n_sites: int

    @property
    def Z(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_Z))


def _check_size(N: int, cap: int = MAX_SITES) -> None:
    if N > cap:
        mem = (2**N) ** 2 * 16 / 2**30
        raise ValueError(f"{N} sites exceeds the exact-diagonalization cap of {cap} (dense H needs ~{mem:.1f} GiB)")


def site_operator(op: np.ndarray, i: int, N: int) -> sp.csr_matrix:
    mats = [sp.identity(2, format="csr", dtype=complex)] * N
    mats = list(mats)
    mats[i] = sp.csr_matrix(op)
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def hamiltonian(spec: ModelSpec, geometry: LatticeGeometry, basis: str = "z") -> np.ndarray:
    """Dense H. ``basis='x'`` rotates every site by a Hadamard (sx eigenbasis)."""
    _check_size(geometry.N)
    return sparse_hamiltonian(spec, geometry, basis).toarray()


def sparse_hamiltonian(spec: ModelSpec, geometry: LatticeGeometry, basis: str = "z") -> sp.csr_matrix:
    N = geometry.N
    _check_size(N, MAX_SPARSE_SITES)
    P = PAULI
    if basis == "x":
        P = {k: HADAMARD @ v @ HADAMARD for k, v in PAULI.items()}
    ops = {a: [site_operator(P[a], i, N) for i in range(N)] for a in "xyz"}
    H = sp.csr_matrix((2**N, 2**N), dtype=complex)
    if spec.kind == XXZ:
        for i, j in geometry.bonds:
            H = H - ops["x"][i] @ ops["x"][j] - ops["y"][i] @ ops["y"][j] + spec.delta * ops["z"][i] @ ops["z"][j]
        if spec.h_stag:
            for i, eps in enumerate(geometry.parity()):
                H = H - spec.h_stag * eps * ops["z"][i]
    elif spec.kind == TFIM:
        for i, j in geometry.bonds:
            H = H - spec.lam * ops["x"][i] @ ops["x"][j]
        for i in range(N):
            H = H - ops["z"][i] - spec.h_x * ops["x"][i]
    return H.tocsr()


def diagonalize(spec: ModelSpec, geometry: LatticeGeometry, beta: float | None = None, basis: str = "z") -> SpectralState:
    beta = spec.beta if beta is None else beta
    H = hamiltonian(spec, geometry, basis)
    e, v = np.linalg.eigh(H)
    x = -beta * (e - e[0])
    w = np.exp(x)
    Z = w.sum()
    return SpectralState(e, v, beta, float(np.log(Z) - beta * e[0]), w / Z, geometry.N)


def lowest_states(spec: ModelSpec, geometry: LatticeGeometry, k: int = 8, beta: float | None = None) -> SpectralState:
    """Boltzmann mixture of the ``k`` lowest eigenstates from a sparse Lanczos solve.

    For clusters beyond the dense cap. Exact at low temperature when the
    weight of level ``k`` is negligible; the returned weights are normalized
    over the kept levels and ``log_Z`` covers those levels only.
    """
    beta = spec.beta if beta is None else beta
    H = sparse_hamiltonian(spec, geometry)
    e, v = spla.eigsh(H, k=k, which="SA", tol=1e-12, v0=np.ones(H.shape[0]) / np.sqrt(H.shape[0]))
    order = np.argsort(e)
    e, v = e[order], v[:, order]
    w = np.exp(-beta * (e - e[0]))
    Z = w.sum()
    return SpectralState(e, v, beta, float(np.log(Z) - beta * e[0]), w / Z, geometry.N)


def thermal_density_matrix(state: SpectralState) -> np.ndarray:
    return (state.vectors * state.weights) @ state.vectors.conj().T


def thermal_expectation(state: SpectralState, op) -> float:
    rho = thermal_density_matrix(state)
    val = np.sum(rho.T * (op.toarray() if sp.issparse(op) else op))
    return float(val.real)


def thermal_energy(spec: ModelSpec, geometry: LatticeGeometry) -> float:
    st = diagonalize(spec, geometry)
    return float(np.dot(st.weights, st.energies))


def exact_two_site_rho(spec: ModelSpec, geometry: LatticeGeometry, i: int, j: int, beta: float | None = None) -> np.ndarray:
    """Partial trace of the thermal state over every site except ``i`` and ``j``."""
    if i == j:
        raise ValueError("sites must differ")
    st = diagonalize(spec, geometry, beta)
    N = geometry.N
    rest = [k for k in range(N) if k not in (i, j)]
    psi = st.vectors.T.reshape([-1] + [2] * N)
    psi = np.transpose(psi, [0, i + 1, j + 1] + [k + 1 for k in rest]).reshape(len(st.weights), 4, -1)
    return np.einsum("k,kar,kbr->ab", st.weights, psi, psi.conj())


def exact_single_site_rho(spec: ModelSpec, geometry: LatticeGeometry, i: int, beta: float | None = None) -> np.ndarray:
    st = diagonalize(spec, geometry, beta)
    N = geometry.N
    psi = st.vectors.T.reshape([-1] + [2] * N)
    psi = np.moveaxis(psi, i + 1, 1).reshape(len(st.weights), 2, -1)
    return np.einsum("k,kar,kbr->ab", st.weights, psi, psi.conj())


def exact_pair_correlators(state: SpectralState, i: int, j: int) -> dict[tuple[str, str], float]:
    """All 15 nontrivial <sigma^a_i sigma^b_j> from full-space operators."""
    N = state.n_sites
    keep = state.weights > 1e-16
    w, V = state.weights[keep], state.vectors[:, keep]
    out = {}
    for a in "0xyz":
        for b in "0xyz":
            if a == "0" and b == "0":
                continue
            op = sp.identity(2**N, format="csr", dtype=complex)
            if a != "0":
                op = op @ site_operator(PAULI[a], i, N)
            if b != "0":
                op = op @ site_operator(PAULI[b], j, N)
            out[(a, b)] = float(np.sum(w * np.sum(V.conj() * (op @ V), axis=0)).real)
    return out


def exact_thermal_correlators(spec: ModelSpec, geometry: LatticeGeometry, separations, beta: float | None = None) -> dict:
    """Translation-averaged exact channels, keyed by canonical separation.

    Each value maps ``(a, b)`` with ``a, b in '0xyz'`` to the average of
    ``<sigma^a_i sigma^b_j>`` over all pairs at that separation. Single-site
    means come along as the ``('z', '0')``/``('0', 'z')`` style channels.
    """
    st = diagonalize(spec, geometry, beta)
    table = {}
    for sep in separations:
        pairs = site_pairs_at_separation(geometry, sep)
        acc = None
        for i, j in pairs:
            c = exact_pair_correlators(st, i, j)
            acc = c if acc is None else {k: acc[k] + c[k] for k in acc}
        table[geometry.canonical(sep)] = {k: v / len(pairs) for k, v in acc.items()}
    return table


def exact_staggered(spec: ModelSpec, geometry: LatticeGeometry, axis: str = "z") -> dict[str, float]:
    """<m>, <m^2>, <ms>, <ms^2> of the per-site uniform and staggered moments."""
    st = diagonalize(spec, geometry)
    N = geometry.N
    par = geometry.parity()
    ops = [site_operator(PAULI[axis], i, N) for i in range(N)]
    m = sum(ops) / N
    ms = sum(p * o for p, o in zip(par, ops)) / N
    return {
        "m": thermal_expectation(st, m),
        "m2": thermal_expectation(st, m @ m),
        "ms": thermal_expectation(st, ms),
        "ms2": thermal_expectation(st, ms @ ms),
    }
