"""Two-spin entanglement measures from Pauli correlators.

Correlators are passed as a mapping ``(a, b) -> <sigma^a_i sigma^b_j>`` with
``a, b in '0xyz'`` (``'0'`` is the identity). The density matrix basis is
``|uu>, |ud>, |du>, |dd>`` in the sz eigenbasis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAULI = {
    "0": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
CHANNELS = [(a, b) for a in "0xyz" for b in "0xyz" if (a, b) != ("0", "0")]
SYSY = np.kron(PAULI["y"], PAULI["y"])

EXACT_TOL = 1e-6
RADICAND_TOL = 1e-9
PSD_TOL = 1e-12


class InvalidStateError(ValueError):
    """Input does not describe a physical two-spin state within tolerance."""


def assemble_rho(correlators) -> np.ndarray:
    """rho = 1/4 sum_ab <sigma^a sigma^b> sigma^a (x) sigma^b, identity included.

    Channels missing from ``correlators`` are taken as zero; callers fill in
    symmetry-forced zeros explicitly (see :func:`xxz_channels`).
    """
    rho = np.kron(PAULI["0"], PAULI["0"]).astype(complex)
    for (a, b), val in correlators.items():
        if (a, b) == ("0", "0"):
            continue
        if np.iscomplexobj(val) and abs(np.imag(val)) > 1e-12:
            raise ValueError(f"channel {a}{b} must be real, got {val}")
        rho = rho + float(np.real(val)) * np.kron(PAULI[a], PAULI[b])
    return rho / 4.0


def correlators_from_rho(rho: np.ndarray) -> dict[tuple[str, str], float]:
    return {(a, b): float(np.real(np.trace(rho @ np.kron(PAULI[a], PAULI[b])))) for a, b in CHANNELS}


def time_reverse(rho: np.ndarray) -> np.ndarray:
    return SYSY @ rho.conj() @ SYSY


def _sqrtm_psd(rho: np.ndarray) -> np.ndarray | None:
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    if w.min() < -PSD_TOL:
        return None
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def rho_rtilde_eigenvalues(rho: np.ndarray, tol: float = EXACT_TOL) -> np.ndarray:
    """Eigenvalues of rho * rho_tilde, descending, negatives within ``tol`` clipped."""
    return sqrt_rho_rtilde_eigenvalues(rho, tol) ** 2


def sqrt_rho_rtilde_eigenvalues(rho: np.ndarray, tol: float = EXACT_TOL) -> np.ndarray:
    """Square roots of the eigenvalues of rho * rho_tilde, descending.

    For PSD rho these are the singular values of sqrt(rho) sqrt(rho_tilde),
    which avoids taking square roots of round-off near zero. Otherwise the
    general eigenvalues of rho * rho_tilde are used (real parts), with
    negatives down to ``-tol`` clipped to zero.
    """
    s = _sqrtm_psd(rho)
    if s is not None:
        st = SYSY @ s.conj() @ SYSY
        return np.linalg.svd(s @ st, compute_uv=False)
    lam = np.sort(np.real(np.linalg.eigvals(rho @ time_reverse(rho))))[::-1]
    if lam[-1] < -tol:
        raise InvalidStateError(f"rho*rho_tilde has eigenvalue {lam[-1]:.3g} below -{tol:g}")
    return np.sqrt(np.clip(lam, 0.0, None))


def concurrence_formation(rho: np.ndarray, tol: float = EXACT_TOL) -> tuple[float, float]:
    """Return ``(C_F, unclamped)`` with unclamped = sqrt(l1) - sqrt(l2) - sqrt(l3) - sqrt(l4)."""
    r = sqrt_rho_rtilde_eigenvalues(rho, tol)
    arg = float(r[0] - r[1] - r[2] - r[3])
    return max(0.0, arg), arg


def concurrence_assistance(rho: np.ndarray, tol: float = EXACT_TOL) -> float:
    return float(sqrt_rho_rtilde_eigenvalues(rho, tol).sum())


def _radical(x: float) -> float:
    if x < -RADICAND_TOL:
        raise InvalidStateError(f"negative radicand {x:.3g}: correlators are unphysical")
    return float(np.sqrt(max(x, 0.0)))


def xxz_concurrence(xx_plus_yy: float, zz: float, z_i: float, z_j: float) -> float:
    """Closed form for U(1)-symmetric states."""
    arg = abs(xx_plus_yy) - _radical((1 + zz) ** 2 - (z_i + z_j) ** 2)
    return 0.5 * max(0.0, arg)


def xxz_assistance(zz: float, z_i: float, z_j: float) -> float:
    return 0.5 * _radical((1 + zz) ** 2 - (z_i + z_j) ** 2) + 0.5 * _radical((1 - zz) ** 2 - (z_i - z_j) ** 2)


def tfim_concurrence(xx: float, yy: float, zz: float, z_i: float, z_j: float) -> float:
    """Closed form for Z2-symmetric states with equal single-site moments.

    The subtracted single-site term in the first branch enters squared, as in
    the XXZ form; the second branch assumes ``z_i == z_j``.
    """
    a = abs(xx + yy) - _radical((1 + zz) ** 2 - (z_i + z_j) ** 2)
    b = abs(xx - yy) - _radical((1 - zz) ** 2)
    return 0.5 * max(0.0, a, b)


def connected_matrix(correlators) -> np.ndarray:
    q = np.empty((3, 3))
    for ia, a in enumerate("xyz"):
        for ib, b in enumerate("xyz"):
            q[ia, ib] = correlators.get((a, b), 0.0) - correlators.get((a, "0"), 0.0) * correlators.get(("0", b), 0.0)
    return q


def connected_q_lower_bound(correlators) -> tuple[np.ndarray, float]:
    """Q matrix of connected correlators and its largest singular value."""
    q = connected_matrix(correlators)
    return q, float(np.linalg.svd(q, compute_uv=False)[0])


def ef_from_concurrence(c: float) -> float:
    if c < -1e-9 or c > 1 + 1e-9:
        raise ValueError(f"concurrence {c} outside [0, 1]")
    c = min(max(c, 0.0), 1.0)
    x = 0.5 + 0.5 * np.sqrt(1 - c * c)
    return float(_binary_entropy(x))


def _binary_entropy(x: float) -> float:
    out = 0.0
    for p in (x, 1 - x):
        if p > 0:
            out -= p * np.log2(p)
    return out


def single_site_entropy(rho_i: np.ndarray, tol: float = 1e-9) -> float:
    if abs(np.trace(rho_i) - 1) > 1e-9:
        raise InvalidStateError("single-site density matrix must have unit trace")
    w = np.linalg.eigvalsh((rho_i + rho_i.conj().T) / 2)
    if w.min() < -tol or w.max() > 1 + tol:
        raise InvalidStateError(f"eigenvalues {w} outside [0, 1]")
    w = np.clip(w, 0, 1)
    return float(-sum(p * np.log2(p) for p in w if p > 0))


def project_psd(rho: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix (negative eigenvalues zeroed), renormalized to unit trace."""
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    w = np.clip(w, 0, None)
    out = (v * w) @ v.conj().T
    return out / np.trace(out).real


@dataclass(frozen=True)
class PairMeasures:
    cf: float
    cf_arg: float
    ef: float
    ca: float
    el_lower: float
    el_upper: float
    min_eig_rho: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cf, self.cf_arg, self.ef, self.ca, self.el_lower, self.el_upper, self.min_eig_rho])

    @staticmethod
    def names() -> list[str]:
        return ["cf", "cf_arg", "ef", "ca", "el_lower", "el_upper", "min_eig_rho"]


def pair_measures(correlators, tol: float = EXACT_TOL, psd_project: bool = False) -> PairMeasures:
    """The full pipeline: rho, C_F, E_F, C_A and both localizable-entanglement bounds."""
    rho = assemble_rho(correlators)
    min_eig = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0])
    if psd_project:
        rho = project_psd(rho)
    cf, arg = concurrence_formation(rho, tol)
    ca = concurrence_assistance(rho, tol)
    _, lower = connected_q_lower_bound(correlators)
    return PairMeasures(cf, arg, ef_from_concurrence(min(cf, 1.0)), ca, lower, ca, min_eig)


def xxz_channels(xx_plus_yy: float, zz: float, z_i: float = 0.0, z_j: float = 0.0) -> dict:
    """Full channel map for a U(1)-symmetric real state: xx = yy, all others zero."""
    half = 0.5 * xx_plus_yy
    return {("x", "x"): half, ("y", "y"): half, ("z", "z"): zz, ("z", "0"): z_i, ("0", "z"): z_j}


def tfim_channels(xx, yy, zz, z_i, z_j, x_i=0.0, x_j=0.0, zx=0.0, xz=0.0) -> dict:
    """Channel map for the TFIM; channels odd in sy vanish for a real Hamiltonian."""
    return {("x", "x"): xx, ("y", "y"): yy, ("z", "z"): zz, ("z", "0"): z_i, ("0", "z"): z_j,
            ("x", "0"): x_i, ("0", "x"): x_j, ("z", "x"): zx, ("x", "z"): xz}
