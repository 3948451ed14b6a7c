"""Effective XY Hamiltonian in fixed-excitation sectors.

Two normalisations coexist in the literature and here:

* the single-excitation walk Hamiltonian uses the coupling J_ij directly as
  the hopping matrix element (build_single_excitation);
* the spin form sum_{i != j} J_ij (sigma^x sigma^x + sigma^y sigma^y),
  summed over ordered pairs, gives a hop amplitude of 4 J_ij inside any
  fixed-excitation sector (build_sector).

Protocol timing formulas are written against the first convention.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.sparse.linalg import expm_multiply

# above this dimension evolve() switches from dense spectral propagation to
# sparse Krylov stepping
DENSE_LIMIT = 4096


class BasisMismatch(ValueError):
    pass


@dataclass
class XYSector:
    """Fixed-excitation block of the XY Hamiltonian.

    basis holds occupation bitmasks (bit i set = excitation on site i),
    ordered ascending; index maps bitmask -> row.
    """

    n_sites: int
    excitations: int
    basis: np.ndarray          # int64 bitmasks
    H: np.ndarray              # Hermitian, rad/s
    _eig: tuple | None = None

    @property
    def dim(self) -> int:
        return len(self.basis)

    def index_of(self, mask: int) -> int:
        i = int(np.searchsorted(self.basis, mask))
        if i >= len(self.basis) or self.basis[i] != mask:
            raise KeyError(f"bitmask {mask:b} not in sector")
        return i

    def eigensystem(self):
        if self._eig is None:
            self._eig = np.linalg.eigh(self.H)
        return self._eig


@dataclass
class StateVector:
    amplitudes: np.ndarray
    sector: XYSector | None = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def sector_basis(n_sites: int, s: int) -> np.ndarray:
    masks = [sum(1 << i for i in c) for c in combinations(range(n_sites), s)]
    return np.array(sorted(masks), dtype=np.int64)


def build_single_excitation(J: np.ndarray,
                            fields: np.ndarray | None = None) -> XYSector:
    """N x N walk Hamiltonian: off-diagonal J_ij as hop amplitudes.

    Any diagonal already present in J (marker projectors, local fields) is
    kept; per-site fields, if given, are added on top.
    """
    n = J.shape[0]
    h = np.array(J, dtype=float)
    if fields is not None:
        h = h + np.diag(fields)
    return XYSector(n_sites=n, excitations=1,
                    basis=sector_basis(n, 1), H=h)


def build_sector(J: np.ndarray, h: np.ndarray | None, s: int) -> XYSector:
    """Fixed-excitation block of sum_{i != j} J (sx sx + sy sy) + sum_j h sz.

    Hop amplitude 4 J_ij between bitmasks related by moving one excitation
    (each unordered pair appears twice in the sum and sx sx + sy sy hops
    with amplitude 2); diagonal sum_j h_j * (+1 if occupied else -1).
    """
    n = J.shape[0]
    if not 0 <= s <= n:
        raise ValueError("excitation count out of range")
    basis = sector_basis(n, s)
    dim = len(basis)
    ham = np.zeros((dim, dim))
    index = {int(m): k for k, m in enumerate(basis)}
    for k, mask in enumerate(basis):
        mask = int(mask)
        if h is not None:
            occ = np.array([(mask >> i) & 1 for i in range(n)])
            ham[k, k] = float(np.dot(h, 2 * occ - 1))
        for i in range(n):
            if not (mask >> i) & 1:
                continue
            for j in range(n):
                if (mask >> j) & 1:
                    continue
                new = mask ^ (1 << i) | (1 << j)
                ham[index[new], k] += 4.0 * J[i, j]
    return XYSector(n_sites=n, excitations=s, basis=basis, H=ham)


def evolve(sector: XYSector, psi0: np.ndarray, t: float) -> StateVector:
    """psi(t) = exp(-i H t) psi0, spectral for small dims, Krylov above."""
    if sector.dim <= DENSE_LIMIT:
        w, v = sector.eigensystem()
        amps = v @ (np.exp(-1j * w * t) * (v.conj().T @ psi0))
    else:
        from scipy.sparse import csr_matrix
        amps = expm_multiply(csr_matrix(-1j * t * sector.H), psi0.astype(complex))
    return StateVector(amplitudes=amps, sector=sector)


def evolve_grid(sector: XYSector, psi0: np.ndarray,
                times: np.ndarray) -> np.ndarray:
    """States on a time grid, rows psi(t_k)."""
    w, v = sector.eigensystem()
    coeffs = v.conj().T @ psi0
    phases = np.exp(-1j * np.outer(times, w))
    return (phases * coeffs[None, :]) @ v.T


def transfer_fidelity(psi: StateVector | np.ndarray, target_site: int,
                      sector: XYSector | None = None) -> float:
    """|<f|psi>|^2 for the single-excitation basis state at target_site."""
    if isinstance(psi, StateVector):
        amps, sector = psi.amplitudes, psi.sector
    else:
        amps = psi
    idx = sector.index_of(1 << target_site)
    return float(np.abs(amps[idx]) ** 2)


def occupations(psi: np.ndarray, sector: XYSector) -> np.ndarray:
    """Expectation of the excitation number on each site."""
    occ = np.zeros(sector.n_sites)
    probs = np.abs(psi) ** 2
    for k, mask in enumerate(sector.basis):
        mask = int(mask)
        for i in range(sector.n_sites):
            if (mask >> i) & 1:
                occ[i] += probs[k]
    return occ
