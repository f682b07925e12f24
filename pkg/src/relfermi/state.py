"""Orbital sets, densities, Gram matrices and Loewdin orthonormalization.

An :class:`OrbitalSet` stores ``N`` orbitals as one ``(N, n, n, n)`` complex
array together with occupations, and represents the density operator
``gamma = sum_j n_j |w_j><w_j|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NearRankDeficient
from .spectral import ComplexField, SpectralGrid, read_checkpoint, write_checkpoint

RANK_THRESHOLD = 1e-12


@dataclass
class OrbitalSet:
    orbitals: np.ndarray
    grid: SpectralGrid
    occupations: np.ndarray = None

    def __post_init__(self):
        orb = np.asarray(self.orbitals, dtype=np.complex128)
        if orb.ndim == 3:
            orb = orb[None]
        if orb.shape[1:] != self.grid.shape:
            raise GridMismatch(f"orbital shape {orb.shape[1:]} != grid {self.grid.shape}")
        self.orbitals = orb
        if self.occupations is None:
            self.occupations = np.ones(orb.shape[0])
        occ = np.asarray(self.occupations, dtype=float).reshape(-1)
        if occ.shape[0] != orb.shape[0]:
            raise ValueError("one occupation per orbital required")
        if np.any(occ <= 0) or np.any(occ > 1):
            raise ValueError("occupations must lie in (0, 1]")
        self.occupations = occ

    @classmethod
    def from_fields(cls, fields, occupations=None):
        fields = list(fields)
        grid = fields[0].grid
        for f in fields[1:]:
            if f.grid != grid:
                raise GridMismatch("all orbitals must share one grid")
        return cls(np.stack([f.values for f in fields]), grid, occupations)

    @property
    def size(self):
        return self.orbitals.shape[0]

    def field(self, j):
        return ComplexField(self.orbitals[j], self.grid)

    def fields(self):
        return [self.field(j) for j in range(self.size)]

    def with_orbitals(self, orbitals, grid=None):
        return OrbitalSet(orbitals, grid or self.grid, self.occupations.copy())

    def copy(self):
        return self.with_orbitals(self.orbitals.copy())


def density(orbset):
    """Pointwise ``rho(x) = sum_j n_j |w_j(x)|^2``."""
    w = orbset.orbitals
    occ = orbset.occupations[:, None, None, None]
    return np.sum(occ * (w.real**2 + w.imag**2), axis=0)


def gram(orbset):
    """Hermitian matrix ``G_ij = <w_i, w_j>``."""
    w = orbset.orbitals.reshape(orbset.size, -1)
    G = orbset.grid.cell_volume * (np.conj(w) @ w.T)
    return 0.5 * (G + G.conj().T)


def inverse_sqrt(G, threshold=RANK_THRESHOLD):
    """``G^{-1/2}`` for Hermitian positive definite ``G``."""
    evals, evecs = np.linalg.eigh(G)
    if evals[0] <= threshold:
        raise NearRankDeficient(evals[0], threshold)
    return (evecs / np.sqrt(evals)) @ evecs.conj().T


def combine(orbitals, C):
    """Frame times coefficient matrix: ``out_j = sum_i orbitals_i C_ij``."""
    N = orbitals.shape[0]
    flat = orbitals.reshape(N, -1)
    return (C.T @ flat).reshape((C.shape[1],) + orbitals.shape[1:])


def loewdin(orbset, threshold=RANK_THRESHOLD):
    """Symmetric orthonormalization ``(w) -> (w) G^{-1/2}``."""
    S = inverse_sqrt(gram(orbset), threshold)
    return orbset.with_orbitals(combine(orbset.orbitals, S))


def translate(values, grid, shift):
    """Periodic translation ``u(x - shift)`` via Fourier phase factors."""
    k = grid.k1d
    phase = (
        np.exp(-1j * k * shift[0])[:, None, None]
        * np.exp(-1j * k * shift[1])[None, :, None]
        * np.exp(-1j * k * shift[2])[None, None, :]
    )
    return grid.inverse(phase * grid.forward(values))


def translated_pair(base, R, axis=(1.0, 0.0, 0.0), threshold=RANK_THRESHOLD):
    """Orthonormal 2N set spanning ``{w_j, w_j(. - R e)}`` (Loewdin of the union)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    if R >= base.grid.L / 2:
        raise ValueError(f"separation R={R} must stay below L/2={base.grid.L / 2}")
    moved = translate(base.orbitals, base.grid, R * axis)
    union = OrbitalSet(
        np.concatenate([base.orbitals, moved]),
        base.grid,
        np.concatenate([base.occupations, base.occupations]),
    )
    return loewdin(union, threshold)


def overlap_block(base, R, axis=(1.0, 0.0, 0.0)):
    """The off-diagonal Gram block ``E_R[i, j] = <w_i, w_j(. - R e)>``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    moved = translate(base.orbitals, base.grid, R * axis)
    a = base.orbitals.reshape(base.size, -1)
    b = moved.reshape(base.size, -1)
    return base.grid.cell_volume * (np.conj(a) @ b.T)


def centroid(rho, grid):
    """Density centroid using circular means (periodic-safe)."""
    out = []
    total = np.sum(rho)
    for ax in range(3):
        theta = 2.0 * np.pi * (np.arange(grid.n) / grid.n)
        marg = np.sum(rho, axis=tuple(a for a in range(3) if a != ax))
        z = np.sum(marg * np.exp(1j * theta)) / total
        idx = np.angle(z) / (2.0 * np.pi) * grid.n
        x = (idx - grid.n // 2) * grid.spacing
        out.append((x + grid.L / 2) % grid.L - grid.L / 2)
    return np.array(out)


def center_on_centroid(orbset):
    """Translate all orbitals so the density centroid sits at the origin."""
    c = centroid(density(orbset), orbset.grid)
    return orbset.with_orbitals(translate(orbset.orbitals, orbset.grid, -c))


def save_orbitals(path, orbset):
    """Store the orbitals in the FVF1 checkpoint layout (occupations are not stored)."""
    write_checkpoint(path, orbset.orbitals, orbset.grid)


def load_orbitals(path, dc="zero"):
    values, grid = read_checkpoint(path, dc)
    return OrbitalSet(values, grid)
