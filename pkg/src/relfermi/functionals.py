"""Scalar objectives on orbital sets and their first variations.

Gradient convention: for a real functional ``F`` of complex fields the
gradient ``g`` is defined by ``dF = Re <g, dw>`` with the discrete L2 product,
which puts a factor 2 in front of every ``H w`` term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateField, NotOrthonormal
from .spectral import SpectralGrid, dc_bias_estimate, kinetic_symbol, ComplexField
from .state import density, gram

ORTHO_TOL = 1e-8
DEGENERATE_T = 1e-14


@dataclass
class EnergyBreakdown:
    kinetic_massive: float
    interaction: float
    total: float
    a: float
    m: float
    massless_kinetic: float = float("nan")

    def as_dict(self):
        return {
            "kinetic_massive": self.kinetic_massive,
            "interaction": self.interaction,
            "total": self.total,
            "a": self.a,
            "m": self.m,
            "massless_kinetic": self.massless_kinetic,
        }


@dataclass
class QuotientReport:
    massless_kinetic: float
    lp_interaction: float
    quotient: float
    grid: SpectralGrid

    def as_dict(self):
        return {
            "massless_kinetic": self.massless_kinetic,
            "lp_interaction": self.lp_interaction,
            "quotient": self.quotient,
            "grid": {"n": self.grid.n, "L": self.grid.L},
        }


@dataclass
class VirialReport:
    lhs: float
    rhs: float
    residual: float
    note: str = ""

    def as_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "residual": self.residual, "note": self.note}


def check_orthonormal(orbset, tol=ORTHO_TOL):
    dev = np.max(np.abs(gram(orbset) - np.eye(orbset.size)))
    if dev > tol:
        raise NotOrthonormal(f"Gram deviation {dev:.2e} exceeds {tol:.0e}")
    return dev


def spectral_weights(orbitals, grid):
    """``|w_hat_j(k)|^2`` for every orbital and the transforms themselves."""
    wh = grid.forward(orbitals)
    return wh, wh.real**2 + wh.imag**2


def lp_integral(rho, grid):
    """``int rho^{4/3}``."""
    return float(grid.integrate(np.cbrt(rho) * rho))


def kinetic_traces(orbset, m):
    """Per-orbital massive kinetic terms and the massless trace ``tr(|k| gamma)``."""
    g = orbset.grid
    _, w2 = spectral_weights(orbset.orbitals, g)
    occ = orbset.occupations
    per_orb = np.sum(kinetic_symbol(g, m) * w2, axis=(-3, -2, -1))
    sym0 = per_orb if m == 0 else np.sum(kinetic_symbol(g, 0.0) * w2, axis=(-3, -2, -1))
    T = float(np.sum(occ * sym0))
    return per_orb, T


def energy(orbset, a, m, check=True):
    """Energy ``tr((sqrt(-Lap+m^2) - m) gamma) - a int rho^{4/3}``."""
    if a < 0 or m < 0:
        raise ValueError("coupling and mass must be nonnegative")
    if check:
        check_orthonormal(orbset)
    per_orb, T = kinetic_traces(orbset, m)
    kin = float(np.sum(orbset.occupations * per_orb))
    inter = a * lp_integral(density(orbset), orbset.grid)
    return EnergyBreakdown(kin, inter, kin - inter, float(a), float(m), T)


def apply_hamiltonian(orbitals, grid, symbol, potential):
    """``(symbol(-i grad) + potential) w`` for every orbital in the stack."""
    return grid.inverse(symbol * grid.forward(orbitals)) + potential * orbitals


def energy_potential(rho, a):
    """Mean-field potential ``-(4a/3) rho^{1/3}``."""
    return -(4.0 * a / 3.0) * np.cbrt(rho)


def energy_gradient(orbset, a, m, check=True):
    """Real gradient ``2 [(sqrt(-Lap+m^2) - m) w_i - (4a/3) rho^{1/3} w_i]``.

    Returned as a ``(N, n, n, n)`` array aligned with ``orbset.orbitals``.
    Occupations weight each orbital's row.
    """
    if check:
        check_orthonormal(orbset)
    g = orbset.grid
    H = apply_hamiltonian(
        orbset.orbitals, g, kinetic_symbol(g, m), energy_potential(density(orbset), a)
    )
    return 2.0 * orbset.occupations[:, None, None, None] * H


def lt_quotient(orbset, check=True):
    """Scale-free quotient ``tr(sqrt(-Lap) gamma) / int rho^{4/3}`` at unit occupations."""
    if check:
        check_orthonormal(orbset)
    _, T = kinetic_traces(orbset, 0.0)
    if T <= DEGENERATE_T:
        raise DegenerateField(f"massless kinetic trace {T:.3e} vanishes")
    P = lp_integral(density(orbset), orbset.grid)
    # ||gamma||^{1/3} factor: largest occupation
    norm_factor = float(np.max(orbset.occupations)) ** (1.0 / 3.0)
    return QuotientReport(T, P, norm_factor * T / P, orbset.grid)


def quotient_potential(rho, D):
    """Mean-field potential ``-(4/3) D rho^{1/3}`` of the massless system."""
    return -(4.0 / 3.0) * D * np.cbrt(rho)


def quotient_value_and_gradient(orbset):
    """Quotient and its real gradient ``(2/P) [|k| w - (4/3) Q rho^{1/3} w]``."""
    g = orbset.grid
    w = orbset.orbitals
    wh = g.forward(w)
    w2 = wh.real**2 + wh.imag**2
    sym = kinetic_symbol(g, 0.0)
    T = float(np.sum(sym * w2))
    if T <= DEGENERATE_T:
        raise DegenerateField(f"massless kinetic trace {T:.3e} vanishes")
    rho = density(orbset)
    c = np.cbrt(rho)
    P = float(g.integrate(c * rho))
    Q = T / P
    Hw = g.inverse(sym * wh) - (4.0 / 3.0) * Q * c * w
    return Q, (2.0 / P) * Hw, T, P


def dstar_terms(orbset):
    """``(tr(|k| gamma), tr(gamma/|k|), dc_weight)``.

    The k=0 bin of ``1/|k|`` follows the grid's DC policy: dropped for
    ``"zero"``, the cell average for ``"cell"``. ``dc_weight`` is what the
    cell average contributes to ``tr(gamma/|k|)``; it is the bias estimate of
    the dropped bin in the first case and the included share in the second.
    """
    g = orbset.grid
    _, w2 = spectral_weights(orbset.orbitals, g)
    occ = orbset.occupations[:, None, None, None]
    T = float(np.sum(occ * kinetic_symbol(g, 0.0) * w2))
    inv = np.zeros(g.shape)
    nz = g.k_abs > 0
    inv[nz] = 1.0 / g.k_abs[nz]
    bias = sum(
        n_j * dc_bias_estimate(ComplexField(w, g))
        for n_j, w in zip(orbset.occupations, orbset.orbitals)
    )
    Tinv = float(np.sum(occ * inv * w2))
    if g.dc == "cell":
        Tinv += bias
    return T, Tinv, bias


def dstar_product(orbset, check=True):
    """Scale-invariant ``tr(sqrt(-Lap) gamma) * tr(gamma / sqrt(-Lap))``."""
    if check:
        check_orthonormal(orbset)
    T, Tinv, _ = dstar_terms(orbset)
    if T <= DEGENERATE_T:
        raise DegenerateField(f"massless kinetic trace {T:.3e} vanishes")
    return T * Tinv


def virial_residual(orbset, D, mus, massless=True):
    """Pohozaev-type balance ``T - 1.5 D P`` against ``1.5 sum mu_j ||w_j||^2``.

    Only meaningful for solutions of the massless system with coupling
    ``(4/3) D``; for massive minimizers a flagged no-op report is returned.
    """
    if not massless:
        return VirialReport(float("nan"), float("nan"), float("nan"), "massless-only identity")
    g = orbset.grid
    _, T = kinetic_traces(orbset, 0.0)
    P = lp_integral(density(orbset), g)
    norms = g.norm(orbset.orbitals) ** 2
    lhs = T - 1.5 * D * P
    rhs = 1.5 * float(np.sum(np.asarray(mus) * norms))
    res = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)
    return VirialReport(float(lhs), float(rhs), float(res))


def energy_lower_bound(orbset, a, m, D):
    """``(1 - a/D) tr(sqrt(-Lap) gamma) - m tr(gamma)``, valid whenever ``D`` is the sharp constant."""
    _, T = kinetic_traces(orbset, 0.0)
    return (1.0 - a / D) * T - m * float(np.sum(orbset.occupations))
