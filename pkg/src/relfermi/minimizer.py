"""Minimization over orthonormal orbital frames.

Both the massive energy and the massless quotient are minimized by projected
(preconditioned, optionally conjugate) gradient descent: the gradient is
projected onto the tangent space of the orthonormality constraint, a trial
step is retracted back with Loewdin orthonormalization, and the step length
is chosen by Armijo backtracking on the directional derivative.

Orbitals may be restricted to a ball of frequencies ``|f| <= band * n/2``.
With the full band the discrete quotient is lowered by single-cell spikes
(aliasing of ``|w|^2`` and ``rho^{4/3}``), so production runs use
``band = DEALIAS_BAND`` on a grid with the ``"cell"`` DC policy; the
scale-free quotient then has genuine local minimizers on the grid.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functionals as fn
from .errors import DegenerateField, DivergingObjective, MaxItersExceeded
from .spectral import band_mask, gaussian, kinetic_symbol, project_band, rescale_box
from .state import OrbitalSet, combine, density, loewdin

log = logging.getLogger(__name__)

DEALIAS_BAND = 2.0 / 3.0
# largest first-trial displacement per orbital (in L2 norm) of a line search
MAX_MOVE = 0.5
MAX_BACKTRACKS = 60


@dataclass
class MinimizeConfig:
    max_iters: int = 3000
    grad_tol: float = 1e-6
    step_init: float = 1.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    normalize_mode: str = "none"
    seed: int = 0
    method: str = "cg"
    band: float = 1.0
    trace_path: str = None
    raise_on_maxiter: bool = False

    def __post_init__(self):
        if self.max_iters <= 0 or self.grad_tol <= 0 or self.step_init <= 0:
            raise ValueError("max_iters, grad_tol and step_init must be positive")
        if not 0 < self.armijo_c < 1 or not 0 < self.armijo_shrink < 1:
            raise ValueError("Armijo parameters must lie in (0, 1)")
        if self.normalize_mode not in ("none", "unit_massless_kinetic"):
            raise ValueError(f"unknown normalize_mode {self.normalize_mode!r}")
        if self.method not in ("sd", "cg"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.band <= 1:
            raise ValueError("band must lie in (0, 1]")

    def as_dict(self):
        return asdict(self)


@dataclass
class MinimizeReport:
    final_set: OrbitalSet
    objective: float
    projected_grad_norm: float
    iterations: int
    converged: bool
    multipliers: np.ndarray
    residuals: np.ndarray
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def mu(self):
        return self.multipliers

    def summary(self):
        return {
            "objective": self.objective,
            "projected_grad_norm": self.projected_grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "multipliers": [float(x) for x in self.multipliers],
            "residuals": [float(x) for x in self.residuals],
            **self.extra,
        }


def initial_set(grid, N, seed=None, noise=0.0, width=None, band=1.0):
    """Gaussian of width ``L/8`` times ``{1, x, y, z}`` factors, Loewdin orthonormalized.

    With ``noise > 0`` each orbital is multiplied by ``1 + noise * r`` where ``r``
    is a smooth random field drawn from ``seed``. The result is projected onto
    the frequency ball selected by ``band``.
    """
    if not 1 <= N <= 4:
        raise ValueError("N must be 1..4")
    width = grid.L / 8 if width is None else width
    g = gaussian(grid, width).values
    x, y, z = grid.coords()
    factors = [1.0, x / width, y / width, z / width]
    orbs = np.stack([g * f for f in factors[:N]])
    if noise > 0:
        rng = np.random.default_rng(seed)
        mask = grid.k_abs <= 4.0 / width
        for j in range(N):
            coef = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * mask
            r = grid.inverse(coef)
            r /= np.max(np.abs(r))
            orbs[j] = orbs[j] * (1.0 + noise * r)
    if band < 1.0:
        orbs = project_band(orbs, grid, band_mask(grid, band))
    return loewdin(OrbitalSet(orbs, grid))


def project_tangent(orbset, grads):
    """Remove the constraint-normal part: ``d = g - W sym(W^H g)``."""
    W = orbset.orbitals
    N = W.shape[0]
    A = orbset.grid.cell_volume * (np.conj(W.reshape(N, -1)) @ grads.reshape(N, -1).T)
    S = 0.5 * (A + A.conj().T)
    return grads - combine(W, S)


def _real_inner(grid, a, b):
    return float(grid.cell_volume * np.sum(a.real * b.real + a.imag * b.imag))


def _retract(orbset, step, direction):
    return loewdin(orbset.with_orbitals(orbset.orbitals + step * direction))


class _EnergyProblem:
    def __init__(self, a, m):
        self.a = a
        self.m = m

    def value(self, orbset):
        return fn.energy(orbset, self.a, self.m, check=False).total

    def value_and_gradient(self, orbset):
        e = fn.energy(orbset, self.a, self.m, check=False)
        return e.total, fn.energy_gradient(orbset, self.a, self.m, check=False)

    def hamiltonian(self, orbset):
        g = orbset.grid
        return kinetic_symbol(g, self.m), fn.energy_potential(density(orbset), self.a)

    def precondition(self, orbset, r):
        g = orbset.grid
        sym = kinetic_symbol(g, self.m)
        per_orb, _ = fn.kinetic_traces(orbset, self.m)
        # shift by the mean orbital kinetic energy (plane-wave style preconditioner)
        shift = max(float(np.mean(per_orb)), 1e-3 * max(self.m, 1.0))
        return g.inverse(g.forward(r) * (shift / (sym + shift)))

    def residual_scale(self, orbset):
        """Converts the Frobenius norm of the tangent gradient into an EL residual."""
        if self.m > 0:
            return 2.0 * self.m
        return 2.0 * max(fn.kinetic_traces(orbset, 0.0)[1] / orbset.size, 1e-300)


class _QuotientProblem:
    def value(self, orbset):
        return fn.lt_quotient(orbset, check=False).quotient

    def value_and_gradient(self, orbset):
        Q, grad, _, _ = fn.quotient_value_and_gradient(orbset)
        return Q, grad

    def hamiltonian(self, orbset):
        Q = fn.lt_quotient(orbset, check=False).quotient
        return kinetic_symbol(orbset.grid, 0.0), fn.quotient_potential(density(orbset), Q)

    def precondition(self, orbset, r):
        g = orbset.grid
        _, T = fn.kinetic_traces(orbset, 0.0)
        c = T / orbset.size
        return g.inverse(g.forward(r) * (c / (kinetic_symbol(g, 0.0) + c)))

    def residual_scale(self, orbset):
        # the gradient is (2/P) H* w; report the residual of H* relative to T/N
        q = fn.lt_quotient(orbset, check=False)
        return 2.0 * q.massless_kinetic / (orbset.size * q.lp_interaction)


def subspace_mask(grid, band):
    """Frequency-ball mask for ``band < 1``; ``None`` means the full grid."""
    return band_mask(grid, band) if band < 1.0 else None


def multipliers(orbset, symbol, potential, mask=None):
    """Diagonalize ``<w_i, H w_j>`` and rotate the frame onto its eigenbasis.

    With a subspace ``mask`` the operator is compressed to that subspace.
    Returns ``(rotated_set, mu, residual_norms, hermiticity_error)``.
    """
    g = orbset.grid
    W = orbset.orbitals
    N = W.shape[0]
    HW = fn.apply_hamiltonian(W, g, symbol, potential)
    HW = project_band(HW, g, mask)
    M = g.cell_volume * (np.conj(W.reshape(N, -1)) @ HW.reshape(N, -1).T)
    herm_err = float(np.max(np.abs(M - M.conj().T)))
    mu, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    W2 = combine(W, U)
    HW2 = combine(HW, U)
    res = g.norm(HW2 - mu[:, None, None, None] * W2)
    return orbset.with_orbitals(W2), mu, np.atleast_1d(res), herm_err


def _descend(problem, init, cfg, guard=None, callback=None):
    """Core loop shared by the energy and quotient minimizers.

    ``callback(orbset, value)`` sees the starting point and every accepted iterate.
    """
    grid = init.grid
    mask = subspace_mask(grid, cfg.band)

    def sub(x):
        return project_band(x, grid, mask)

    orbset = loewdin(init.with_orbitals(sub(init.orbitals)))
    f, G = problem.value_and_gradient(orbset)
    if callback is not None:
        callback(orbset, f)
    history = []
    step = cfg.step_init
    d_prev = z_prev = rz_prev = None
    converged = False
    gnorm = float("nan")
    it = 0
    trace_file = open(cfg.trace_path, "w", newline="") if cfg.trace_path else None
    trace = csv.writer(trace_file) if trace_file else None
    if trace:
        trace.writerow(["iteration", "objective", "grad_norm", "step"])
    try:
        for it in range(cfg.max_iters + 1):
            R = project_tangent(orbset, sub(G))
            gnorm = math.sqrt(_real_inner(grid, R, R)) / problem.residual_scale(orbset)
            history.append((float(f), gnorm))
            if trace:
                trace.writerow([it, repr(float(f)), repr(gnorm), repr(step)])
            if gnorm <= cfg.grad_tol:
                converged = True
                break
            if it == cfg.max_iters:
                break
            Z = project_tangent(orbset, sub(problem.precondition(orbset, R)))
            rz = _real_inner(grid, R, Z)
            D = -Z
            if cfg.method == "cg" and d_prev is not None:
                # Polak-Ribiere+ with projection as vector transport
                d_t = project_tangent(orbset, d_prev)
                z_t = project_tangent(orbset, z_prev)
                beta = max(0.0, (rz - _real_inner(grid, R, z_t)) / rz_prev)
                D = -Z + beta * d_t
            slope = _real_inner(grid, R, D)
            if slope >= 0:
                D = -Z
                slope = -rz
            dnorm = math.sqrt(_real_inner(grid, D, D) / orbset.size)
            s = min(step, MAX_MOVE / dnorm) if dnorm > 0 else step
            first = s
            accepted = False
            for _ in range(MAX_BACKTRACKS):
                trial = _retract(orbset, s, D)
                try:
                    ft = problem.value(trial)
                except DegenerateField:
                    ft = float("inf")
                if ft <= f + cfg.armijo_c * s * slope:
                    accepted = True
                    break
                if np.isfinite(ft):
                    # minimizer of the quadratic through f, slope and ft, safeguarded
                    curv = 2.0 * (ft - f - slope * s)
                    s_q = -slope * s * s / curv if curv > 0 else cfg.armijo_shrink * s
                    s = min(max(s_q, 0.1 * s), cfg.armijo_shrink * s)
                else:
                    s *= cfg.armijo_shrink
            if not accepted:
                log.info("line search stalled at iteration %d (grad %.3e)", it, gnorm)
                break
            step = 2.0 * s if s == first else s
            orbset = trial
            f_new, G = problem.value_and_gradient(orbset)
            if guard is not None:
                guard(f_new)
            f = f_new
            if callback is not None:
                callback(orbset, f)
            d_prev, z_prev, rz_prev = D, Z, rz
    finally:
        if trace_file:
            trace_file.close()
    return orbset, f, gnorm, it, converged, history


def minimize_energy(init, a, m, cfg=None, D_estimate=None, callback=None):
    """Ground state of ``E_a`` over orthonormal frames of size ``init.size``.

    Raises :class:`DivergingObjective` once the energy drops below
    ``-10 m N``; with ``cfg.raise_on_maxiter`` an unconverged run raises
    :class:`MaxItersExceeded` carrying the report.
    """
    cfg = cfg or MinimizeConfig()
    N = init.size
    if D_estimate is not None and a >= D_estimate:
        log.warning("a=%.6g >= D estimate %.6g: the infimum may be -infinity", a, D_estimate)
    problem = _EnergyProblem(a, m)
    floor = -10.0 * m * N

    def guard(value):
        if m > 0 and value < floor:
            raise DivergingObjective(f"energy {value:.6g} fell below collapse guard {floor:.6g}")

    orbset, f, gnorm, it, conv, hist = _descend(problem, init, cfg, guard, callback)
    symbol, pot = problem.hamiltonian(orbset)
    orbset, mu, res, herm = multipliers(orbset, symbol, pot, subspace_mask(orbset.grid, cfg.band))
    e = fn.energy(orbset, a, m)
    report = MinimizeReport(
        orbset, e.total, gnorm, it, conv, mu, res, hist,
        {"energy": e.as_dict(), "hermiticity_error": herm, "kind": "energy", "band": cfg.band},
    )
    if not conv and cfg.raise_on_maxiter:
        raise MaxItersExceeded(f"no convergence in {cfg.max_iters} iterations", report)
    return report


def normalize_unit_kinetic(orbset):
    """Relabel the box so that ``tr(sqrt(-Lap) gamma) = 1`` (exact dilation)."""
    _, T = fn.kinetic_traces(orbset, 0.0)
    vals, grid = rescale_box(orbset.orbitals, orbset.grid, 1.0 / T)
    return orbset.with_orbitals(vals, grid)


def to_grid(orbset, grid):
    """Undo a box relabeling: express ``orbset`` on ``grid`` (same ``n``)."""
    if grid.n != orbset.grid.n:
        raise ValueError("relabeling keeps the node count")
    t = grid.L / orbset.grid.L
    return orbset.with_orbitals(orbset.orbitals * t**-1.5, grid)


def minimize_quotient(init, cfg=None, callback=None):
    """Minimize ``tr(sqrt(-Lap) gamma) / int rho^{4/3}`` over orthonormal frames.

    The quotient and the preconditioner are dilation covariant, so iterating on
    a fixed box and relabeling once at the end is the same as renormalizing
    every iterate to unit kinetic trace.
    """
    cfg = cfg or MinimizeConfig(normalize_mode="unit_massless_kinetic")
    problem = _QuotientProblem()
    orbset, f, gnorm, it, conv, hist = _descend(problem, init, cfg, callback=callback)
    if cfg.normalize_mode == "unit_massless_kinetic":
        orbset = normalize_unit_kinetic(orbset)
    symbol, pot = problem.hamiltonian(orbset)
    orbset, mu, res, herm = multipliers(orbset, symbol, pot, subspace_mask(orbset.grid, cfg.band))
    q = fn.lt_quotient(orbset)
    report = MinimizeReport(
        orbset, q.quotient, gnorm, it, conv, mu, res, hist,
        {"quotient": q.as_dict(), "hermiticity_error": herm, "kind": "quotient", "band": cfg.band},
    )
    if not conv and cfg.raise_on_maxiter:
        raise MaxItersExceeded(f"no convergence in {cfg.max_iters} iterations", report)
    return report
