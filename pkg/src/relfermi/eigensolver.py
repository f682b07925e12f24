"""Lowest eigenpairs of linearized mean-field operators and an SCF loop.

The operators are ``H = K + V`` with ``K`` a Fourier multiplier and ``V`` a
real potential ``-c rho^{1/3}``. Eigenpairs come from a matrix-free block
LOBPCG iteration in the discrete L2 product with a ``1/(K + s)``
preconditioner. Converged columns are soft-locked (they stay in the Ritz
basis but receive no new search directions). The basis holds at most ``3k``
vectors with ``k <= 4``, so restarts are never needed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import functionals as fn
from .errors import GridMismatch, NotConverged, OscillationDetected
from .minimizer import initial_set, multipliers
from .spectral import ComplexField, MultiplierSpectrum, band_mask, project_band
from .state import OrbitalSet, density

log = logging.getLogger(__name__)

MAX_BLOCK = 4
# Ritz basis vectors whose Gram eigenvalue falls below this fraction are dropped
BASIS_CUTOFF = 1e-12


@dataclass
class LinearizedOperator:
    """``multiplier + potential + shift`` restricted to the band selected by ``mask``.

    The kinetic multiplier already contains the ``-m`` shift, so ``shift`` is
    an extra constant (zero in the shipped constructors).
    """

    multiplier: MultiplierSpectrum
    potential: np.ndarray
    shift: float = 0.0
    mask: np.ndarray = None
    coefficient: float = float("nan")

    @property
    def grid(self):
        return self.multiplier.grid

    def __post_init__(self):
        self.potential = np.asarray(self.potential, dtype=float)
        if self.potential.shape != self.grid.shape:
            raise GridMismatch("potential does not live on the multiplier's grid")

    def apply(self, values):
        """Operator applied to a stack of node-value arrays (last three axes)."""
        g = self.grid
        out = g.inverse(self.multiplier.values * g.forward(values)) + self.potential * values
        if self.shift:
            out = out + self.shift * values
        return project_band(out, g, self.mask)

    def project(self, values):
        return project_band(values, self.grid, self.mask)

    @classmethod
    def massive(cls, orbset, a, m, band=1.0):
        """``sqrt(-Lap+m^2) - m - (4a/3) rho^{1/3}`` at the density of ``orbset``."""
        g = orbset.grid
        return cls(
            MultiplierSpectrum.kinetic(g, m),
            fn.energy_potential(density(orbset), a),
            0.0,
            band_mask(g, band) if band < 1 else None,
            4.0 * a / 3.0,
        )

    @classmethod
    def massless(cls, orbset, D, band=1.0):
        """``sqrt(-Lap) - (4/3) D rho^{1/3}`` at the density of ``orbset``."""
        g = orbset.grid
        return cls(
            MultiplierSpectrum.kinetic(g, 0.0),
            fn.quotient_potential(density(orbset), D),
            0.0,
            band_mask(g, band) if band < 1 else None,
            4.0 * D / 3.0,
        )


def apply_H(op, u):
    """Operator applied to one :class:`ComplexField`."""
    if u.grid != op.grid:
        raise GridMismatch(f"field grid {u.grid} != operator grid {op.grid}")
    return ComplexField(op.apply(u.values), u.grid)


@dataclass
class EigenReport:
    eigenvalues: np.ndarray
    vectors: OrbitalSet
    residuals: np.ndarray
    iterations: int
    converged: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def gap(self):
        """``mu_2 - mu_1`` (nan for a single pair)."""
        ev = self.eigenvalues
        return float(ev[1] - ev[0]) if ev.size > 1 else float("nan")

    def classify(self, tol):
        """Labels per eigenvalue: ``"negative"`` below ``-tol``, else ``"indeterminate"`` or ``"positive"``."""
        return [
            "negative" if mu < -tol else ("indeterminate" if mu < 0 else "positive")
            for mu in self.eigenvalues
        ]

    def summary(self):
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "residuals": [float(x) for x in self.residuals],
            "iterations": self.iterations,
            "converged": self.converged,
            "gap": self.gap,
            **self.extra,
        }


def _gram(grid, A, B):
    """Matrix ``<A_i, B_j>`` for stacks of fields."""
    a = A.reshape(A.shape[0], -1)
    b = B.reshape(B.shape[0], -1)
    return grid.cell_volume * (np.conj(a) @ b.T)


def _combine(S, C):
    flat = S.reshape(S.shape[0], -1)
    return (C.T @ flat).reshape((C.shape[1],) + S.shape[1:])


def _orthonormal_basis(grid, S):
    """Orthonormal combinations of ``S`` (SVQB), dropping numerically dependent directions."""
    G = _gram(grid, S, S)
    G = 0.5 * (G + G.conj().T)
    d = np.sqrt(np.maximum(np.real(np.diag(G)), 1e-300))
    Gs = G / np.outer(d, d)
    lam, U = np.linalg.eigh(Gs)
    keep = lam > BASIS_CUTOFF * lam[-1]
    C = (U[:, keep] / np.sqrt(lam[keep])) / d[:, None]
    return _combine(S, C)


def _rayleigh_ritz(op, Q, HQ=None):
    HQ = op.apply(Q) if HQ is None else HQ
    M = _gram(op.grid, Q, HQ)
    theta, C = np.linalg.eigh(0.5 * (M + M.conj().T))
    return theta, C, HQ


def _start_block(op, k, seed):
    """Smooth random block from ``seed``, confined to the operator's band."""
    g = op.grid
    rng = np.random.default_rng(seed)
    shape = (k,) + g.shape
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    # decay with |k| so the start is smooth
    coef = coef / (1.0 + g.k_squared * (g.L / (2.0 * np.pi)) ** 2 / 4.0)
    if op.mask is not None:
        coef = coef * op.mask
    return g.inverse(coef)


def lowest_eigenpairs(op, k, tol=1e-8, max_iters=500, init=None, seed=0):
    """The ``k`` lowest eigenpairs of ``op`` by block LOBPCG.

    Convergence means ``||H v - mu v|| <= tol * max(1, |mu|)`` for every pair.
    Raises :class:`NotConverged` with the partial report otherwise.
    """
    if not 1 <= k <= MAX_BLOCK:
        raise ValueError(f"k must lie in 1..{MAX_BLOCK}")
    g = op.grid
    if init is not None:
        X = np.array(init.orbitals if isinstance(init, OrbitalSet) else init, dtype=np.complex128)
        if X.shape[0] < k:
            X = np.concatenate([X, _start_block(op, k - X.shape[0], seed)])
        X = op.project(X[:k])
    else:
        X = _start_block(op, k, seed)
    X = _orthonormal_basis(g, X)
    if X.shape[0] < k:
        X = _orthonormal_basis(g, np.concatenate([X, _start_block(op, k, seed + 1)]))[:k]
    theta, C, HX = _rayleigh_ritz(op, X)
    X, HX = _combine(X, C), _combine(HX, C)
    P = None
    sym = op.multiplier.values
    res = np.full(k, np.inf)
    it = 0
    for it in range(1, max_iters + 1):
        R = HX - theta[:, None, None, None] * X
        res = np.atleast_1d(g.norm(R))
        active = res > tol * np.maximum(1.0, np.abs(theta))
        if not np.any(active):
            it -= 1
            break
        s = max(float(np.max(np.abs(theta))), float(np.mean(np.abs(op.potential))), g.dk)
        W = g.inverse(g.forward(R[active]) / (sym + s))
        # keep search directions orthogonal to the current Ritz vectors; project last,
        # since near convergence W is tiny and its roundoff would leave the band
        W = W - _combine(X, _gram(g, X, W))
        W = op.project(W)
        blocks = [X, W]
        if P is not None:
            blocks.append(P[active])
        S = _orthonormal_basis(g, np.concatenate(blocks))
        theta_all, C, HS = _rayleigh_ritz(op, S)
        Ck = C[:, :k]
        X_new = _combine(S, Ck)
        HX_new = _combine(HS, Ck)
        # implicit conjugate direction: the part of the update outside span(X)
        P = op.project(X_new - _combine(X, _gram(g, X, X_new)))
        X, HX, theta = X_new, HX_new, theta_all[:k]
    else:
        R = HX - theta[:, None, None, None] * X
        res = np.atleast_1d(g.norm(R))
    converged = bool(np.all(res <= tol * np.maximum(1.0, np.abs(theta))))
    report = EigenReport(theta.copy(), OrbitalSet(X, g), res, it, converged)
    if not converged:
        raise NotConverged(f"LOBPCG residuals {res} above tolerance after {it} iterations", report)
    return report


def align_phase(values):
    """Global phase making the field's largest-modulus node real and positive."""
    flat = values.reshape(-1)
    z = flat[np.argmax(np.abs(flat))]
    return values * (np.conj(z) / abs(z)) if abs(z) > 0 else values


@dataclass
class SCFConfig:
    tol: float = 1e-6
    max_iters: int = 400
    eig_tol: float = 1e-9
    band: float = 1.0
    min_alpha: float = 1.0 / 64.0
    seed: int = 0
    mixing: str = "linear"
    depth: int = 5

    def __post_init__(self):
        if self.tol <= 0 or self.eig_tol <= 0 or self.max_iters <= 0:
            raise ValueError("tolerances and max_iters must be positive")
        if self.mixing not in ("linear", "anderson"):
            raise ValueError(f"unknown mixing {self.mixing!r}")
        if not 0 < self.band <= 1:
            raise ValueError("band must lie in (0, 1]")


def scf_solve(a, m, N, alpha=0.3, cfg=None, init=None, grid=None, D_estimate=None):
    """Self-consistent field iteration ``rho <- (1-alpha) rho + alpha rho_new``.

    ``rho_new`` is the density of the ``N`` lowest eigenvectors of ``H_rho``.
    With ``cfg.mixing == "anderson"`` the linear step is corrected by the
    least-squares combination of the last ``cfg.depth`` residual differences
    (Pulay/Anderson mixing; it reduces to the linear rule on an empty history).
    ``alpha`` is halved each time the density residual
    ``||rho - rho_new||_1 / N`` rises above 1.5 times its running minimum;
    falling below ``cfg.min_alpha`` raises :class:`OscillationDetected`.
    Returns the final eigenvector set and its :class:`EigenReport`.
    """
    cfg = cfg or SCFConfig()
    if a <= 0:
        raise ValueError("coupling must be positive")
    if not 0 < alpha <= 1:
        raise ValueError("mixing alpha must lie in (0, 1]")
    if D_estimate is not None and a >= D_estimate:
        log.warning("a=%.6g >= D estimate %.6g: no ground state expected", a, D_estimate)
    if init is None:
        if grid is None:
            raise ValueError("scf_solve needs an initial set or a grid")
        init = initial_set(grid, N, band=cfg.band)
    g = init.grid
    mask = band_mask(g, cfg.band) if cfg.band < 1 else None
    rho = density(init)
    vecs = init.orbitals
    history = []
    best = np.inf
    report = None
    past = []
    it = 0
    for it in range(1, cfg.max_iters + 1):
        op = LinearizedOperator(MultiplierSpectrum.kinetic(g, m), fn.energy_potential(rho, a), 0.0, mask)
        report = lowest_eigenpairs(op, N, cfg.eig_tol, init=vecs, seed=cfg.seed)
        vecs = report.vectors.orbitals
        rho_new = density(report.vectors)
        r = float(g.integrate(np.abs(rho_new - rho))) / N
        history.append((r, alpha))
        if r <= cfg.tol:
            rho = rho_new
            break
        if r > 1.5 * best:
            alpha *= 0.5
            best = r
            past = []
            log.info("SCF residual rose to %.3e; mixing halved to %.4g", r, alpha)
            if alpha < cfg.min_alpha:
                raise OscillationDetected(
                    f"density residual oscillates (alpha {alpha:.3g} below {cfg.min_alpha:.3g}); "
                    "try a smaller mixing",
                    report,
                )
        best = min(best, r)
        F = rho_new - rho
        step = alpha * F
        if cfg.mixing == "anderson":
            past.append((rho, F))
            past = past[-(cfg.depth + 1):]
            if len(past) > 1:
                dR = np.stack([(b[0] - a_[0]).ravel() for a_, b in zip(past[:-1], past[1:])], axis=1)
                dF = np.stack([(b[1] - a_[1]).ravel() for a_, b in zip(past[:-1], past[1:])], axis=1)
                gamma = np.linalg.lstsq(dF, F.ravel(), rcond=1e-10)[0]
                step = step - ((dR + alpha * dF) @ gamma).reshape(g.shape)
        rho = np.maximum(rho + step, 0.0)
    else:
        report.extra = {"history": history}
        raise NotConverged(f"SCF residual {history[-1][0]:.3e} after {cfg.max_iters} iterations", report)
    final = report.vectors
    # multipliers and residuals of the orbitals' own Hamiltonian
    op = LinearizedOperator.massive(final, a, m, cfg.band)
    final, mu, res, _ = multipliers(final, op.multiplier.values, op.potential, op.mask)
    report.eigenvalues = mu
    report.residuals = res
    report.vectors = final
    report.extra = {
        "scf_iterations": it,
        "alpha": alpha,
        "density_residual": history[-1][0],
        "history": history,
    }
    return final, report
