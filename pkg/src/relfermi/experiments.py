"""Numerical experiments built on the minimizer and eigensolver.

Every experiment runs on grids with the ``"cell"`` DC policy and orbitals
band-limited to ``band * n/2``. Quotient optimizers are scale free, so only
their width in grid cells matters; massive ground states are not, and their
box is chosen by minimizing the converged energy over ``log L`` at fixed
``n`` (each trial box is reached by exact relabeling of the best set so far).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import minimize_scalar

from . import functionals as fn
from .eigensolver import LinearizedOperator, SCFConfig, lowest_eigenpairs, scf_solve
from .errors import InsufficientRecords, InvariantViolation
from .minimizer import (
    DEALIAS_BAND,
    MinimizeConfig,
    initial_set,
    minimize_energy,
    minimize_quotient,
    normalize_unit_kinetic,
    to_grid,
)
from .spectral import make_grid, rescale_box
from .state import (
    OrbitalSet,
    center_on_centroid,
    density,
    loewdin,
    overlap_block,
    translated_pair,
)

log = logging.getLogger(__name__)

# lower bound on the d_* product, from Cauchy-Schwarz with tr(gamma) = 2
DSTAR_FLOOR = 4.0
RESOLUTION_CELLS = 4.0
MIN_FIT_RECORDS = 4


@dataclass
class ExperimentConfig:
    n: int = 32
    L: float = 32.0
    m: float = 1.0
    band: float = DEALIAS_BAND
    dc: str = "cell"
    seeds: tuple = (0,)
    noise: float = 0.3
    width_cells: float = 4.0
    grad_tol: float = 1e-6
    max_iters: int = 3000
    refine: bool = False
    box_tol: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.m < 0:
            raise ValueError("mass must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        make_grid(self.n, self.L, self.dc)

    def grid(self, n=None, L=None):
        return make_grid(n or self.n, self.L if L is None else L, self.dc)

    def minimize_config(self, **kw):
        return MinimizeConfig(
            max_iters=self.max_iters, grad_tol=self.grad_tol, band=self.band, **kw
        )


# ---------------------------------------------------------------- constants


@dataclass
class DEstimate:
    N: int
    value: float
    optimizer: OrbitalSet
    values: list
    converged: list
    spread: float
    delta: float = float("nan")
    refined_value: float = float("nan")
    reports: list = field(default_factory=list, repr=False)

    def __iter__(self):
        # unpacks as (D_hat, optimizer)
        return iter((self.value, self.optimizer))

    @property
    def all_converged(self):
        return all(self.converged)

    def summary(self):
        return {
            "N": self.N,
            "D_hat": self.value,
            "values": self.values,
            "converged": self.converged,
            "spread": self.spread,
            "grid_doubling_delta": self.delta,
            "refined_value": self.refined_value,
        }


def _quotient_run(args):
    grid, N, seed, noise, width, cfg = args
    init = initial_set(grid, N, seed=seed, noise=noise if seed else 0.0, width=width, band=cfg.band)
    return minimize_quotient(init, cfg)


def _map(fn_, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn_, jobs))
    return [fn_(j) for j in jobs]


def upsample(orbset, factor=2):
    """Same box, ``factor`` times more nodes (trigonometric interpolation)."""
    g = orbset.grid
    n2 = factor * g.n
    g2 = g.resized(n2, g.L)
    idx = np.mod(g.frequencies, n2)
    coef = np.zeros((orbset.size,) + g2.shape, dtype=np.complex128)
    coef[:, idx[:, None, None], idx[None, :, None], idx[None, None, :]] = g.forward(orbset.orbitals)
    return loewdin(orbset.with_orbitals(g2.inverse(coef), g2))


def estimate_D(N, cfg=None):
    """Best quotient over multi-start runs; optimizer returned at unit kinetic trace.

    Seed 0 starts from the deterministic Gaussian frame, other seeds add
    smooth multiplicative noise. With ``cfg.refine`` the best optimizer is
    interpolated to ``2n`` nodes on the same box and re-minimized; ``delta``
    is the relative change of the estimate.
    """
    cfg = cfg or ExperimentConfig()
    if not 1 <= N <= 3:
        raise ValueError("N must be 1..3")
    grid = cfg.grid()
    mcfg = cfg.minimize_config(normalize_mode="unit_massless_kinetic")
    width = cfg.width_cells * grid.spacing
    jobs = [(grid, N, s, cfg.noise, width, mcfg) for s in cfg.seeds]
    reports = _map(_quotient_run, jobs, cfg.workers)
    values = [r.objective for r in reports]
    best = int(np.argmin(values))
    spread = (max(values) - min(values)) / min(values)
    est = DEstimate(
        N, values[best], reports[best].final_set, values,
        [r.converged for r in reports], spread, reports=reports,
    )
    if cfg.refine:
        fine = upsample(reports[best].final_set)
        rep = minimize_quotient(fine, mcfg)
        est.refined_value = rep.objective
        est.delta = abs(rep.objective - est.value) / est.value
        est.converged.append(rep.converged)
        est.reports.append(rep)
    return est


@dataclass
class DStarEstimate:
    value: float
    optimizer: OrbitalSet
    products: list
    dc_bias: float
    dc_bias_doubled: float

    def summary(self):
        return {
            "d_star_hat": self.value,
            "products": self.products,
            "dc_bias": self.dc_bias,
            "dc_bias_relative": self.dc_bias / self.value,
            "dc_bias_box_doubled": self.dc_bias_doubled,
        }


def box_doubled(orbset):
    """Embed the set into a box of twice the side at the same spacing (zero padding)."""
    g = orbset.grid
    n = g.n
    g2 = g.resized(2 * n, 2 * g.L)
    out = np.zeros((orbset.size,) + g2.shape, dtype=np.complex128)
    # origin sits at index n // 2 before and at index n after
    sl = slice(n // 2, n // 2 + n)
    out[:, sl, sl, sl] = orbset.orbitals
    return loewdin(orbset.with_orbitals(out, g2))


def estimate_dstar(cfg=None, d2=None):
    """Smallest ``tr(|k| gamma) tr(gamma/|k|)`` over the multi-start D-optimizers for N=2."""
    cfg = cfg or ExperimentConfig()
    d2 = d2 or estimate_D(2, cfg)
    sets = [r.final_set for r in d2.reports[: len(cfg.seeds)]]
    products = [fn.dstar_product(s) for s in sets]
    best = int(np.argmin(products))
    opt = sets[best]
    value = products[best]
    if value < DSTAR_FLOOR * (1 - 1e-6):
        raise InvariantViolation(f"d_* product {value:.9g} below the floor {DSTAR_FLOOR}")
    # biases in units of the product: T times the dropped-bin estimate
    T, _, bias = fn.dstar_terms(opt)
    T2, _, bias2 = fn.dstar_terms(box_doubled(opt))
    return DStarEstimate(value, opt, products, T * bias, T2 * bias2)


# ---------------------------------------------------------------- ground states


def _guess_box(ratio, n):
    # empirical fit of the energy-optimal box at n = 32 (m = 1), scaled with n
    r = min(max(ratio, 1e-3), 0.999)
    return 7.2 * (9.0 * (1.0 - r) / r) ** 0.7 * n / 32.0


def ground_state(N, a, m, cfg=None, L0=None, init=None, D_estimate=None):
    """Minimize ``E_a`` over orbitals and over the box side at fixed ``n``.

    Returns the :class:`MinimizeReport` at the best box; ``report.extra`` gains
    ``box`` (the optimal side) and ``box_trials`` ``[(L, E), ...]``.
    """
    cfg = cfg or ExperimentConfig()
    if m <= 0:
        raise ValueError("box optimization needs a positive mass")
    mcfg = cfg.minimize_config()
    if L0 is None:
        L0 = init.grid.L if init is not None else _guess_box(a / D_estimate if D_estimate else 0.5, cfg.n)
    state = {"set": init, "best": None}
    trials = []

    def energy_at(logL):
        L = math.exp(logL)
        g = cfg.grid(L=L)
        start = state["set"]
        start = initial_set(g, N, width=L / 8, band=cfg.band) if start is None else to_grid(start, g)
        rep = minimize_energy(start, a, m, mcfg, D_estimate)
        trials.append((L, rep.objective))
        if state["best"] is None or rep.objective < state["best"].objective:
            state["best"] = rep
            state["set"] = rep.final_set
        return rep.objective

    x0 = math.log(L0)
    minimize_scalar(energy_at, bracket=(x0 - 0.15, x0 + 0.15), tol=cfg.box_tol)
    best = state["best"]
    best.extra["box"] = best.final_set.grid.L
    best.extra["box_trials"] = trials
    return best


def energy_checks(report, N, m):
    """Ground-state properties expected for ``0 < a < D``: ``E < 0`` and ``mu_1 < mu_2 < 0``."""
    mu = report.mu
    out = {"negative_energy": report.objective < 0, "floor": report.objective >= -N * m * (1 + 1e-3)}
    if N >= 2:
        out["ordered_negative_mu"] = bool(np.all(np.diff(mu) > 0) and mu[-1] < 0)
    else:
        out["ordered_negative_mu"] = bool(mu[0] < 0)
    return out


@dataclass
class BindingResult:
    a: float
    E2: float
    E1: float
    strict: bool
    margin: float
    box2: float
    box1: float
    reports: tuple = field(default=(), repr=False)

    def summary(self):
        return {
            "a": self.a, "E2": self.E2, "E1": self.E1, "strict": self.strict,
            "margin": self.margin, "box2": self.box2, "box1": self.box1,
        }


def binding_check(a, m, cfg=None, D_estimate=None, solver_tol=None):
    """Compare ``E_a(2)`` with ``2 E_a(1)``; strict means ``E2 < 2 E1 - solver_tol``."""
    cfg = cfg or ExperimentConfig()
    if a <= 0:
        raise ValueError("coupling must be positive")
    r2 = ground_state(2, a, m, cfg, D_estimate=D_estimate)
    r1 = ground_state(1, a, m, cfg, L0=r2.extra["box"], D_estimate=D_estimate)
    tol = solver_tol if solver_tol is not None else cfg.grad_tol * m
    margin = 2.0 * r1.objective - r2.objective
    return BindingResult(
        a, r2.objective, r1.objective, bool(r2.objective < 2.0 * r1.objective - tol), margin,
        r2.extra["box"], r1.extra["box"], (r2, r1),
    )


def scf_cross_check(report, a, m, cfg=None, alpha=0.3):
    """Run SCF on the report's grid from its orbitals; returns ``(E_scf, relative_gap, eig_report)``."""
    cfg = cfg or ExperimentConfig()
    scfg = SCFConfig(band=cfg.band, mixing="anderson", tol=1e-8)
    init = initial_set(report.final_set.grid, report.final_set.size, band=cfg.band)
    final, eig = scf_solve(a, m, init.size, alpha, scfg, init=init)
    E = fn.energy(final, a, m).total
    return E, abs(E - report.objective) / abs(report.objective), eig


def principal_angles(A, B):
    """Principal angles between the spans of two orthonormal sets on one grid."""
    g = A.grid
    M = g.cell_volume * (np.conj(A.orbitals.reshape(A.size, -1)) @ B.orbitals.reshape(B.size, -1).T)
    s = np.linalg.svd(M, compute_uv=False)
    return np.arccos(np.clip(s, 0.0, 1.0))


def eigen_cross_check(report, a, m, cfg=None, massless_D=None, tol=1e-9):
    """Lowest eigenpairs of the linearized operator at a converged set.

    ``massless_D`` switches to the massless operator with coupling ``(4/3) D``.
    Returns ``(eig_report, principal_angles)``.
    """
    cfg = cfg or ExperimentConfig()
    s = report.final_set
    if massless_D is None:
        op = LinearizedOperator.massive(s, a, m, cfg.band)
    else:
        op = LinearizedOperator.massless(s, massless_D, cfg.band)
    eig = lowest_eigenpairs(op, s.size, tol, init=s)
    return eig, principal_angles(eig.vectors, s)


# ---------------------------------------------------------------- rank splitting


@dataclass
class SplittingTable:
    R: np.ndarray
    quotient: np.ndarray
    overlap: np.ndarray
    D1: float
    overlap_slope: float
    overlap_r_squared: float

    @property
    def deficit(self):
        return self.D1 - self.quotient

    @property
    def improving(self):
        """Separations (a trailing run of the table) where the pair beats ``D1``."""
        d = self.deficit
        k = len(d)
        while k > 0 and d[k - 1] > 0:
            k -= 1
        return self.R[k:]

    def monotone_approach(self):
        """Whether ``|quotient - D1|`` decreases in ``R`` over :attr:`improving` (needs >= 2 points)."""
        d = self.deficit[len(self.R) - len(self.improving):]
        return bool(len(d) >= 2 and np.all(np.diff(d) < 0))

    def summary(self):
        return {
            "R": self.R.tolist(),
            "quotient": self.quotient.tolist(),
            "overlap": self.overlap.tolist(),
            "D1": self.D1,
            "deficit": self.deficit.tolist(),
            "overlap_slope": self.overlap_slope,
            "overlap_r_squared": self.overlap_r_squared,
            "improving_R": self.improving.tolist(),
            "monotone_approach": self.monotone_approach(),
        }


def rank_splitting_check(base, R_list, D1=None, axis=(1.0, 0.0, 0.0)):
    """Quotients of translated pairs of a one-orbital optimizer at separations ``R``.

    ``D1`` defaults to the quotient of ``base`` itself, which is the right
    reference when ``base`` was moved to a larger box by :func:`box_doubled`.
    The overlap slope is fitted over all separations.
    """
    base = center_on_centroid(base)
    D1 = fn.lt_quotient(base).quotient if D1 is None else D1
    R = np.asarray(sorted(R_list), dtype=float)
    q = np.array([fn.lt_quotient(translated_pair(base, r, axis)).quotient for r in R])
    e = np.array([np.max(np.abs(overlap_block(base, r, axis))) for r in R])
    fit = stats.linregress(np.log(R), np.log(e))
    return SplittingTable(R, q, e, D1, float(fit.slope), float(fit.rvalue**2))


# ---------------------------------------------------------------- collapse


@dataclass
class CollapseTable:
    a: float
    t: np.ndarray
    energy: np.ndarray
    kinetic: float
    D: float
    slope: float
    expected_slope: float

    def summary(self):
        return {
            "a": self.a,
            "t": self.t.tolist(),
            "energy": self.energy.tolist(),
            "kinetic": self.kinetic,
            "D": self.D,
            "slope": self.slope,
            "expected_slope": self.expected_slope,
            "slope_relative_error": abs(self.slope - self.expected_slope) / abs(self.expected_slope)
            if self.expected_slope else float("nan"),
        }


def collapse_probe(a, base, t_steps=6, m=1.0, D=None, fit_points=3):
    """Energies of the dilations ``gamma_t``, ``t = 2^j`` for ``j = 0..t_steps``.

    Dilations are exact box relabelings, so the ladder never leaves the band.
    ``slope`` is the least-squares ``dE/dt`` over the last ``fit_points`` rungs;
    ``expected_slope`` is ``(1 - a/D) tr(|k| gamma)`` of the base set.
    """
    D = fn.lt_quotient(base).quotient if D is None else D
    t = 2.0 ** np.arange(t_steps + 1)
    E = []
    for tj in t:
        vals, g = rescale_box(base.orbitals, base.grid, tj)
        E.append(fn.energy(base.with_orbitals(vals, g), a, m, check=False).total)
    E = np.array(E)
    _, T = fn.kinetic_traces(base, 0.0)
    k = min(fit_points, len(t))
    slope = float(np.polyfit(t[-k:], E[-k:], 1)[0]) if k >= 2 else float("nan")
    return CollapseTable(float(a), t, E, T, float(D), slope, (1.0 - a / D) * T)


# ---------------------------------------------------------------- sweep and fits


@dataclass
class SweepRecord:
    a: float
    ratio: float
    E: float
    eps: float
    mu1: float
    mu2: float
    grad_norm: float
    iterations: int
    converged: bool
    n: int
    L: float
    resolution_ok: bool
    profile_distance: float = float("nan")

    @property
    def eps_cells(self):
        return self.eps * self.n / self.L

    def row(self, D, m=1.0, N=2):
        """CSV row; ``E_plus_2m`` is ``E + N m`` (the name fixes the N=2 column contract)."""
        return {
            "a": self.a,
            "D_minus_a": D - self.a,
            "E": self.E,
            "E_plus_2m": self.E + N * m,
            "eps": self.eps,
            "mu1": self.mu1,
            "mu2": self.mu2,
            "converged": self.converged,
        }


def profile_distance(a_set, b_set):
    """Distance between two blow-up profiles on grids with the same node count.

    Both sets are relabeled to unit kinetic trace and centered on their
    density centroids; the result is the L2 distance of ``sqrt(rho)`` node by
    node (the profiles are compared in cell units, which is what relabeling
    keeps fixed).
    """
    if a_set.grid.n != b_set.grid.n:
        raise ValueError("profiles must share the node count")
    A = normalize_unit_kinetic(center_on_centroid(a_set))
    B = normalize_unit_kinetic(center_on_centroid(b_set))
    h3 = 0.5 * (A.grid.cell_volume + B.grid.cell_volume)
    diff = np.sqrt(density(A) * A.grid.cell_volume / h3) - np.sqrt(density(B) * B.grid.cell_volume / h3)
    return float(np.sqrt(h3 * np.sum(diff**2)))


def sweep_a(ratios, m, cfg=None, D2=None, N=2):
    """Ground states along ``a = ratio * D2`` with warm starts.

    Each run starts from the previous minimizer relabeled to the box predicted
    by ``eps ~ sqrt(D - a)`` and then optimizes the box. Records whose
    ``eps`` is below ``RESOLUTION_CELLS`` grid cells are flagged.
    """
    cfg = cfg or ExperimentConfig()
    ratios = [float(r) for r in ratios]
    if any(b <= a_ for a_, b in zip(ratios, ratios[1:])):
        raise ValueError("ratios must be strictly increasing")
    if any(not 0 < r < 1 for r in ratios):
        raise ValueError("ratios must lie in (0, 1)")
    if D2 is None:
        D2 = estimate_D(N, cfg).value
    records = []
    prev = None
    prev_ratio = None
    for ratio in ratios:
        a = ratio * D2
        if prev is None:
            rep = ground_state(N, a, m, cfg, D_estimate=D2)
        else:
            L0 = prev.grid.L * math.sqrt((1 - ratio) / (1 - prev_ratio))
            rep = ground_state(N, a, m, cfg, init=to_grid(prev, cfg.grid(L=L0)), D_estimate=D2)
        s = rep.final_set
        _, T = fn.kinetic_traces(s, 0.0)
        eps = 1.0 / T
        mu = list(rep.mu) + [float("nan")] * (2 - len(rep.mu))
        rec = SweepRecord(
            a, ratio, rep.objective, eps, float(mu[0]), float(mu[1]), rep.projected_grad_norm,
            rep.iterations, rep.converged, s.grid.n, s.grid.L,
            eps * s.grid.n / s.grid.L >= RESOLUTION_CELLS,
        )
        if prev is not None:
            rec.profile_distance = profile_distance(prev, s)
        records.append(rec)
        prev, prev_ratio = s, ratio
    return records


@dataclass
class ScalingFit:
    target: str
    exponent: float
    prefactor: float
    r_squared: float
    window: tuple
    n_records: int
    d_implied: float = float("nan")

    def summary(self):
        return {
            "target": self.target,
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "r_squared": self.r_squared,
            "window": list(self.window),
            "n_records": self.n_records,
            "d_implied": self.d_implied,
        }


def fit_window(records, D, uncertainty=0.0):
    """Records with ``D - a`` at least three times the constant's own uncertainty."""
    return [r for r in records if D - r.a >= 3.0 * uncertainty and D - r.a > 0]


def fit_scaling(records, target, D, m=1.0, N=2, uncertainty=0.0):
    """Log-log least squares of ``eps`` or ``E + N m`` against ``D - a``.

    Records with ``D - a`` below three times ``uncertainty`` are left out.
    For the energy law ``d_implied = (E + N m)^2 D / (2 m^2 (D - a))`` is taken
    at the record closest to threshold inside the window.
    """
    use = fit_window(records, D, uncertainty)
    a = np.array([r.a for r in use])
    y = np.array([r.eps if target == "eps_law" else r.E + N * m for r in use])
    return fit_arrays(a, y, target, D, m)


def fit_arrays(a, y, target, D, m=1.0):
    """Core of :func:`fit_scaling` on plain arrays (``y`` is eps or ``E + N m``)."""
    if target not in ("eps_law", "energy_law"):
        raise ValueError(f"unknown target {target!r}")
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    if a.size < MIN_FIT_RECORDS:
        raise InsufficientRecords(f"{a.size} records in the fit window, need {MIN_FIT_RECORDS}")
    if np.any(y <= 0) or np.any(D - a <= 0):
        raise InvariantViolation(f"{target} data must be positive for a log fit")
    fit = stats.linregress(np.log(D - a), np.log(y))
    out = ScalingFit(
        target, float(fit.slope), float(math.exp(fit.intercept)), float(fit.rvalue**2),
        (float(a.min()), float(a.max())), int(a.size),
    )
    if target == "energy_law":
        j = int(np.argmax(a))
        out.d_implied = float(y[j] ** 2 * D / (2.0 * m * m * (D - a[j])))
    return out


# ---------------------------------------------------------------- tails


@dataclass
class TailFit:
    kind: str
    exponents: np.ndarray
    r_squared: np.ndarray
    window: tuple
    reference_rate: np.ndarray = None

    def summary(self):
        out = {
            "kind": self.kind,
            "exponents": self.exponents.tolist(),
            "r_squared": self.r_squared.tolist(),
            "window": list(self.window),
        }
        if self.reference_rate is not None:
            out["theta"] = self.reference_rate.tolist()
        return out


def theta_rate(mu, m):
    """Decay rate ``sqrt(m^2 - (m + mu)^2)`` (nan unless ``m + mu > 0``)."""
    mu = np.asarray(mu, dtype=float)
    v = m * m - (m + mu) ** 2
    return np.where((m + mu > 0) & (v > 0), np.sqrt(np.abs(v)), np.nan)


def tail_fit(orbset, window=None, massive=False, mu=None, m=1.0, nbins=16):
    """Per-orbital decay fit of the spherically averaged ``|w_j|`` over a radial window.

    Massless sets fit ``log|w|`` against ``log r`` (exponent = slope); massive
    sets fit against ``r`` (exponent = decay rate, compared with ``theta`` from
    ``mu`` when given). The set is centered on its density centroid first.
    """
    s = center_on_centroid(orbset)
    g = s.grid
    lo, hi = window or (g.L / 8, 3 * g.L / 8)
    if not (g.L / 8 - 1e-12 <= lo < hi <= 3 * g.L / 8 + 1e-12):
        raise ValueError("window must lie inside [L/8, 3L/8]")
    bins = np.linspace(lo, hi, nbins + 1)
    r = g.radius.ravel()
    idx = np.digitize(r, bins)
    counts = np.bincount(idx, minlength=nbins + 2)[1:nbins + 1]
    rc = 0.5 * (bins[1:] + bins[:-1])
    exps, r2 = [], []
    for w in s.orbitals:
        sums = np.bincount(idx, weights=np.abs(w).ravel(), minlength=nbins + 2)[1:nbins + 1]
        ok = (counts > 0) & (sums > 0)
        prof = sums[ok] / counts[ok]
        x = np.log(rc[ok]) if not massive else rc[ok]
        y = np.log(prof)
        if ok.sum() < 3 or np.ptp(y) < 1e-12:
            exps.append(0.0)
            r2.append(0.0)
            continue
        fit = stats.linregress(x, y)
        exps.append(-fit.slope if massive else fit.slope)
        r2.append(fit.rvalue**2)
    ref = theta_rate(mu, m) if (massive and mu is not None) else None
    return TailFit("exponential" if massive else "algebraic", np.array(exps), np.array(r2), (lo, hi), ref)


# ---------------------------------------------------------------- virial


def virial_check(report, D=None, mu=None):
    """Virial residual of a massless optimizer plus the normalized sum of multipliers.

    ``mu`` defaults to the minimizer's own multipliers; pass eigensolver values
    for a check that is not an identity of the minimizer's bookkeeping.
    """
    s = normalize_unit_kinetic(report.final_set)
    D = fn.lt_quotient(s).quotient if D is None else D
    mu = report.mu if mu is None else np.asarray(mu)
    vr = fn.virial_residual(s, D, mu)
    return {"residual": vr.residual, "sum_mu": float(np.sum(mu)), "target_sum_mu": -1.0 / 3.0, **vr.as_dict()}
