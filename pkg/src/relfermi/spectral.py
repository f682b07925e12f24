"""Periodic-box spectral discretization.

Fields live on a uniform ``n x n x n`` grid covering the cube ``[-L/2, L/2)^3``.
Angular wavenumbers are ``k = 2*pi*f/L`` with signed integer frequencies
``f`` in ``[-n/2, n/2)``; multipliers such as ``sqrt(|k|^2 + m^2)`` act
diagonally on the normalized transform.

Normalization: the transform returned by :meth:`SpectralGrid.forward` holds
the coefficients of a field in the orthonormal plane-wave basis
``exp(i k.x)/sqrt(V)``, so Parseval reads
``cell_volume * sum |u(x)|^2 == sum |u_hat(k)|^2``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import BandLimitViolation, GridMismatch

# Mean of 1/|x| and of |x| over the unit cube [-1/2, 1/2]^3 (adaptive cubature, 1e-13).
MEAN_INV_RADIUS_UNIT_CUBE = 2.380077363979553
MEAN_RADIUS_UNIT_CUBE = 0.48029597822752645

DC_POLICIES = ("zero", "cell")

MIN_POINTS = 8

# Checkpoint header: magic, n per axis (u32), L (f64), orbital count (u8); little endian, unpadded.
CHECKPOINT_MAGIC = b"FVF1"
_HEADER = struct.Struct("<4sIdB")


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid with ``n`` points per axis on a box of side ``L``.

    ``dc`` selects the value of the kinetic symbols at k=0 used by
    :func:`kinetic_symbol`: ``"zero"`` is the plain sampled symbol, ``"cell"``
    its average over the zero-frequency cell (a midpoint rule that treats the
    cusp of ``|k|`` exactly and gives the constant mode a kinetic cost).
    """

    n: int
    L: float
    dc: str = "zero"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < MIN_POINTS or self.n % 2:
            raise ValueError(f"n must be an even integer >= {MIN_POINTS}, got {self.n}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"box length must be positive, got {self.L}")
        if self.dc not in DC_POLICIES:
            raise ValueError(f"dc policy must be one of {DC_POLICIES}, got {self.dc!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "L", float(self.L))

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def spacing(self):
        return self.L / self.n

    @property
    def cell_volume(self):
        return self.spacing**3

    @property
    def volume(self):
        return self.L**3

    @cached_property
    def frequencies(self):
        """Signed integer frequencies per axis in FFT order."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(np.int64)

    @cached_property
    def k1d(self):
        return 2.0 * np.pi * self.frequencies / self.L

    @cached_property
    def x1d(self):
        """Node coordinates per axis; the origin sits at index ``n // 2``."""
        return self.spacing * (np.arange(self.n) - self.n // 2)

    @cached_property
    def k_squared(self):
        k = self.k1d
        return k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2

    @cached_property
    def k_abs(self):
        return np.sqrt(self.k_squared)

    @cached_property
    def radius(self):
        """Distance of every node to the box center (the origin)."""
        x = self.x1d
        return np.sqrt(x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2)

    def coords(self):
        x = self.x1d
        return np.meshgrid(x, x, x, indexing="ij")

    @property
    def _norm(self):
        # forward coefficient scale h^3 / sqrt(V)
        return self.cell_volume / np.sqrt(self.volume)

    def forward(self, values):
        """Normalized transform over the last three axes."""
        return sfft.fftn(values, axes=(-3, -2, -1)) * self._norm

    def inverse(self, coeffs):
        return sfft.ifftn(coeffs, axes=(-3, -2, -1)) / self._norm

    def inner(self, u, v):
        """Discrete L2 product <u, v> (antilinear in ``u``) over the last three axes."""
        return self.cell_volume * np.sum(np.conj(u) * v, axis=(-3, -2, -1))

    def norm(self, u):
        return np.sqrt(self.cell_volume * np.sum(np.abs(u) ** 2, axis=(-3, -2, -1)))

    def integrate(self, f):
        return self.cell_volume * np.sum(f, axis=(-3, -2, -1))

    @property
    def dk(self):
        return 2.0 * np.pi / self.L

    def rescaled(self, L):
        """Same node count on a box of side ``L``."""
        return SpectralGrid(self.n, L, self.dc)

    def resized(self, n, L):
        return SpectralGrid(n, L, self.dc)


def make_grid(n, L, dc="zero"):
    """Build a :class:`SpectralGrid`; rejects odd or tiny ``n`` and ``L <= 0``."""
    return SpectralGrid(n, L, dc)


@dataclass
class ComplexField:
    """One complex scalar field sampled on a grid."""

    values: np.ndarray
    grid: SpectralGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def norm(self):
        return float(self.grid.norm(self.values))

    def inner(self, other):
        _check_same_grid(self.grid, other.grid)
        return complex(self.grid.inner(self.values, other.values))

    def transform(self):
        return self.grid.forward(self.values)

    def copy(self):
        return ComplexField(self.values.copy(), self.grid)


@dataclass
class MultiplierSpectrum:
    """Nonnegative diagonal symbol in FFT layout.

    ``kind`` is ``"relativistic"`` (``sqrt(|k|^2+m^2)``), ``"massless"`` (``|k|``),
    ``"kinetic"`` (``sqrt(|k|^2+m^2) - m``, DC per grid policy) or
    ``"inverse_massless"`` (``1/|k|`` with the k=0 entry dropped to 0).
    """

    values: np.ndarray
    kind: str
    grid: SpectralGrid
    m: float = 0.0

    @classmethod
    def relativistic(cls, grid, m):
        if m < 0:
            raise ValueError("mass must be nonnegative")
        return cls(np.sqrt(grid.k_squared + m * m), "relativistic", grid, float(m))

    @classmethod
    def massless(cls, grid):
        return cls(grid.k_abs.copy(), "massless", grid)

    @classmethod
    def kinetic(cls, grid, m):
        """``sqrt(|k|^2+m^2) - m`` under the grid's DC policy (see :func:`kinetic_symbol`)."""
        return cls(kinetic_symbol(grid, m), "kinetic", grid, float(m))

    @classmethod
    def inverse_massless(cls, grid):
        values = np.zeros(grid.shape)
        nz = grid.k_abs > 0
        values[nz] = 1.0 / grid.k_abs[nz]
        return cls(values, "inverse_massless", grid)


def _check_same_grid(a, b):
    if a != b:
        raise GridMismatch(f"grid mismatch: {a} vs {b}")


def quadratic_form(u, s):
    """``sum_k s(k) |u_hat(k)|^2``, the continuum ``<u, Op u>`` for band-limited ``u``."""
    _check_same_grid(u.grid, s.grid)
    uh = u.transform()
    return float(np.sum(s.values * (uh.real**2 + uh.imag**2)))


def kinetic_form(u, m):
    """``<u, (sqrt(-Lap + m^2) - m) u>``.

    Evaluated with the symbol ``|k|^2 / (sqrt(|k|^2+m^2) + m)`` so small-|k|
    modes do not lose digits to cancellation; the value is >= 0 by construction.
    """
    if m < 0:
        raise ValueError("mass must be nonnegative")
    uh = u.transform()
    sym = kinetic_symbol(u.grid, m)
    return float(np.sum(sym * (uh.real**2 + uh.imag**2)))


def kinetic_symbol(grid, m):
    """Cancellation-free symbol of ``sqrt(-Lap + m^2) - m`` under the grid's DC policy."""
    if m < 0:
        raise ValueError("mass must be nonnegative")
    k2 = grid.k_squared
    sym = k2 / (np.sqrt(k2 + m * m) + m) if m > 0 else np.sqrt(k2)
    if grid.dc == "cell":
        sym = sym.copy()
        sym[0, 0, 0] = dc_cell_average(grid.dk, m)
    return sym


@lru_cache(maxsize=64)
def dc_cell_average(dk, m, order=24):
    """Mean of ``sqrt(|k|^2+m^2) - m`` over the cube ``[-dk/2, dk/2]^3``.

    Exact constant for ``m = 0``; Gauss-Legendre on one octant otherwise.
    """
    if m == 0:
        return MEAN_RADIUS_UNIT_CUBE * dk
    x, w = np.polynomial.legendre.leggauss(order)
    t = 0.25 * dk * (x + 1.0)
    wt = 0.5 * w
    k2 = t[:, None, None] ** 2 + t[None, :, None] ** 2 + t[None, None, :] ** 2
    vals = k2 / (np.sqrt(k2 + m * m) + m)
    return float(np.einsum("i,j,k,ijk->", wt, wt, wt, vals))


def apply_multiplier(u, s):
    """Return the field with transform ``s(k) * u_hat(k)``."""
    _check_same_grid(u.grid, s.grid)
    g = u.grid
    return ComplexField(g.inverse(s.values * g.forward(u.values)), g)


def dc_bias_estimate(u):
    """Weight the dropped k=0 bin would carry in ``<u, (-Lap)^(-1/2) u>``.

    Uses the cell average of ``1/|k|`` over the zero-frequency cube of side
    ``2*pi/L``; the estimate scales like ``L^-2`` for localized fields.
    """
    g = u.grid
    c0 = u.transform()[0, 0, 0]
    return float(abs(c0) ** 2 * MEAN_INV_RADIUS_UNIT_CUBE * g.L / (2.0 * np.pi))


def _spread_indices(n_small, n_big):
    """Positions in the big FFT layout of the small layout's frequencies."""
    f = np.fft.fftfreq(n_small, d=1.0 / n_small).astype(np.int64)
    return np.mod(f, n_big)


def dilate_pow2(u, direction, tol=1e-10):
    """Exact dyadic dilation ``u_t(x) = t^{3/2} u(t x)`` keeping the grid spacing.

    ``"down"`` (t=2) maps ``(n, L)`` to ``(n/2, L/2)`` and needs ``u`` band-limited
    to the inner half of its spectrum; ``"up"`` (t=1/2) maps ``(n, L)`` to
    ``(2n, 2L)`` by zero padding. Coefficients are copied index for index,
    so the L2 norm is preserved exactly.
    """
    g = u.grid
    uh = u.transform()
    if direction == "up":
        new = g.resized(2 * g.n, 2 * g.L)
        idx = _spread_indices(g.n, new.n)
        out = np.zeros(new.shape, dtype=np.complex128)
        out[np.ix_(idx, idx, idx)] = uh
    elif direction == "down":
        if g.n // 2 < MIN_POINTS:
            raise BandLimitViolation(f"grid n={g.n} too small to halve")
        new = g.resized(g.n // 2, g.L / 2)
        idx = _spread_indices(new.n, g.n)
        kept = uh[np.ix_(idx, idx, idx)]
        total = np.sum(np.abs(uh) ** 2)
        lost = max(total - np.sum(np.abs(kept) ** 2), 0.0)
        if total > 0 and np.sqrt(lost / total) > tol:
            raise BandLimitViolation(
                f"relative spectral weight {np.sqrt(lost / total):.2e} outside the half band"
            )
        out = kept
    else:
        raise ValueError("direction must be 'up' or 'down'")
    return ComplexField(new.inverse(out), new)


def rescale_box(values, grid, t):
    """Exact dilation by an arbitrary factor ``t`` through relabeling the box.

    The node values of ``t^{3/2} u(t x)`` on ``(n, L/t)`` are ``t^{3/2}`` times
    those of ``u`` on ``(n, L)``; wavenumbers scale by ``t``. Nothing is
    interpolated.
    """
    if t <= 0:
        raise ValueError("dilation factor must be positive")
    return values * t**1.5, grid.rescaled(grid.L / t)


def band_mask(grid, band=1.0):
    """Boolean FFT-layout mask of frequencies with ``|f| <= band * n/2``.

    A ball in index space; ``band=0.5`` makes ``|u|^2`` alias-free on the grid.
    """
    if not 0 < band <= 1.0:
        raise ValueError("band must lie in (0, 1]")
    f = grid.frequencies
    f2 = f[:, None, None] ** 2 + f[None, :, None] ** 2 + f[None, None, :] ** 2
    if band >= 1.0:
        mask = np.ones(grid.shape, dtype=bool)
    else:
        mask = f2 <= (band * grid.n / 2) ** 2
    return mask


def project_band(values, grid, mask):
    """Orthogonal projection onto the span of the plane waves selected by ``mask``."""
    if mask is None:
        return values
    return grid.inverse(grid.forward(values) * mask)


def plane_wave(grid, freq):
    """Unit-norm plane wave with integer frequency triple ``freq``."""
    x, y, z = grid.coords()
    k = 2.0 * np.pi * np.asarray(freq, dtype=float) / grid.L
    vals = np.exp(1j * (k[0] * x + k[1] * y + k[2] * z)) / np.sqrt(grid.volume)
    return ComplexField(vals, grid)


def gaussian(grid, width=1.0, center=(0.0, 0.0, 0.0), normalize=True):
    """Isotropic Gaussian ``exp(-|x - c|^2 / (2 width^2))`` on the grid."""
    x, y, z = grid.coords()
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    vals = np.exp(-r2 / (2.0 * width**2)).astype(np.complex128)
    f = ComplexField(vals, grid)
    if normalize:
        f.values /= f.norm()
    return f


def write_checkpoint(path, values, grid):
    """Write one or more fields in the FVF1 binary layout.

    After the 17-byte header come ``count`` blocks of ``n^3`` complex values,
    each stored as interleaved little-endian ``(re, im)`` float64 pairs in
    row-major ``(i, j, k)`` order. The DC policy is not stored.
    """
    vals = np.asarray(values, dtype=np.complex128)
    if vals.ndim == 3:
        vals = vals[None]
    if vals.shape[1:] != grid.shape:
        raise GridMismatch(f"field shape {vals.shape[1:]} != grid {grid.shape}")
    if vals.shape[0] > 255:
        raise ValueError("at most 255 fields per checkpoint")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, grid.n, grid.L, vals.shape[0]))
        fh.write(np.ascontiguousarray(vals, dtype="<c16").tobytes())


def read_checkpoint(path, dc="zero"):
    """Inverse of :func:`write_checkpoint`; returns ``(values, grid)`` with ``values`` 4-D."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated checkpoint header")
        magic, n, L, count = _HEADER.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        grid = SpectralGrid(n, L, dc)
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != count * n**3:
        raise ValueError(f"checkpoint holds {data.size} values, expected {count * n**3}")
    return data.reshape((count,) + grid.shape).astype(np.complex128), grid
