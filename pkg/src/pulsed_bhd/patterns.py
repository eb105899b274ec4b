"""Pattern functions for direct density-matrix sampling from homodyne data.

An unbiased estimate of rho_mn is the phase-averaged mean of
f_mn(x) exp(i (m - n) theta) over quadrature samples (x, theta).  Here f_mn is
built from its Fourier representation

    f_mn(x) = integral dk |k|/2 exp(-i k x) <m| exp(i k x_hat) |n>,

where the matrix elements of exp(i k x_hat) = D(i k / sqrt 2) come from a
stable column recursion and decay like exp(-k^2/4).  The k-integral is a
trapezoid rule with the leading Euler-Maclaurin end correction at k = 0.  The
result equals d/dx [psi_m(x) phi_n(x)] (regular times irregular oscillator
solution) without the unstable upward recursion for phi_n.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

MAX_PATTERN_DIM = 25
DEFAULT_SPACING = 0.002
DEFAULT_DK = 0.04


def displacement_elements(dim: int, k) -> np.ndarray:
    """<m| exp(i k x_hat) |n> for m, n < dim, shape ``(dim, dim, len(k))``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    beta = 1j * k / math.sqrt(2.0)
    bc = np.conj(beta)
    g = np.zeros((dim, dim, k.size), dtype=complex)
    g[0, 0] = np.exp(-0.5 * np.abs(beta) ** 2)
    for m in range(1, dim):
        g[m, 0] = g[m - 1, 0] * beta / math.sqrt(m)
    # D a^dagger = (a^dagger - beta*) D  =>  sqrt(n) D_mn = sqrt(m) D_{m-1,n-1} - beta* D_{m,n-1}
    for n in range(1, dim):
        g[0, n] = -bc * g[0, n - 1] / math.sqrt(n)
        for m in range(1, dim):
            g[m, n] = (math.sqrt(m) * g[m - 1, n - 1] - bc * g[m, n - 1]) / math.sqrt(n)
    return g


def _k_max(dim: int) -> float:
    return 4.0 * math.sqrt(dim) + 12.0


def _check_dim(dim: int, cap: int):
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if dim > cap:
        raise ValueError(f"pattern functions requested for dim={dim}, above the stable cap {cap}")


def pattern_functions(dim: int, x, dk: float = DEFAULT_DK, k_max: float | None = None,
                      cap: int = MAX_PATTERN_DIM, chunk: int = 2048) -> np.ndarray:
    """Direct evaluation of f_mn(x), shape ``(dim, dim) + x.shape``; f_mn = f_nm exactly."""
    _check_dim(dim, cap)
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    if k_max is None:
        k_max = _k_max(dim)
    k = np.arange(0.0, k_max + 0.5 * dk, dk)
    w = np.full(k.size, dk)
    w[0] = w[-1] = 0.5 * dk
    g = displacement_elements(dim, k)
    iu = np.tril_indices(dim)  # m >= n
    wk = w * k
    re = g[iu].real * wk
    im = g[iu].imag * wk
    out = np.empty((len(iu[0]), flat.size))
    for start in range(0, flat.size, chunk):
        xs = flat[start:start + chunk]
        arg = np.outer(k, xs)
        out[:, start:start + chunk] = re @ np.cos(arg) + im @ np.sin(arg)
    # Euler-Maclaurin: the integrand k g(k) has slope g(0) = delta_mn at k = 0
    out[iu[0] == iu[1]] += dk * dk / 12.0
    f = np.empty((dim, dim, flat.size))
    f[iu] = out
    f[iu[1], iu[0]] = out
    return f.reshape((dim, dim) + x.shape)


@dataclass(frozen=True)
class PatternTable:
    """f_mn tabulated on a uniform grid; evaluated by linear interpolation."""

    dim: int
    x_grid: np.ndarray
    f_values: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    def interpolation_weights(self, x):
        """Left node index and fractional offset for each x; raises outside the grid."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_grid[0], self.x_grid[-1]
        if x.size and (x.min() < lo or x.max() > hi):
            raise ValueError(f"samples span [{x.min():.3f}, {x.max():.3f}] outside table [{lo:.3f}, {hi:.3f}]")
        pos = (x - lo) / self.spacing
        i0 = np.clip(np.floor(pos).astype(np.int64), 0, self.x_grid.size - 2)
        return i0, pos - i0

    def evaluate(self, m: int, n: int, x) -> np.ndarray:
        i0, t = self.interpolation_weights(x)
        row = self.f_values[m, n]
        return row[i0] * (1.0 - t) + row[i0 + 1] * t


@functools.lru_cache(maxsize=8)
def _cached_table(dim: int, x_max: float, spacing: float, cap: int) -> PatternTable:
    n = int(round(2 * x_max / spacing)) + 1
    grid = np.linspace(-x_max, x_max, n)
    f = pattern_functions(dim, grid, cap=cap)
    grid.flags.writeable = False
    f.flags.writeable = False
    return PatternTable(dim, grid, f)


def build_pattern_table(dim: int, x_grid=None, *, x_max: float | None = None,
                        spacing: float = DEFAULT_SPACING, cap: int = MAX_PATTERN_DIM) -> PatternTable:
    """Tabulate f_mn for 0 <= m, n < dim.

    Pass an explicit uniform ``x_grid``, or let the grid be ``[-x_max, x_max]``
    with the given spacing.  The grid must reach at least max(5, sqrt(2 dim)).
    Symmetric grids are cached.
    """
    _check_dim(dim, cap)
    need = max(5.0, math.sqrt(2.0 * dim))
    if x_grid is None:
        if x_max is None:
            x_max = need + 3.0
        x_max = math.ceil(x_max / 0.5) * 0.5
        if x_max < need:
            raise ValueError(f"grid half-width {x_max} below required {need:.3f}")
        if spacing > 0.01:
            raise ValueError("pattern table spacing must be <= 0.01")
        return _cached_table(dim, float(x_max), float(spacing), cap)
    grid = np.asarray(x_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("x_grid must be strictly ascending")
    steps = np.diff(grid)
    if np.ptp(steps) > 1e-9 * steps[0]:
        raise ValueError("x_grid must be uniform")
    if grid[0] > -need or grid[-1] < need:
        raise ValueError(f"x_grid must cover |x| <= {need:.3f}")
    return PatternTable(dim, grid, pattern_functions(dim, grid, cap=cap))
