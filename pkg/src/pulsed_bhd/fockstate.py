"""Single-mode quantum states in a truncated Fock basis.

Quadrature convention
---------------------
Every module in this package uses

    x_theta = (a exp(-i theta) + a^dagger exp(i theta)) / sqrt(2)

so the vacuum has quadrature variance 1/2 and a coherent state |alpha> has
<x_theta> = sqrt(2) |alpha| cos(theta - arg alpha).  Phase space is
(q, p) = (x_0, x_{pi/2}), i.e. alpha = (q + i p) / sqrt(2).  To convert to the
variance-1/4 convention x' = (a + a^dagger)/2 divide quadratures by sqrt(2)
and multiply frequencies (e.g. a Radon cutoff) by sqrt(2).

With this convention the marginal distribution at phase theta reads

    pr(x, theta) = sum_mn rho_mn exp(-i (m - n) theta) psi_m(x) psi_n(x)
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .errors import NumericalError

logger = logging.getLogger(__name__)

VACUUM_VARIANCE = 0.5
MAX_HERMITE_N = 100
DEFAULT_DIM = 20

# roundoff clamp for densities / eigenvalues; anything more negative is an error
CLAMP_TOL = 1e-12
NEGATIVE_TOL = 1e-9


def hermite_functions(nmax: int, x) -> np.ndarray:
    """Oscillator eigenfunctions psi_0 .. psi_nmax evaluated at ``x``.

    Uses the three-term recursion on normalized functions,
    psi_{n+1} = sqrt(2/(n+1)) x psi_n - sqrt(n/(n+1)) psi_{n-1},
    which never forms a raw Hermite polynomial.

    Returns an array of shape ``(nmax + 1,) + np.shape(x)``.
    """
    if nmax < 0:
        raise ValueError(f"nmax must be >= 0, got {nmax}")
    if nmax > MAX_HERMITE_N:
        raise ValueError(f"photon number {nmax} above supported cap {MAX_HERMITE_N}")
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = np.pi**-0.25 * np.exp(-0.5 * x * x)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, nmax):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def hermite_wavefunction(n: int, x):
    """psi_n(x) = pi^(-1/4) (2^n n!)^(-1/2) H_n(x) exp(-x^2/2)."""
    if n < 0:
        raise ValueError(f"photon number must be >= 0, got {n}")
    values = hermite_functions(n, x)[n]
    return float(values) if values.ndim == 0 else values


class DensityMatrix:
    """Fock-basis density matrix, photon numbers 0 .. dim-1.

    The stored matrix is Hermitized on construction and read-only afterwards.
    ``truncated_weight`` is the probability that the constructor could not
    represent inside the truncation; it is reported, never renormalized away.
    """

    __slots__ = ("_elements", "truncated_weight")

    def __init__(self, elements, truncated_weight: float = 0.0):
        arr = np.array(elements, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError(f"density matrix must be square and non-empty, got shape {arr.shape}")
        arr = 0.5 * (arr + arr.conj().T)
        arr.flags.writeable = False
        self._elements = arr
        self.truncated_weight = float(truncated_weight)

    @property
    def elements(self) -> np.ndarray:
        return self._elements

    @property
    def dim(self) -> int:
        return self._elements.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self._elements).real)

    def __array__(self, dtype=None, copy=None):
        return np.array(self._elements, dtype=dtype)

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim}, trace={self.trace:.12g}, truncated_weight={self.truncated_weight:.3g})"

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self._elements)[0])

    def padded(self, dim: int) -> "DensityMatrix":
        """Same state embedded in (or cut down to) a ``dim``-level space."""
        out = np.zeros((dim, dim), dtype=complex)
        d = min(dim, self.dim)
        out[:d, :d] = self._elements[:d, :d]
        lost = self.trace - float(np.trace(out).real)
        return DensityMatrix(out, self.truncated_weight + max(lost, 0.0))


def _log_factorial(n):
    return gammaln(np.asarray(n, dtype=float) + 1.0)


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    """Fock coefficients c_n = exp(-|alpha|^2/2) alpha^n / sqrt(n!), n < dim."""
    n = np.arange(dim)
    alpha = complex(alpha)
    if alpha == 0:
        c = np.zeros(dim, dtype=complex)
        c[0] = 1.0
        return c
    log_mag = -0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha)) - 0.5 * _log_factorial(n)
    return np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))


def coherent_density_matrix(alpha: complex, dim: int = DEFAULT_DIM) -> DensityMatrix:
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if abs(alpha) ** 2 > dim / 2:
        warnings.warn(
            f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds dim/2 = {dim / 2}; truncation may be significant",
            stacklevel=2,
        )
    c = coherent_amplitudes(alpha, dim)
    rho = np.outer(c, c.conj())
    lost = max(1.0 - float(np.sum(np.abs(c) ** 2)), 0.0)
    if lost > NEGATIVE_TOL:
        logger.info("coherent state alpha=%s truncated at dim=%d loses weight %.3g", alpha, dim, lost)
    return DensityMatrix(rho, truncated_weight=lost)


def fock_density_matrix(n: int, dim: int) -> DensityMatrix:
    if not 0 <= n < dim:
        raise ValueError(f"photon number {n} outside truncation 0..{dim - 1}")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[n, n] = 1.0
    return DensityMatrix(rho)


def vacuum_density_matrix(dim: int = 1) -> DensityMatrix:
    return fock_density_matrix(0, dim)


def _binomial_loss_amplitudes(dim: int, eta: float) -> np.ndarray:
    """amp[n, k] = sqrt(C(n, k) eta^(n-k) (1-eta)^k), zero for k > n."""
    n = np.arange(dim)[:, None]
    k = np.arange(dim)[None, :]
    valid = k <= n
    logc = _log_factorial(n) - _log_factorial(k) - _log_factorial(np.where(valid, n - k, 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # 0 * log(0) terms are handled by the explicit edge cases below
        log_eta = np.log(eta) if eta > 0 else -np.inf
        log_loss = np.log1p(-eta) if eta < 1 else -np.inf
        a = np.where(n - k > 0, (n - k) * log_eta, 0.0)
        b = np.where(k > 0, k * log_loss, 0.0)
        logp = logc + a + b
    amp = np.where(valid, np.exp(0.5 * logp), 0.0)
    return amp


def apply_loss(rho: DensityMatrix, eta: float) -> DensityMatrix:
    """Beamsplitter loss channel with transmissivity ``eta``.

    rho' = sum_k A_k rho A_k^dagger,
    A_k |n> = sqrt(C(n, k) eta^(n-k) (1 - eta)^k) |n - k>.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"efficiency must lie in [0, 1], got {eta}")
    if eta == 1.0:
        return DensityMatrix(rho.elements, rho.truncated_weight)
    dim = rho.dim
    amp = _binomial_loss_amplitudes(dim, eta)
    src = rho.elements
    out = np.zeros_like(src)
    for k in range(dim):
        m = np.arange(k, dim)
        a = amp[m, k]
        out[: dim - k, : dim - k] += np.outer(a, a) * src[k:, k:]
    return DensityMatrix(out, rho.truncated_weight)


def marginal_components(rho: DensityMatrix, x) -> dict[int, np.ndarray]:
    """Fourier components of the marginal: pr(x, th) = Re sum_{d>=0} w_d exp(-i d th) M_d(x).

    Returns ``{d: M_d(x)}`` for d = m - n >= 0 with M_0 real and the weight
    factor (1 for d = 0, 2 otherwise) already folded in.
    """
    x = np.asarray(x, dtype=float)
    psi = hermite_functions(rho.dim - 1, x)
    r = rho.elements
    comps = {}
    for d in range(rho.dim):
        m = np.arange(d, rho.dim)
        coeff = r[m, m - d]
        if d > 0 and not np.any(coeff):
            continue
        acc = np.tensordot(coeff, psi[m] * psi[m - d], axes=(0, 0))
        comps[d] = acc.real if d == 0 else 2.0 * acc
    return comps


def _clamp_density(values: np.ndarray) -> np.ndarray:
    low = float(np.min(values)) if values.size else 0.0
    if low < -NEGATIVE_TOL:
        raise NumericalError(f"marginal density {low:.3g} < 0; density matrix is not positive")
    if low < 0.0:
        if low < -CLAMP_TOL:
            logger.debug("clamping marginal density roundoff %.3g", low)
        values = np.maximum(values, 0.0)
    return values


def marginal_density(rho: DensityMatrix, theta: float, x):
    """Quadrature probability density pr(x, theta) of ``rho``."""
    comps = marginal_components(rho, x)
    total = comps[0].copy()
    for d, comp in comps.items():
        if d:
            total = total + (np.exp(-1j * d * theta) * comp).real
    total = _clamp_density(np.atleast_1d(total))
    return float(total[0]) if np.ndim(x) == 0 else total.reshape(np.shape(x))


@dataclass(frozen=True)
class WignerGrid:
    """Wigner function sampled on a rectangular grid, ``values[i, j] = W(q_i, p_j)``."""

    q_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("q_axis", "p_axis"):
            ax = np.asarray(getattr(self, name), dtype=float)
            _check_axis(ax, name)
            object.__setattr__(self, name, ax)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.q_axis.size, self.p_axis.size):
            raise ValueError(f"values shape {vals.shape} does not match axes")
        object.__setattr__(self, "values", vals)

    @property
    def cell_area(self) -> float:
        return float((self.q_axis[1] - self.q_axis[0]) * (self.p_axis[1] - self.p_axis[0]))

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def value_at(self, q: float, p: float) -> float:
        """Bilinear interpolation of the grid at (q, p)."""
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator((self.q_axis, self.p_axis), self.values)
        return float(interp([[q, p]])[0])


def _check_axis(ax: np.ndarray, name: str):
    if ax.ndim != 1 or ax.size < 2:
        raise ValueError(f"{name} must be 1-D with at least two points")
    steps = np.diff(ax)
    if np.any(steps <= 0):
        raise ValueError(f"{name} must be strictly ascending")
    if np.max(np.abs(steps - steps[0])) > 1e-12 * max(1.0, float(np.max(np.abs(ax)))):
        raise ValueError(f"{name} must be uniformly spaced")


def wigner_from_density(rho: DensityMatrix, q_axis, p_axis) -> WignerGrid:
    """Exact Wigner function from the Laguerre expansion of each |m><n|.

    For m >= n,
    W_{|m><n|}(q, p) = (-1)^n / pi sqrt(n!/m!) (sqrt(2)(q - i p))^(m-n)
                       exp(-r^2) L_n^(m-n)(2 r^2),   r^2 = q^2 + p^2,
    and W_{|n><m|} is its complex conjugate.
    """
    q_axis = np.asarray(q_axis, dtype=float)
    p_axis = np.asarray(p_axis, dtype=float)
    _check_axis(q_axis, "q_axis")
    _check_axis(p_axis, "p_axis")
    q, p = np.meshgrid(q_axis, p_axis, indexing="ij")
    r2 = q * q + p * p
    gauss = np.exp(-r2)
    z = np.sqrt(2.0) * (q - 1j * p)
    r = rho.elements
    w = np.zeros_like(q)
    for n in range(rho.dim):
        for m in range(n, rho.dim):
            c = r[m, n]
            if c == 0:
                continue
            d = m - n
            scale = (-1) ** n / np.pi * np.exp(0.5 * (_log_factorial(n) - _log_factorial(m)))
            term = scale * gauss * eval_genlaguerre(n, d, 2.0 * r2)
            if d == 0:
                w += (c * term).real
            else:
                w += 2.0 * (c * term * z**d).real
    return WignerGrid(q_axis, p_axis, w)


def wigner_at_origin(rho: DensityMatrix) -> float:
    """W(0, 0) = (1/pi) sum_n (-1)^n rho_nn (parity expectation)."""
    diag = np.real(np.diag(rho.elements))
    return float(np.sum(diag * (-1.0) ** np.arange(rho.dim)) / np.pi)


def fidelity_with_coherent(rho: DensityMatrix, alpha: complex) -> float:
    """F = <alpha| rho |alpha> with |alpha> truncated to ``rho.dim``."""
    c = coherent_amplitudes(alpha, rho.dim)
    f = c.conj() @ rho.elements @ c
    if abs(f.imag) > NEGATIVE_TOL:
        raise NumericalError(f"fidelity has imaginary part {f.imag:.3g}")
    return float(f.real)


def photon_number_distribution(rho: DensityMatrix) -> np.ndarray:
    return np.real(np.diag(rho.elements)).copy()


def mean_photon_number(rho: DensityMatrix) -> float:
    return float(np.arange(rho.dim) @ photon_number_distribution(rho))


def coherent_amplitude_estimate(rho: DensityMatrix) -> complex:
    """<a> = sum_n sqrt(n + 1) rho_{n+1, n}; the best-matching coherent amplitude."""
    r = rho.elements
    n = np.arange(rho.dim - 1)
    return complex(np.sum(np.sqrt(n + 1) * r[n + 1, n]))
