import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import poisson

from conftest import random_density_matrix
from pulsed_bhd.errors import NumericalError
from pulsed_bhd.fockstate import (
    MAX_HERMITE_N,
    DensityMatrix,
    WignerGrid,
    apply_loss,
    coherent_amplitude_estimate,
    coherent_density_matrix,
    fidelity_with_coherent,
    fock_density_matrix,
    hermite_functions,
    hermite_wavefunction,
    marginal_density,
    mean_photon_number,
    photon_number_distribution,
    vacuum_density_matrix,
    wigner_at_origin,
    wigner_from_density,
)


def mp_psi(n, x):
    """Oscillator eigenfunction in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    x = mpmath.mpf(x)
    val = mpmath.pi ** mpmath.mpf(-0.25) / mpmath.sqrt(2**n * mpmath.factorial(n))
    return float(val * mpmath.hermite(n, x) * mpmath.exp(-x * x / 2))


# -- Hermite functions ------------------------------------------------------

@pytest.mark.parametrize("n", [0, 1, 2, 5, 17, 40, 80, 100])
@pytest.mark.parametrize("x", [-7.3, -1.0, 0.0, 0.37, 2.5, 11.0])
def test_hermite_matches_multiprecision(n, x):
    assert hermite_wavefunction(n, x) == pytest.approx(mp_psi(n, x), rel=1e-9, abs=1e-13)


def test_psi2_at_one():
    # closed form: (2x^2 - 1) e^{-x^2/2} / (sqrt 2 pi^{1/4})
    exact = math.exp(-0.5) / (math.sqrt(2.0) * math.pi**0.25)
    assert hermite_wavefunction(2, 1.0) == pytest.approx(exact, rel=1e-12)
    assert hermite_wavefunction(2, 1.0) == pytest.approx(0.322144, abs=1e-6)


def test_hermite_orthonormal():
    x = np.linspace(-16, 16, 8001)
    psi = hermite_functions(60, x)
    gram = integrate.simpson(psi[:, None, :] * psi[None, :, :], x=x, axis=-1)
    assert np.max(np.abs(gram - np.eye(61))) < 1e-10


def test_hermite_cap_and_negative():
    with pytest.raises(ValueError):
        hermite_functions(MAX_HERMITE_N + 1, 0.0)
    with pytest.raises(ValueError):
        hermite_wavefunction(-1, 0.0)


def test_hermite_shape():
    assert hermite_functions(3, np.zeros((4, 5))).shape == (4, 4, 5)
    assert isinstance(hermite_wavefunction(3, 0.5), float)


# -- DensityMatrix ----------------------------------------------------------

def test_density_matrix_hermitized_and_read_only():
    r = np.array([[0.5, 0.2 + 0.1j], [0.2, 0.5]])
    rho = DensityMatrix(r)
    assert np.allclose(rho.elements, rho.elements.conj().T)
    assert rho.trace == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rho.elements[0, 0] = 1.0


def test_density_matrix_padding():
    rho = coherent_density_matrix(0.5, 6).padded(10)
    assert rho.dim == 10
    assert np.all(rho.elements[6:, :] == 0)


def test_fock_range_error():
    with pytest.raises(ValueError):
        fock_density_matrix(5, 5)
    with pytest.raises(ValueError):
        fock_density_matrix(-1, 5)


@given(st.floats(0.0, 3.0), st.floats(-math.pi, math.pi))
def test_coherent_photon_statistics_poisson(r, phi):
    alpha = r * np.exp(1j * phi)
    rho = coherent_density_matrix(alpha, 40)
    p = photon_number_distribution(rho)
    assert np.allclose(p, poisson.pmf(np.arange(40), r * r), atol=1e-12)
    assert rho.truncated_weight == pytest.approx(poisson.sf(39, r * r), abs=1e-12)
    assert coherent_amplitude_estimate(rho) == pytest.approx(alpha, abs=1e-9)
    assert fidelity_with_coherent(rho, alpha) == pytest.approx(1.0 - rho.truncated_weight, abs=1e-12)


def test_coherent_truncation_warns():
    with pytest.warns(UserWarning):
        coherent_density_matrix(3.0, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        coherent_density_matrix(2.0, 10)


def test_fidelity_vacuum_vs_coherent():
    assert fidelity_with_coherent(vacuum_density_matrix(20), 1.3) == pytest.approx(math.exp(-1.69), rel=1e-12)


def test_fidelity_rejects_non_hermitian_result():
    rho = DensityMatrix(np.eye(3) / 3)
    object.__setattr__(rho, "_elements", np.array([[0, 1j, 0], [0, 0, 0], [0, 0, 0]]))
    with pytest.raises(NumericalError):
        fidelity_with_coherent(rho, 1.0)


# -- loss channel -----------------------------------------------------------

@given(st.integers(1, 8), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1))
def test_loss_preserves_trace_and_scales_n(dim, eta, seed):
    rho = random_density_matrix(dim, np.random.default_rng(seed))
    out = apply_loss(rho, eta)
    assert out.trace == pytest.approx(1.0, abs=1e-12)
    assert mean_photon_number(out) == pytest.approx(eta * mean_photon_number(rho), abs=1e-12)
    assert out.min_eigenvalue() > -1e-12


@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
def test_loss_composes(e1, e2, seed):
    rho = random_density_matrix(6, np.random.default_rng(seed))
    a = apply_loss(apply_loss(rho, e1), e2).elements
    b = apply_loss(rho, e1 * e2).elements
    assert np.allclose(a, b, atol=1e-12)


def test_loss_maps_coherent_to_coherent():
    out = apply_loss(coherent_density_matrix(1.5 + 0.5j, 40), 0.64)
    assert np.allclose(out.elements, coherent_density_matrix(0.8 * (1.5 + 0.5j), 40).elements, atol=1e-10)


def test_loss_on_single_photon():
    out = apply_loss(fock_density_matrix(1, 2), 0.91)
    assert np.allclose(photon_number_distribution(out), [0.09, 0.91])


def test_loss_rejects_bad_eta():
    with pytest.raises(ValueError):
        apply_loss(vacuum_density_matrix(2), 1.5)


# -- marginals --------------------------------------------------------------

@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(0.0, 2 * math.pi))
def test_coherent_marginal_is_gaussian(ar, ai, theta):
    alpha = complex(ar, ai)
    x = np.linspace(-8, 8, 401)
    pr = marginal_density(coherent_density_matrix(alpha, 40), theta, x)
    mean = math.sqrt(2.0) * (alpha * np.exp(-1j * theta)).real
    expected = np.exp(-((x - mean) ** 2)) / math.sqrt(math.pi)
    assert np.allclose(pr, expected, atol=1e-9)


@given(st.integers(1, 7), st.floats(0.0, 2 * math.pi), st.integers(0, 2**32 - 1))
def test_pure_state_marginal_matches_wavefunction(dim, theta, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    c /= np.linalg.norm(c)
    rho = DensityMatrix(np.outer(c, c.conj()))
    x = np.linspace(-5, 5, 41)
    psi = np.array([[mp_psi(n, xi) for xi in x] for n in range(dim)])
    amp = (c * np.exp(-1j * np.arange(dim) * theta)) @ psi
    assert np.allclose(marginal_density(rho, theta, x), np.abs(amp) ** 2, atol=1e-10)


@given(st.integers(1, 10), st.floats(0.0, 2 * math.pi), st.integers(0, 2**32 - 1))
def test_marginal_normalized_and_nonnegative(dim, theta, seed):
    rho = random_density_matrix(dim, np.random.default_rng(seed))
    x = np.linspace(-10, 10, 4001)
    pr = marginal_density(rho, theta, x)
    assert np.all(pr >= 0)
    assert integrate.simpson(pr, x=x) == pytest.approx(1.0, abs=1e-9)


def test_marginal_rejects_unphysical_state():
    bad = DensityMatrix(np.array([[1.5, 0.9], [0.9, -0.5]]))
    with pytest.raises(NumericalError):
        marginal_density(bad, 0.0, np.linspace(-3, 3, 61))


def test_single_photon_small_window_fraction():
    frac, _ = integrate.quad(lambda x: hermite_wavefunction(1, x) ** 2, -0.1, 0.1)
    a = 0.1
    exact = math.erf(a) - 2 * a * math.exp(-a * a) / math.sqrt(math.pi)
    assert frac == pytest.approx(exact, rel=1e-9)
    assert frac == pytest.approx(7.4776e-4, rel=1e-4)


# -- Wigner functions -------------------------------------------------------

AXIS = np.linspace(-7, 7, 141)


@pytest.mark.parametrize("n", range(6))
def test_fock_wigner_origin(n):
    rho = fock_density_matrix(n, n + 1)
    w = wigner_from_density(rho, AXIS, AXIS)
    assert w.value_at(0.0, 0.0) == pytest.approx((-1) ** n / math.pi, abs=1e-12)
    assert wigner_at_origin(rho) == pytest.approx((-1) ** n / math.pi, abs=1e-15)


def test_lossy_single_photon_origin():
    rho = apply_loss(fock_density_matrix(1, 2), 0.91)
    assert wigner_at_origin(rho) == pytest.approx((1 - 2 * 0.91) / math.pi, abs=1e-14)
    assert wigner_at_origin(rho) == pytest.approx(-0.261, abs=5e-4)


def test_coherent_wigner_closed_form():
    alpha = 1.2 - 0.7j
    w = wigner_from_density(coherent_density_matrix(alpha, 40), AXIS, AXIS)
    q, p = np.meshgrid(AXIS, AXIS, indexing="ij")
    q0, p0 = math.sqrt(2) * alpha.real, math.sqrt(2) * alpha.imag
    exact = np.exp(-((q - q0) ** 2) - (p - p0) ** 2) / math.pi
    assert np.max(np.abs(w.values - exact)) < 1e-10


@given(st.integers(1, 8), st.floats(0.0, 2 * math.pi), st.integers(0, 2**32 - 1))
def test_wigner_projection_is_marginal(dim, theta, seed):
    rho = random_density_matrix(dim, np.random.default_rng(seed))
    # rotating phase space by theta maps x_theta onto q
    ph = np.exp(-1j * np.arange(dim) * theta)
    rotated = DensityMatrix(ph[:, None] * rho.elements * ph.conj()[None, :])
    x = np.linspace(-3, 3, 13)
    t = np.linspace(-9, 9, 721)
    w = wigner_from_density(rotated, x, t)
    proj = integrate.simpson(w.values, x=t, axis=1)
    assert np.allclose(proj, marginal_density(rho, theta, x), atol=1e-9)
    # direct check of the rotation itself at a single point
    c, s = math.cos(theta), math.sin(theta)
    q0, p0 = 0.4, -0.9
    grid = wigner_from_density(rho, np.array([q0 * c - p0 * s, q0 * c - p0 * s + 1e-3]),
                               np.array([q0 * s + p0 * c, q0 * s + p0 * c + 1e-3]))
    ref = wigner_from_density(rotated, np.array([q0, q0 + 1e-3]), np.array([p0, p0 + 1e-3]))
    assert grid.values[0, 0] == pytest.approx(ref.values[0, 0], abs=1e-12)


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_wigner_normalized_and_bounded(dim, seed):
    rho = random_density_matrix(dim, np.random.default_rng(seed))
    w = wigner_from_density(rho, AXIS, AXIS)
    assert w.integral() == pytest.approx(1.0, abs=1e-8)
    assert np.max(np.abs(w.values)) <= 1 / math.pi + 1e-12
    assert wigner_at_origin(rho) == pytest.approx(w.value_at(0.0, 0.0), abs=1e-12)


def test_wigner_grid_validation():
    with pytest.raises(ValueError):
        WignerGrid(np.array([0.0, 1.0, 3.0]), np.array([0.0, 1.0]), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        WignerGrid(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.zeros((3, 2)))
