import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_density_matrix
from pulsed_bhd.errors import DataError, PhaseUnresolvableError
from pulsed_bhd.fockstate import (
    apply_loss,
    coherent_density_matrix,
    fock_density_matrix,
    marginal_density,
    vacuum_density_matrix,
    wigner_at_origin,
    wigner_from_density,
)
from pulsed_bhd.simulator import QuadratureSampler, QuadratureSamples
from pulsed_bhd.tomography import (
    Marginals,
    assign_segment_phases,
    bin_marginals,
    estimate_phases,
    fit_coherent_amplitude,
    fit_gaussian_peak,
    folded,
    histogram_half_range,
    inverse_radon,
    phase_weights,
    radon_kernel,
    reconstruct_report,
    sample_density_matrix,
)


def exact_marginals(rho, n_phases, n_bins, half=10.0, phases=None):
    """Noise-free marginals: bin-centre densities scaled to pseudo-counts."""
    edges = np.linspace(-half, half, n_bins + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    if phases is None:
        phases = 2 * np.pi * np.arange(n_phases) / n_phases
    dens = np.array([marginal_density(rho, t, centers) for t in phases])
    counts = dens * (edges[1] - edges[0]) * 1e6
    zeros = np.zeros(len(phases))
    return Marginals(counts, edges, zeros, zeros, np.asarray(phases), np.asarray(phases), zeros)


def draw_samples(rho, n, seed, segments=None):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, n)
    x = QuadratureSampler(rho).sample(theta, rng.random(n), rng.random(n))
    return QuadratureSamples(theta, x, segments)


# -- binning ----------------------------------------------------------------

def test_histogram_half_range():
    assert histogram_half_range([0.1, -3.2]) == 3.5
    assert histogram_half_range([0.0]) == 0.5
    assert histogram_half_range([4.0]) == 4.0


@given(st.integers(1, 3000), st.integers(1, 40), st.integers(2, 64))
def test_bin_marginals_conserves_counts(n, k, nb):
    if n < k:
        return
    rng = np.random.default_rng(n)
    s = QuadratureSamples(np.linspace(0, 6, n), rng.standard_normal(n))
    m = bin_marginals(s, k, nb, allow_uneven=True)
    assert m.counts.sum() == n
    assert m.counts.shape == (k, nb)
    assert m.totals.max() - m.totals.min() <= 1
    assert np.allclose(m.bin_edges, -m.bin_edges[::-1])
    assert np.allclose(m.densities().sum(axis=1) * m.bin_width, 1.0)


def test_bin_marginals_statistics():
    x = np.arange(12.0)
    m = bin_marginals(QuadratureSamples(np.zeros(12), x), 3, 4)
    assert np.allclose(m.means, [1.5, 5.5, 9.5])
    assert np.allclose(m.variances, np.var([0, 1, 2, 3], ddof=1))
    assert np.allclose(m.sems, np.sqrt(m.variances / 4))


def test_bin_marginals_errors():
    with pytest.raises(DataError):
        bin_marginals(QuadratureSamples(np.zeros(3), np.zeros(3)), 4, 8)
    with pytest.raises(DataError):
        bin_marginals(QuadratureSamples(np.zeros(0), np.zeros(0)), 1, 8)
    with pytest.raises(DataError, match="divisible"):
        bin_marginals(QuadratureSamples(np.zeros(10), np.zeros(10)), 4, 8)
    assert bin_marginals(QuadratureSamples(np.zeros(10), np.zeros(10)), 4, 8, allow_uneven=True).totals.tolist() == [3, 2, 3, 2]


# -- phases -----------------------------------------------------------------

@given(st.floats(0.0, 2 * np.pi), st.integers(8, 96))
def test_estimate_phases_noise_free(offset, n):
    scan = 2 * np.pi * np.arange(n) / n
    means = 3.0 * np.cos(scan - offset)
    m = Marginals(np.ones((n, 4)), np.linspace(-1, 1, 5), means, np.full(n, 0.01), scan_phases=scan)
    est = estimate_phases(m)
    err = np.angle(np.exp(1j * (est - (scan - offset))))
    assert np.max(np.abs(err)) < 1e-6


@given(st.floats(0.0, 2 * np.pi), st.floats(-0.1, 0.1), st.integers(16, 96))
def test_estimate_phases_follow_drift(offset, wobble, n):
    scan = 2 * np.pi * np.arange(n) / n
    true = scan + wobble * np.sin(np.arange(n))
    means = 3.0 * np.cos(true - offset)
    m = Marginals(np.ones((n, 4)), np.linspace(-1, 1, 5), means, np.full(n, 0.01), scan_phases=scan)
    err = np.angle(np.exp(1j * (estimate_phases(m) - (true - offset))))
    # a slightly low amplitude fit costs sqrt(2 dA/A) rad right at the extrema
    assert np.max(np.abs(err)) < 0.1
    assert np.median(np.abs(err)) < 0.01


def test_estimate_phases_without_scan_uses_max_mean():
    n = 64
    true = 2 * np.pi * np.arange(n) / n
    m = Marginals(np.ones((n, 4)), np.linspace(-1, 1, 5), 3.0 * np.cos(true), np.full(n, 0.01))
    assert np.allclose(np.angle(np.exp(1j * (estimate_phases(m) - true))), 0, atol=1e-7)


def test_estimate_phases_with_amplitude_hint():
    true = 2 * np.pi * np.arange(32) / 32
    m = Marginals(np.ones((32, 4)), np.linspace(-1, 1, 5), math.sqrt(2) * 2.0 * np.cos(true), np.full(32, 0.01))
    est = estimate_phases(m, amplitude_hint=2.0)
    assert np.allclose(np.angle(np.exp(1j * (est - true))), 0, atol=1e-7)


def test_estimate_phases_unresolvable():
    s = draw_samples(vacuum_density_matrix(), 64 * 200, 1)
    with pytest.raises(PhaseUnresolvableError, match="scan"):
        estimate_phases(bin_marginals(s, 64, 32))


@given(st.lists(st.floats(0, 2 * np.pi), min_size=1, max_size=50))
def test_phase_weights_sum(phases):
    w = phase_weights(phases)
    assert w.sum() == pytest.approx(np.pi)
    assert np.all(w >= 0)


def test_phase_weights_uniform():
    assert np.allclose(phase_weights(np.pi * np.arange(8) / 8), np.pi / 8)


def test_fold_maps_upper_half_plane():
    rho = coherent_density_matrix(1.0, 20)
    m = exact_marginals(rho, 16, 64, half=8.0)
    ph, dens = folded(m)
    assert np.all((ph >= 0) & (ph < np.pi))
    ref = exact_marginals(rho, 16, 64, half=8.0, phases=ph)
    assert np.allclose(dens, ref.densities(), atol=1e-12)


def test_assign_segment_phases_keeps_ramp():
    theta = np.linspace(0, 1, 100, endpoint=False)
    s = QuadratureSamples(theta, np.zeros(100))
    m = bin_marginals(s, 4, 8).with_phases([1.0, 2.0, 3.0, 4.0])
    out = assign_segment_phases(s, m)
    assert np.array_equal(out.segment, np.repeat(np.arange(4), 25))
    assert np.allclose(out.theta - theta, np.repeat([1.0, 2.0, 3.0, 4.0] - m.scan_phases, 25))
    flat = assign_segment_phases(s, m, keep_ramp=False)
    assert np.allclose(flat.theta, np.repeat([1.0, 2.0, 3.0, 4.0], 25))


# -- inverse Radon ----------------------------------------------------------

def test_radon_kernel_series_branch_continuous():
    y = np.array([0.999e-3, 1.001e-3])
    k = radon_kernel(y, 7.25)
    assert k[0] == pytest.approx(k[1], rel=1e-5)
    assert radon_kernel(np.array([0.0]), 7.25)[0] == pytest.approx(7.25**2 / 2)


def test_inverse_radon_vacuum_prefactor():
    m = exact_marginals(vacuum_density_matrix(), 64, 256, half=8.0)
    w = inverse_radon(m, 12.0, np.array([-0.5, 0.0, 0.5]), np.array([-0.5, 0.0, 0.5]))
    assert w.value_at(0.0, 0.0) == pytest.approx(1 / np.pi, rel=1e-4)


@settings(max_examples=5)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_inverse_radon_matches_exact_wigner(dim, seed):
    rho = random_density_matrix(dim, np.random.default_rng(seed))
    m = exact_marginals(rho, 96, 400, half=10.0)
    axis = np.linspace(-6, 6, 41)
    w = inverse_radon(m, 15.0, axis, axis)
    exact = wigner_from_density(rho, axis, axis)
    q, p = np.meshgrid(axis, axis, indexing="ij")
    radius = math.sqrt(2 * dim - 1) + 3 / math.sqrt(2)
    inside = q * q + p * p <= radius * radius
    peak = np.max(np.abs(exact.values))
    assert np.max(np.abs(w.values - exact.values)[inside]) < 0.05 * peak


def test_inverse_radon_uneven_phases():
    rho = coherent_density_matrix(1.0 + 0.5j, 20)
    ph = np.sort(np.random.default_rng(3).uniform(0, 2 * np.pi, 80))
    m = exact_marginals(rho, 80, 256, half=8.0, phases=ph)
    axis = np.linspace(-3, 3, 13)
    w = inverse_radon(m, 12.0, axis, axis)
    exact = wigner_from_density(rho, axis, axis)
    assert np.max(np.abs(w.values - exact.values)) < 0.05 / np.pi


def test_inverse_radon_errors():
    m = exact_marginals(vacuum_density_matrix(), 8, 32, half=4.0)
    with pytest.raises(ValueError):
        inverse_radon(m, 0.0)
    with pytest.raises(DataError):
        inverse_radon(m, 7.25, np.linspace(-7, 7, 5), np.linspace(-7, 7, 5))
    with pytest.raises(DataError):
        inverse_radon(Marginals(m.counts, m.bin_edges, m.means, m.sems), 7.25)


def test_gaussian_peak_fit_exact_coherent():
    axis = np.linspace(-6, 6, 121)
    w = wigner_from_density(coherent_density_matrix(2.0 - 1.0j, 40), axis, axis)
    pk = fit_gaussian_peak(w)
    assert pk.width == pytest.approx(1 / math.sqrt(2), rel=1e-6)
    assert pk.q0 == pytest.approx(2 * math.sqrt(2), abs=1e-6)
    assert pk.p0 == pytest.approx(-math.sqrt(2), abs=1e-6)


# -- density-matrix sampling --------------------------------------------------

@settings(max_examples=10)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_sample_density_matrix_within_errors(dim, seed):
    rho = random_density_matrix(dim, np.random.default_rng(seed))
    est = sample_density_matrix(draw_samples(rho, 100_000, seed + 1), dim)
    iu = np.triu_indices(dim)
    z = np.abs(est.rho.elements - rho.elements)[iu] / est.std_err[iu]
    assert np.mean(z < 3) >= 0.9


def test_sample_density_matrix_segment_weighting():
    rho = coherent_density_matrix(1.5, 20)
    n = 64 * 2000
    rng = np.random.default_rng(9)
    # uneven phase coverage: a squeezed ramp would bias an unweighted mean
    seg = np.repeat(np.arange(64), 2000)
    centers = (np.arange(64) / 64) ** 2 * 2 * np.pi
    theta = centers[seg]
    x = QuadratureSampler(rho).sample(theta, rng.random(n), rng.random(n))
    est = sample_density_matrix(QuadratureSamples(theta, x, seg), 10)
    est_flat = sample_density_matrix(QuadratureSamples(theta, x), 10)
    err_w = abs(est.rho.elements[1, 0] - rho.elements[1, 0])
    err_f = abs(est_flat.rho.elements[1, 0] - rho.elements[1, 0])
    assert err_w < 4 * est.std_err[1, 0]
    assert err_f > err_w


def test_sample_density_matrix_warns_for_few_samples():
    with pytest.warns(UserWarning):
        sample_density_matrix(draw_samples(vacuum_density_matrix(), 100, 0), 5)


def test_sample_density_matrix_rejects_unset_phases():
    with pytest.raises(DataError):
        sample_density_matrix(QuadratureSamples(np.full(10, np.nan), np.zeros(10)), 2)


def test_single_photon_negativity_and_error():
    rho = apply_loss(fock_density_matrix(1, 2), 0.91)
    est = sample_density_matrix(draw_samples(rho, 100_000, 4), 10)
    w00 = wigner_at_origin(est.rho)
    assert abs(w00 - wigner_at_origin(rho)) < 4 * est.w00_err
    assert w00 < -0.2


# -- reports ----------------------------------------------------------------

def test_fit_coherent_amplitude_exact():
    alpha, fid = fit_coherent_amplitude(coherent_density_matrix(1.2 + 0.3j, 30))
    assert alpha == pytest.approx(1.2 + 0.3j, abs=1e-5)
    assert fid == pytest.approx(1.0, abs=1e-9)


def test_report_text_for_coherent_state():
    rho = coherent_density_matrix(2.0, 20)
    est = sample_density_matrix(draw_samples(rho, 50_000, 5), 12)
    rep = reconstruct_report(est, reference_alpha=2.0)
    text = rep.to_text()
    assert "mean photon number" in text
    assert "fidelity vs reference alpha" in text
    assert rep.mean_n == pytest.approx(4.0, abs=5 * rep.mean_n_err)
    assert "non-classical" not in text


def test_report_flags_negativity():
    rho = apply_loss(fock_density_matrix(1, 2), 0.91)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = sample_density_matrix(draw_samples(rho, 50_000, 6), 6)
    text = reconstruct_report(est).to_text()
    assert "W(0,0) < 0, non-classical at 3 sigma" in text
