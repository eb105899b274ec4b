"""Detector metrology: noise-vs-power fits, SNR, subtraction, spectra, linearity."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import DataError
from .simulator import DetectorParams, simulate_vacuum_charges

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseScalingFit:
    """Result of fitting Var = gain * N + sigma_e^2 to a LO power sweep."""

    sigma_e_fit: float
    floor_variance: float
    floor_variance_err: float
    gain_fit: float
    gain_err: float
    exponent_fit: float
    exponent_err: float
    residuals: np.ndarray
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def sigma_e_err(self) -> float:
        if self.sigma_e_fit <= 0:
            return math.sqrt(max(self.floor_variance_err, 0.0))
        return 0.5 * self.floor_variance_err / self.sigma_e_fit


def noise_scaling_fit(lo_photons, variances, n_pulses=None, min_points: int = 6,
                      min_decades: float = 1.5) -> NoiseScalingFit:
    """Weighted least squares for the shot-noise line plus electronic floor.

    Each variance carries relative uncertainty sqrt(2 / (n - 1)), so weights
    are 1 / Var^2.  The exponent is the log-log slope of the background-
    subtracted RMS, sqrt(Var - sigma_e^2), against N; points whose subtracted
    variance is not positive are flagged, excluded and warned about.
    """
    n_lo = np.asarray(lo_photons, dtype=float)
    var = np.asarray(variances, dtype=float)
    if n_lo.shape != var.shape or n_lo.ndim != 1:
        raise DataError("lo_photons and variances must be 1-D arrays of equal length")
    if n_lo.size < min_points:
        raise DataError(f"need at least {min_points} sweep points, got {n_lo.size}")
    if np.any(n_lo <= 0) or np.any(var <= 0):
        raise DataError("LO photon numbers and variances must be positive")
    decades = math.log10(n_lo.max() / n_lo.min())
    if decades < min_decades:
        raise DataError(f"sweep spans {decades:.2f} decades, need >= {min_decades}")

    a = np.column_stack([n_lo, np.ones_like(n_lo)])
    w = 1.0 / var
    coef, *_ = np.linalg.lstsq(a * w[:, None], var * w, rcond=None)
    gain, floor = coef
    resid = var - a @ coef
    if n_pulses is not None:
        rel = np.sqrt(2.0 / (np.asarray(n_pulses, dtype=float) - 1.0)) * np.ones_like(var)
        sigma = rel * var
        cov = np.linalg.inv((a / sigma[:, None] ** 2).T @ a)
    else:
        dof = max(n_lo.size - 2, 1)
        chi2 = float(np.sum((resid * w) ** 2)) / dof
        cov = np.linalg.inv((a * w[:, None] ** 2).T @ a) * chi2

    sub = var - floor
    bad = sub <= 0
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} sweep point(s) below the fitted floor were excluded", stacklevel=2)
    keep = ~bad
    if keep.sum() < 2:
        raise DataError("too few points above the noise floor for the exponent fit")
    x = np.log(n_lo[keep])
    y = 0.5 * np.log(sub[keep])
    slope_cov = np.polyfit(x, y, 1, cov=True) if keep.sum() > 3 else (np.polyfit(x, y, 1), None)
    p, pcov = slope_cov
    exp_err = float(math.sqrt(pcov[0, 0])) if pcov is not None else float("nan")
    return NoiseScalingFit(
        sigma_e_fit=math.sqrt(floor) if floor > 0 else 0.0,
        floor_variance=float(floor),
        floor_variance_err=float(math.sqrt(cov[1, 1])),
        gain_fit=float(gain),
        gain_err=float(math.sqrt(cov[0, 0])),
        exponent_fit=float(p[0]),
        exponent_err=exp_err,
        residuals=resid,
        excluded=bad,
    )


def noise_sweep(params: DetectorParams, lo_values, n_pulses: int = 50_000, seed: int = 0,
                poisson: bool = True) -> np.ndarray:
    """Simulated vacuum charge variance (electrons^2) at each LO photon number."""
    out = np.empty(len(lo_values))
    for i, n_lo in enumerate(lo_values):
        p = DetectorParams(**{**params.__dict__, "lo_photons": float(n_lo)})
        q = simulate_vacuum_charges(p, n_pulses, seed, poisson, key=i + 1)
        out[i] = np.var(q, ddof=1)
    return out


def snr_db(params: DetectorParams) -> float:
    """Shot-noise to electronic-noise variance ratio in dB (power ratio)."""
    if params.sigma_e == 0:
        return math.inf
    return 10.0 * math.log10(params.shot_variance / params.sigma_e**2)


def subtraction_db(max_shot_limited_photons: float) -> float:
    """10 log10(N_max): mean LO photon number over the shot-noise level at the
    largest power that is still shot-noise limited."""
    if max_shot_limited_photons <= 0:
        raise ValueError("photon number must be positive")
    return 10.0 * math.log10(max_shot_limited_photons)


def cmrr_db(imbalance: float) -> float:
    """Common-mode rejection of a splitter with residual asymmetry ``imbalance``.

    A classical intensity modulation leaks through with relative amplitude
    ``imbalance``; rejection is -20 log10(imbalance).  Kept separate from
    ``subtraction_db``, which is a photon-number headroom figure.
    """
    if imbalance <= 0:
        return math.inf
    return -20.0 * math.log10(imbalance)


def measured_subtraction_db(lo_photons, variances, gain: float | None = None, floor: float | None = None,
                            threshold: float = 0.5) -> float:
    """Subtraction figure from a sweep.

    Excess classical noise at each point is Var - (gain N + floor); the sweep
    is shot-noise limited up to the largest N (contiguous from the lowest
    power) whose excess stays below ``threshold`` times the shot variance.
    Without ``gain``/``floor`` the line is fitted to the lower half of the sweep.
    """
    n_lo = np.asarray(lo_photons, dtype=float)
    var = np.asarray(variances, dtype=float)
    order = np.argsort(n_lo)
    n_lo, var = n_lo[order], var[order]
    if gain is None or floor is None:
        half = max(2, n_lo.size // 2)
        a = np.column_stack([n_lo[:half], np.ones(half)])
        w = 1.0 / var[:half]
        (g_fit, f_fit), *_ = np.linalg.lstsq(a * w[:, None], var[:half] * w, rcond=None)
        gain = g_fit if gain is None else gain
        floor = f_fit if floor is None else floor
    shot = gain * n_lo
    ok = (var - shot - floor) <= threshold * shot
    if not ok[0]:
        raise DataError("lowest sweep point is already not shot-noise limited")
    last = n_lo.size - 1 if ok.all() else int(np.argmin(ok)) - 1
    return subtraction_db(n_lo[last])


def leakage_threshold_photons(params: DetectorParams, threshold: float = 0.5) -> float:
    """LO photon number where imbalance leakage of classical intensity noise,
    (imbalance kappa lo_rin N)^2, reaches ``threshold`` times the shot variance."""
    k = params.imbalance * params.kappa * params.lo_rin
    if k == 0:
        return math.inf
    return threshold * params.kappa * params.eta_total / k**2


@dataclass(frozen=True)
class SpectralReport:
    frequency: np.ndarray
    psd: np.ndarray
    flatness_db: float
    band_edges: np.ndarray
    band_levels: np.ndarray
    harmonics: np.ndarray
    lines: np.ndarray
    nperseg: int


def _default_nperseg(n: int, spp: int | None, min_segments: int = 8) -> int:
    """Largest spp * 2^j window giving >= min_segments half-overlapping segments."""
    seg = spp if spp and spp % 2 == 0 else 2 * (spp or 1)

    def count(length):
        return (n - length) // (length // 2) + 1 if length <= n else 0

    while count(2 * seg) >= min_segments:
        seg *= 2
    return seg


def spectrum_report(trace, sample_rate_hz: float, rep_rate_hz: float | None = None,
                    nperseg: int | None = None, f_max: float | None = None,
                    exclude_bins: int = 2, line_threshold_db: float = 10.0,
                    min_length: int = 2**14) -> SpectralReport:
    """Welch PSD (Hann window, 50% overlap, >= 8 segments) and whiteness figures.

    Flatness is 10 log10(max/min) of the mean PSD in the bands between
    successive repetition-rate harmonics up to ``f_max`` (default: the second
    harmonic, or Nyquist without a repetition rate), excluding
    ``exclude_bins`` bins around each harmonic and DC.  ``harmonics`` lists
    repetition-rate harmonics more than ``line_threshold_db`` above the
    in-band floor; ``lines`` lists other in-band peaks above that level.
    """
    x = np.asarray(trace, dtype=float)
    if x.size < min_length:
        raise DataError(f"trace has {x.size} samples, need >= {min_length}")
    spp = None
    if rep_rate_hz:
        r = sample_rate_hz / rep_rate_hz
        spp = int(round(r)) if abs(r - round(r)) < 1e-9 * r else None
    if nperseg is None:
        nperseg = _default_nperseg(x.size, spp)
    if nperseg > x.size:
        raise DataError("trace shorter than the Welch window")
    f, psd = signal.welch(x, fs=sample_rate_hz, window="hann", nperseg=nperseg,
                          noverlap=nperseg // 2, detrend=False, scaling="density")
    df = f[1] - f[0]
    nyq = 0.5 * sample_rate_hz
    if f_max is None:
        f_max = min(nyq, 2.0 * rep_rate_hz) if rep_rate_hz else nyq

    if rep_rate_hz:
        n_h = int(math.floor(nyq / rep_rate_hz))
        harm_f = rep_rate_hz * np.arange(0, n_h + 1)
        edges = rep_rate_hz * np.arange(0, int(math.ceil(f_max / rep_rate_hz)) + 1)
        edges[-1] = min(edges[-1], f_max)
    else:
        harm_f = np.array([0.0])
        edges = np.array([0.0, f_max])
    near = np.zeros(f.size, dtype=bool)
    for h in harm_f:
        near |= np.abs(f - h) <= exclude_bins * df + 1e-9 * df
    levels = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (f > lo) & (f < hi) & ~near
        if np.any(sel):
            levels.append(float(np.mean(psd[sel])))
    levels = np.array(levels)
    if levels.size == 0 or np.any(levels <= 0):
        flatness = math.inf
    else:
        flatness = 10.0 * math.log10(levels.max() / levels.min())

    # floor and line search are limited to the analysis band: pulse shaping
    # rolls the PSD off towards Nyquist
    band = f <= f_max
    quiet = band & ~near
    floor = float(np.median(psd[quiet])) if np.any(quiet) else float(np.median(psd[band]))
    thresh = floor * 10 ** (line_threshold_db / 10.0)
    peaks, _ = signal.find_peaks(np.where(band & ~near, psd, 0.0), height=thresh)
    lines = f[peaks]
    found = []
    if rep_rate_hz:
        for h in harm_f[1:]:
            win = np.abs(f - h) <= exclude_bins * df
            if np.any(win) and psd[win].max() > thresh:
                found.append(h)
    return SpectralReport(f, psd, flatness, edges, levels, np.array(found), lines, nperseg)


@dataclass(frozen=True)
class LinearityResult:
    max_deviation: float
    slope: float
    intercept: float
    passed: bool
    residuals: np.ndarray


def linearity_check(injected, measured, threshold: float = 0.01) -> LinearityResult:
    """Straight-line fit of measured vs injected charge.

    Deviation is max |residual| over the full-scale output max |measured|.
    """
    x = np.asarray(injected, dtype=float)
    y = np.asarray(measured, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("injected and measured must be 1-D arrays of equal length")
    if x.size < 5:
        raise DataError(f"need at least 5 points, got {x.size}")
    if np.ptp(x) == 0:
        raise DataError("injected charges are all equal")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    full = float(np.max(np.abs(y)))
    if full == 0:
        raise DataError("measured signal is identically zero")
    dev = float(np.max(np.abs(resid)) / full)
    return LinearityResult(dev, float(slope), float(intercept), dev <= threshold, resid)
