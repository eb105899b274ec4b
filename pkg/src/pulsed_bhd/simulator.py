"""Monte Carlo model of a pulsed balanced homodyne detector.

Each pulse yields one difference charge

    Q = sqrt(2 kappa eta N) x + imbalance * kappa * (N - N_mean) + sigma_e * g

where x is a quadrature drawn from the (loss-degraded) signal state at the
pulse's LO phase, N the LO photon number of that pulse and g a standard
normal.  For vacuum input and zero imbalance Var(Q) = kappa eta N + sigma_e^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fockstate import DensityMatrix, apply_loss, marginal_components

TWO_PI = 2.0 * math.pi

NOMINAL_LO_PHOTONS = 1.6e8
NOMINAL_SIGMA_E = 730.0
NOMINAL_ETA = 0.91
NOMINAL_SNR_DB = 14.0
# fraction of photocharge seen at the shaping-amplifier peak; fixed so that
# 10 log10(kappa eta N / sigma_e^2) = 14 dB at N = 1.6e8, eta = 0.91, sigma_e = 730
DEFAULT_KAPPA = 10 ** (NOMINAL_SNR_DB / 10) * NOMINAL_SIGMA_E**2 / (NOMINAL_ETA * NOMINAL_LO_PHOTONS)

# pulses per RNG stream; fixed so output never depends on how blocks are scheduled
BLOCK_SIZE = 4096
_STREAM_PULSES = 1
_STREAM_SINGLE = 2


@dataclass(frozen=True)
class DetectorParams:
    eta_total: float = NOMINAL_ETA
    kappa: float = DEFAULT_KAPPA
    sigma_e: float = NOMINAL_SIGMA_E
    imbalance: float = 0.0
    lo_photons: float = NOMINAL_LO_PHOTONS
    lo_rin: float = 0.0  # classical relative intensity noise of the LO, RMS per pulse
    rep_rate_hz: float = 204_000.0

    def __post_init__(self):
        if not 0.0 < self.eta_total <= 1.0:
            raise ValueError(f"eta_total must lie in (0, 1], got {self.eta_total}")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.sigma_e < 0:
            raise ValueError(f"sigma_e must be >= 0, got {self.sigma_e}")
        if not 0.0 <= self.imbalance < 0.5:
            raise ValueError(f"imbalance must lie in [0, 0.5), got {self.imbalance}")
        if self.lo_photons <= 0:
            raise ValueError(f"lo_photons must be > 0, got {self.lo_photons}")
        if self.lo_rin < 0:
            raise ValueError(f"lo_rin must be >= 0, got {self.lo_rin}")
        if self.rep_rate_hz <= 0:
            raise ValueError(f"rep_rate_hz must be > 0, got {self.rep_rate_hz}")

    @property
    def shot_variance(self) -> float:
        """Vacuum shot-noise variance of the difference charge, electrons^2."""
        return self.kappa * self.eta_total * self.lo_photons

    @property
    def lo_variance(self) -> float:
        return self.lo_photons + (self.lo_rin * self.lo_photons) ** 2

    @property
    def vacuum_variance(self) -> float:
        """Total charge variance for vacuum input (shot + leakage + electronic)."""
        leak = (self.imbalance * self.kappa) ** 2 * self.lo_variance
        return self.shot_variance + leak + self.sigma_e**2

    def gain(self, lo_photons=None):
        """Charge per unit quadrature, sqrt(2 kappa eta N)."""
        n = self.lo_photons if lo_photons is None else lo_photons
        return np.sqrt(2.0 * self.kappa * self.eta_total * n)


@dataclass(frozen=True)
class AcquisitionConfig:
    n_pulses: int = 262_144
    n_phases: int = 64
    scan_span: float = TWO_PI
    drift_deg: float = 8.0
    seed: int = 0
    # "model": divide by the known gain; "vacuum": normalize to the vacuum noise level
    calibration: str = "model"
    lo_poisson: bool = True

    def __post_init__(self):
        if self.n_pulses < 1 or self.n_phases < 1:
            raise ValueError("n_pulses and n_phases must be positive")
        if self.n_pulses < self.n_phases:
            raise ValueError(f"n_pulses={self.n_pulses} is smaller than n_phases={self.n_phases}")
        if self.drift_deg < 0:
            raise ValueError(f"drift_deg must be >= 0, got {self.drift_deg}")
        if self.calibration not in ("model", "vacuum"):
            raise ValueError(f"calibration must be 'model' or 'vacuum', got {self.calibration!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def pulses_per_phase(self) -> int:
        """Nominal segment length (segments differ by at most one pulse)."""
        return self.n_pulses // self.n_phases


@dataclass(frozen=True)
class PulseRecords:
    """Per-pulse detector output, one entry per pulse in acquisition order."""

    index: np.ndarray
    theta_true: np.ndarray
    charge_e: np.ndarray
    lo_n: np.ndarray

    def __len__(self):
        return self.index.size


@dataclass(frozen=True)
class QuadratureSamples:
    """Calibrated quadrature values and the LO phase the experimenter assigns to them."""

    theta: np.ndarray
    value: np.ndarray
    segment: np.ndarray | None = field(default=None)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        value = np.asarray(self.value, dtype=float)
        if theta.shape != value.shape or theta.ndim != 1:
            raise ValueError("theta and value must be 1-D arrays of equal length")
        if not np.all(np.isfinite(value)):
            raise ValueError("quadrature values must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "value", value)
        if self.segment is not None:
            seg = np.asarray(self.segment, dtype=int)
            if seg.shape != value.shape:
                raise ValueError("segment labels must match the samples")
            object.__setattr__(self, "segment", seg)

    def __len__(self):
        return self.value.size


class QuadratureSampler:
    """Inverse-CDF sampler for the marginals of one state.

    The CDF is tabulated on a uniform quadrature grid (linear interpolation
    between nodes) for ``n_rows`` equally spaced LO phases.  A pulse at an
    arbitrary phase draws from one of the two neighbouring rows with linear
    mixing weights, so phases need not coincide with the table.
    """

    def __init__(self, rho: DensityMatrix, n_rows: int = 1024, x_max: float | None = None,
                 min_nodes: int = 4097, max_spacing: float = 0.005):
        n_mean = float(np.real(np.arange(rho.dim) @ np.diag(rho.elements)))
        if x_max is None:
            x_max = max(8.0, math.sqrt(2.0 * n_mean + 1.0) + 6.0)
        n_nodes = max(min_nodes, int(math.ceil(2 * x_max / max_spacing)) + 1)
        self.x = np.linspace(-x_max, x_max, n_nodes)
        comps = marginal_components(rho, self.x)
        phase_free = all(d == 0 for d in comps)
        self.n_rows = 1 if phase_free else int(n_rows)
        thetas = TWO_PI * np.arange(self.n_rows) / self.n_rows
        pdf = np.broadcast_to(comps[0], (self.n_rows, n_nodes)).copy()
        for d, comp in comps.items():
            if d:
                pdf += (np.exp(-1j * d * thetas)[:, None] * comp[None, :]).real
        np.maximum(pdf, 0.0, out=pdf)
        dx = self.x[1] - self.x[0]
        cdf = np.zeros_like(pdf)
        cdf[:, 1:] = np.cumsum(0.5 * (pdf[:, 1:] + pdf[:, :-1]) * dx, axis=1)
        cdf /= cdf[:, -1:]
        self.cdf = cdf

    def cdf_at(self, theta: float, x) -> np.ndarray:
        """Tabulated CDF at the phase row nearest below ``theta`` (mixed linearly)."""
        pos = (theta % TWO_PI) / TWO_PI * self.n_rows
        a = int(math.floor(pos)) % self.n_rows
        b = (a + 1) % self.n_rows
        w = pos - math.floor(pos)
        row = (1 - w) * self.cdf[a] + w * self.cdf[b]
        return np.interp(x, self.x, row)

    def sample(self, theta, u, v=None) -> np.ndarray:
        """Map uniforms ``u`` (and row-choice uniforms ``v``) to quadratures at ``theta``."""
        theta = np.broadcast_to(np.asarray(theta, dtype=float), np.shape(u))
        u = np.asarray(u, dtype=float)
        if self.n_rows == 1:
            rows = np.zeros(u.shape, dtype=np.int64)
        else:
            pos = np.mod(theta, TWO_PI) / TWO_PI * self.n_rows
            base = np.floor(pos)
            frac = pos - base
            a = base.astype(np.int64) % self.n_rows
            if v is None:
                rows = np.where(frac >= 0.5, (a + 1) % self.n_rows, a)
            else:
                rows = np.where(np.asarray(v) < frac, (a + 1) % self.n_rows, a)
        n_nodes = self.x.size
        # rows stacked end to end with offsets, so one searchsorted serves all rows
        flat = (self.cdf + np.arange(self.n_rows)[:, None]).ravel()
        key = u + rows
        pos = np.searchsorted(flat, key, side="right")
        lo = np.clip(pos - 1, rows * n_nodes, rows * n_nodes + n_nodes - 2)
        c0 = flat[lo]
        c1 = flat[lo + 1]
        span = c1 - c0
        safe = np.where(span > 0, span, 1.0)
        t = np.where(span > 0, (key - c0) / safe, 0.5)
        j = lo - rows * n_nodes
        return self.x[j] + np.clip(t, 0.0, 1.0) * (self.x[1] - self.x[0])


def sample_quadrature(rho: DensityMatrix, theta: float, rng: np.random.Generator, size=None):
    """Draw quadrature value(s) at LO phase ``theta`` by inverse-CDF sampling."""
    # rotate the state so that theta becomes the tabulated phase 0
    phase = np.exp(-1j * np.arange(rho.dim) * theta)
    rotated = DensityMatrix(phase[:, None] * rho.elements * phase.conj()[None, :], rho.truncated_weight)
    sampler = QuadratureSampler(rotated, n_rows=1)
    u = rng.random(size)
    out = sampler.sample(0.0, np.atleast_1d(u))
    return float(out[0]) if size is None else out.reshape(np.shape(u))


def draw_lo_photons(params: DetectorParams, rng: np.random.Generator, size, poisson: bool = True):
    if not poisson:
        return np.full(size, float(params.lo_photons))
    mean = np.full(size, float(params.lo_photons))
    if params.lo_rin > 0:
        mean = np.maximum(mean * (1.0 + params.lo_rin * rng.standard_normal(size)), 0.0)
    return rng.poisson(mean).astype(float)


def charge_from_quadrature(x, params: DetectorParams, lo_n, electronic=0.0):
    """Deterministic part of the charge model; ``electronic`` is added as given."""
    leak = params.imbalance * params.kappa * (np.asarray(lo_n, dtype=float) - params.lo_photons)
    return params.gain(lo_n) * np.asarray(x, dtype=float) + leak + electronic


def quadrature_from_charge(charge, params: DetectorParams, calibration: str = "model"):
    """Convert charges back to calibrated quadratures.

    ``model`` divides by the nominal gain sqrt(2 kappa eta N_mean); ``vacuum``
    rescales so that vacuum input has variance exactly 1/2 (electronic and
    leakage noise then act like extra loss, as in a vacuum-normalized experiment).
    """
    charge = np.asarray(charge, dtype=float)
    if calibration == "model":
        return charge / params.gain()
    if calibration == "vacuum":
        return charge * math.sqrt(0.5 / params.vacuum_variance)
    raise ValueError(f"unknown calibration {calibration!r}")


def detected_amplitude_factor(params: DetectorParams, calibration: str) -> float:
    """Factor by which a coherent amplitude shrinks from source to calibrated data."""
    factor = math.sqrt(params.eta_total)
    if calibration == "vacuum":
        factor *= math.sqrt(params.shot_variance / params.vacuum_variance)
    return factor


def pulse_charge(x, params: DetectorParams, rng: np.random.Generator, poisson: bool = True):
    """Difference charge (electrons) for quadrature value(s) ``x``.

    Returns ``(charge, lo_n)``.
    """
    x = np.asarray(x, dtype=float)
    lo_n = draw_lo_photons(params, rng, x.shape, poisson)
    noise = params.sigma_e * rng.standard_normal(x.shape) if params.sigma_e > 0 else 0.0
    return charge_from_quadrature(x, params, lo_n, noise), lo_n


def segment_labels(n: int, n_segments: int) -> np.ndarray:
    """Contiguous time-segment index of each of ``n`` pulses; sizes differ by at most one."""
    if n_segments < 1 or n < n_segments:
        raise ValueError(f"cannot split {n} pulses into {n_segments} segments")
    return (np.arange(n, dtype=np.int64) * n_segments) // n


def scan_phases(config: AcquisitionConfig) -> np.ndarray:
    """Nominal piezo-scan phase of every pulse (linear ramp over ``scan_span``)."""
    return config.scan_span * np.arange(config.n_pulses) / config.n_pulses


def block_rng(seed: int, block: int, stream: int = _STREAM_PULSES, key: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, key, block]))


def run_acquisition(rho: DensityMatrix, params: DetectorParams, config: AcquisitionConfig,
                    sampler: QuadratureSampler | None = None):
    """Simulate a full phase-scanned acquisition.

    The source state passes the loss channel (``params.eta_total``) before
    detection.  Pulses are generated in fixed blocks of ``BLOCK_SIZE``, each
    with its own stream seeded by ``(seed, block)``, so output is deterministic
    and independent of block evaluation order.

    Returns ``(PulseRecords, QuadratureSamples)``; the samples carry the
    nominal scan phase (drift is unknown to the experimenter) and segment labels.
    """
    detected = apply_loss(rho, params.eta_total)
    if sampler is None:
        sampler = QuadratureSampler(detected)
    n = config.n_pulses
    u = np.empty(n)
    v = np.empty(n)
    lo_n = np.empty(n)
    noise = np.zeros(n)
    steps = np.empty(n)
    for block in range(0, (n + BLOCK_SIZE - 1) // BLOCK_SIZE):
        sl = slice(block * BLOCK_SIZE, min(n, (block + 1) * BLOCK_SIZE))
        m = sl.stop - sl.start
        rng = block_rng(config.seed, block)
        u[sl] = rng.random(m)
        v[sl] = rng.random(m)
        steps[sl] = rng.standard_normal(m)
        lo_n[sl] = draw_lo_photons(params, rng, m, config.lo_poisson)
        if params.sigma_e > 0:
            noise[sl] = params.sigma_e * rng.standard_normal(m)

    nominal = scan_phases(config)
    if config.drift_deg > 0:
        step = math.radians(config.drift_deg) / math.sqrt(n)
        drift = np.cumsum(steps * step)
        drift -= drift[0]
    else:
        drift = np.zeros(n)
    theta_true = np.mod(nominal + drift, TWO_PI)

    x = sampler.sample(theta_true, u, v)
    charge = charge_from_quadrature(x, params, lo_n, noise)
    records = PulseRecords(np.arange(n), theta_true, charge, lo_n)
    values = quadrature_from_charge(charge, params, config.calibration)
    segment = segment_labels(n, config.n_phases)
    samples = QuadratureSamples(nominal, values, segment)
    return records, samples


def simulate_vacuum_charges(params: DetectorParams, n_pulses: int, seed: int, poisson: bool = True,
                            key: int = 0):
    """Charges for vacuum signal input; ``key`` separates independent runs (e.g. sweep points)."""
    out = np.empty(n_pulses)
    for block in range(0, (n_pulses + BLOCK_SIZE - 1) // BLOCK_SIZE):
        sl = slice(block * BLOCK_SIZE, min(n_pulses, (block + 1) * BLOCK_SIZE))
        m = sl.stop - sl.start
        rng = block_rng(seed, block, _STREAM_SINGLE, key)
        x = rng.standard_normal(m) * math.sqrt(0.5)
        out[sl], _ = pulse_charge(x, params, rng, poisson)
    return out


def emit_trace(records: PulseRecords, rep_rate_hz: float, shaping_width_us: float = 1.0,
               sample_rate_hz: float | None = None):
    """Render the pulse train as a sampled voltage-proportional time series.

    Each pulse is a unit-area raised-cosine of full width ``shaping_width_us``
    scaled by its charge and centred in its repetition period.  Returns
    ``(t, trace)``.
    """
    if sample_rate_hz is None:
        sample_rate_hz = 20.0 * rep_rate_hz
    ratio = sample_rate_hz / rep_rate_hz
    spp = int(round(ratio))
    if spp < 2 or abs(ratio - spp) > 1e-9 * ratio:
        raise ValueError("sample_rate_hz must be an integer multiple (>= 2) of rep_rate_hz")
    width = shaping_width_us * 1e-6
    period = 1.0 / rep_rate_hz
    if width <= 0:
        raise ValueError("shaping width must be positive")
    if width > period:
        raise ValueError(f"pulse width {shaping_width_us} us exceeds repetition period {period * 1e6:.3f} us")
    dt = 1.0 / sample_rate_hz
    t_local = (np.arange(spp) - spp // 2) * dt
    kernel = np.where(np.abs(t_local) < width / 2, 1.0 + np.cos(TWO_PI * t_local / width), 0.0)
    if kernel.sum() == 0:
        raise ValueError("pulse narrower than one sample")
    kernel /= kernel.sum() * dt
    charges = np.asarray(records.charge_e, dtype=float)
    trace = np.outer(charges, kernel).ravel()
    t = np.arange(trace.size) * dt
    return t, trace
