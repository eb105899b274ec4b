"""State reconstruction from phase-scanned quadrature data.

Pipeline: contiguous time slices -> histograms (``bin_marginals``) -> LO phase
of each slice from its mean quadrature (``estimate_phases``) -> Wigner function
by filtered back-projection (``inverse_radon``) and density matrix by
pattern-function sampling (``sample_density_matrix``).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit, minimize

from .errors import DataError, NumericalError, PhaseUnresolvableError
from .fockstate import (
    DensityMatrix,
    WignerGrid,
    coherent_amplitude_estimate,
    fidelity_with_coherent,
    mean_photon_number,
    photon_number_distribution,
)
from .patterns import PatternTable, build_pattern_table
from .simulator import QuadratureSamples, segment_labels

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
DEFAULT_CUTOFF = 7.25


@dataclass(frozen=True)
class Marginals:
    """Phase-binned quadrature histograms, one row per time segment.

    ``means`` and ``sems`` (standard error of the mean) come from the raw
    samples, not the histogram.  ``phases`` is ``None`` until assigned.
    """

    counts: np.ndarray
    bin_edges: np.ndarray
    means: np.ndarray
    sems: np.ndarray
    phases: np.ndarray | None = None
    scan_phases: np.ndarray | None = None
    variances: np.ndarray = field(default=None)

    @property
    def n_phases(self) -> int:
        return self.counts.shape[0]

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    def densities(self) -> np.ndarray:
        """Histogram rows normalized to probability densities."""
        return self.counts / (self.totals[:, None] * self.bin_width)

    def with_phases(self, phases) -> "Marginals":
        phases = np.mod(np.asarray(phases, dtype=float), TWO_PI)
        if phases.shape != (self.n_phases,):
            raise ValueError(f"expected {self.n_phases} phases, got shape {phases.shape}")
        return replace(self, phases=phases)


def _segment_mean_angle(theta: np.ndarray) -> float:
    ref = theta[0]
    return float(np.mod(ref + np.mean(np.angle(np.exp(1j * (theta - ref)))), TWO_PI))


def histogram_half_range(values) -> float:
    """max |x| rounded up to the next multiple of 0.5 (at least 0.5)."""
    top = float(np.max(np.abs(values))) if np.size(values) else 0.0
    return max(0.5, math.ceil(top / 0.5) * 0.5 if top > 0 else 0.5)


def bin_marginals(samples: QuadratureSamples, n_phases: int = 64, n_bins: int = 128,
                  use_scan_phases: bool = True, allow_uneven: bool = False) -> Marginals:
    """Slice time-ordered samples into ``n_phases`` contiguous segments and histogram each.

    The sample count must be a multiple of ``n_phases`` unless ``allow_uneven``,
    in which case segment sizes differ by at most one (see ``segment_labels``).

    Bins are uniform over a symmetric range shared by all segments.  If the
    samples carry phases, each segment's mean scan phase is stored in
    ``scan_phases`` (and in ``phases`` when ``use_scan_phases``).
    """
    n = len(samples)
    if n == 0:
        raise DataError("no samples to bin")
    if n_phases < 1 or n_bins < 1:
        raise DataError("n_phases and n_bins must be positive")
    if n < n_phases:
        raise DataError(f"{n} samples cannot be split into {n_phases} segments")
    if n % n_phases and not allow_uneven:
        raise DataError(f"{n} samples are not divisible into {n_phases} equal segments")
    seg = segment_labels(n, n_phases)
    values = samples.value
    half = histogram_half_range(values)
    edges = np.linspace(-half, half, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(seg * n_bins + idx, minlength=n_phases * n_bins).reshape(n_phases, n_bins)
    per = np.bincount(seg, minlength=n_phases).astype(float)
    means = np.bincount(seg, values, n_phases) / per
    dev = values - means[seg]
    variances = np.bincount(seg, dev * dev, n_phases) / np.maximum(per - 1.0, 1.0)
    sems = np.sqrt(variances / per)
    scan = None
    if samples.theta is not None and np.all(np.isfinite(samples.theta)):
        bounds = np.flatnonzero(np.diff(seg)) + 1
        scan = np.array([_segment_mean_angle(row) for row in np.split(samples.theta, bounds)])
    return Marginals(
        counts=counts,
        bin_edges=edges,
        means=means,
        sems=sems,
        phases=scan if use_scan_phases else None,
        scan_phases=scan,
        variances=variances,
    )


def estimate_phases(marginals: Marginals, amplitude_hint: float | None = None,
                    scan_span: float = TWO_PI, resolve_sigma: float = 3.0) -> np.ndarray:
    """LO phase of each segment from its mean quadrature.

    With amplitude A = sqrt(2) alpha (``amplitude_hint`` is alpha), each
    segment gives cos(theta_i) = mean_i / A.  Without a hint, A is the larger
    of max |mean| and a sinusoid fit against the scan phases; the fit matters
    when few segments sample the extrema, max |mean| when drift smears them.  Of the two branches
    theta = +-arccos, the sequence is chosen (two-state Viterbi) whose wrapped
    increments best match a monotonic scan of ``scan_span`` over the run.
    Phases are returned in [0, 2 pi), measured from the coherent amplitude.
    """
    means = np.asarray(marginals.means, dtype=float)
    sems = np.asarray(marginals.sems, dtype=float)
    if not np.any(np.abs(means) > resolve_sigma * sems):
        raise PhaseUnresolvableError(
            "no segment mean differs from zero by more than "
            f"{resolve_sigma:g} standard errors; use the scan phases instead"
        )
    if amplitude_hint is None and marginals.scan_phases is not None and means.size >= 3:
        # means ~ a cos(scan) + b sin(scan); drift only shrinks the fit slightly
        sc = np.asarray(marginals.scan_phases, dtype=float)
        basis = np.column_stack([np.cos(sc), np.sin(sc)])
        (a, b), *_ = np.linalg.lstsq(basis, means, rcond=None)
        amp = max(math.hypot(a, b), float(np.max(np.abs(means))))
    elif amplitude_hint is None:
        amp = float(np.max(np.abs(means)))
    else:
        amp = math.sqrt(2.0) * float(amplitude_hint)
    if amp <= 0:
        raise PhaseUnresolvableError("amplitude estimate is zero")
    c = np.arccos(np.clip(means / amp, -1.0, 1.0))
    cand = np.stack([c, np.mod(-c, TWO_PI)], axis=1)  # (n, 2)
    step = scan_span / means.size

    def wrap(d):
        return np.mod(d + math.pi, TWO_PI) - math.pi

    n = means.size
    cost = np.zeros(2)
    back = np.zeros((n, 2), dtype=int)
    for i in range(1, n):
        d = wrap(cand[i][None, :] - cand[i - 1][:, None]) - step  # (prev, cur)
        total = cost[:, None] + d * d
        back[i] = np.argmin(total, axis=0)
        cost = total[back[i], [0, 1]]
    path = np.empty(n, dtype=int)
    path[-1] = int(np.argmin(cost))
    for i in range(n - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return cand[np.arange(n), path]


def radon_kernel(y, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """K(y) = integral_0^kc k cos(k y) dk, with a series for |y| < 1e-3."""
    y = np.asarray(y, dtype=float)
    kc = float(cutoff)
    out = np.empty_like(y)
    small = np.abs(y) < 1e-3
    ys = y[small]
    u2 = (kc * ys) ** 2
    out[small] = kc * kc * (0.5 - u2 / 8.0 + u2 * u2 / 144.0)
    yl = y[~small]
    u = kc * yl
    out[~small] = (u * np.sin(u) + np.cos(u) - 1.0) / (yl * yl)
    return out


def folded(marginals: Marginals):
    """Phases folded into [0, pi) with x -> -x for the flipped rows.

    Returns ``(phases, densities)``; uses pr(x, theta + pi) = pr(-x, theta).
    """
    if marginals.phases is None:
        raise DataError("marginals have no phases; estimate or assign them first")
    dens = marginals.densities()
    ph = np.mod(marginals.phases, TWO_PI)
    flip = ph >= math.pi
    dens = np.where(flip[:, None], dens[:, ::-1], dens)
    if not np.allclose(marginals.bin_edges, -marginals.bin_edges[::-1]):
        raise DataError("bin range must be symmetric about zero for phase folding")
    return np.where(flip, ph - math.pi, ph), dens


def phase_weights(phases, period: float = math.pi) -> np.ndarray:
    """Angular weight of each phase: half the gaps to its neighbours on a circle.

    Corrects for non-uniform phase coverage; weights sum to ``period``.
    """
    ph = np.mod(np.asarray(phases, dtype=float), period)
    n = ph.size
    if n == 1:
        return np.array([period])
    order = np.argsort(ph, kind="stable")
    s = ph[order]
    gaps = np.diff(np.concatenate([s, [s[0] + period]]))
    w_sorted = 0.5 * (gaps + np.roll(gaps, 1))
    w = np.empty(n)
    w[order] = w_sorted
    return w


def default_axis(marginals: Marginals, half_width: float = 6.0, n_points: int = 121) -> np.ndarray:
    half = min(half_width, float(marginals.bin_edges[-1]))
    return np.linspace(-half, half, n_points)


def inverse_radon(marginals: Marginals, cutoff: float = DEFAULT_CUTOFF, q_axis=None, p_axis=None) -> WignerGrid:
    """Wigner function by filtered back-projection of the marginals.

    W(q, p) = 1/(2 pi^2) sum_i w_i sum_b pr_i(x_b) K(x_b - q cos th_i - p sin th_i) dx,

    with phases folded into [0, pi) and w_i their angular weights (pi / n for
    an even scan).  The cutoff is in inverse quadrature units of the package
    convention.
    """
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    phases, dens = folded(marginals)
    weights = phase_weights(phases)
    q_axis = default_axis(marginals) if q_axis is None else np.asarray(q_axis, dtype=float)
    p_axis = q_axis if p_axis is None else np.asarray(p_axis, dtype=float)
    edge = float(marginals.bin_edges[-1])
    if max(np.max(np.abs(q_axis)), np.max(np.abs(p_axis))) > edge * math.sqrt(2) + 1e-9:
        raise DataError("Wigner grid extends beyond the sampled quadrature range")
    q, p = np.meshgrid(q_axis, p_axis, indexing="ij")
    qf, pf = q.ravel(), p.ravel()
    xb = marginals.bin_centers
    dx = marginals.bin_width
    w = np.zeros(qf.size)
    for th, wt, row in zip(phases, weights, dens):
        nz = row > 0
        if not np.any(nz):
            continue
        s = qf * math.cos(th) + pf * math.sin(th)
        kern = radon_kernel(xb[nz][:, None] - s[None, :], cutoff)
        w += wt * (row[nz] * dx) @ kern
    w /= 2.0 * math.pi**2
    return WignerGrid(q_axis, p_axis, w.reshape(q.shape))


@dataclass(frozen=True)
class GaussianPeak:
    q0: float
    p0: float
    width: float  # standard deviation along each axis (isotropic fit)
    amplitude: float
    offset: float


def fit_gaussian_peak(grid: WignerGrid, radius: float = 2.0) -> GaussianPeak:
    """Isotropic 2-D Gaussian fit to the region within ``radius`` of the maximum."""
    vals = grid.values
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    q, p = np.meshgrid(grid.q_axis, grid.p_axis, indexing="ij")
    q0, p0 = grid.q_axis[i], grid.p_axis[j]
    sel = (q - q0) ** 2 + (p - p0) ** 2 <= radius**2

    def model(xy, a, qc, pc, s, c):
        x, y = xy
        return a * np.exp(-((x - qc) ** 2 + (y - pc) ** 2) / (2 * s * s)) + c

    try:
        popt, _ = curve_fit(model, (q[sel], p[sel]), vals[sel], p0=[vals[i, j], q0, p0, 0.7, 0.0])
    except RuntimeError as exc:
        raise NumericalError(f"Gaussian peak fit failed: {exc}") from exc
    a, qc, pc, s, c = popt
    return GaussianPeak(float(qc), float(pc), float(abs(s)), float(a), float(c))


@dataclass(frozen=True)
class ReconstructedState:
    rho: DensityMatrix
    std_err: np.ndarray
    n_samples: int
    mean_n_err: float = float("nan")
    w00_err: float = float("nan")


def assign_segment_phases(samples: QuadratureSamples, marginals: Marginals,
                          keep_ramp: bool = True) -> QuadratureSamples:
    """Give every sample the phase of its segment (contiguous slicing as in ``bin_marginals``).

    With ``keep_ramp`` and known scan phases, each sample keeps its scan offset
    from the segment mean, so only the per-segment offset is taken from the
    estimate and the ramp within a segment is not smeared out.
    """
    if marginals.phases is None:
        raise DataError("marginals have no phases")
    seg = segment_labels(len(samples), marginals.n_phases)
    theta = marginals.phases[seg]
    if keep_ramp and marginals.scan_phases is not None and np.all(np.isfinite(samples.theta)):
        offset = np.angle(np.exp(1j * (samples.theta - marginals.scan_phases[seg])))
        theta = np.mod(theta + offset, TWO_PI)
    return QuadratureSamples(theta, samples.value, seg)


def sample_density_matrix(samples: QuadratureSamples, dim: int, table: PatternTable | None = None,
                          weight_segments: bool = True) -> ReconstructedState:
    """Pattern-function estimate rho_mn = < f_mn(x_j) exp(i (m - n) theta_j) >.

    When the samples carry segment labels, each segment's mean is weighted by
    the angular width its phase covers (``phase_weights``), correcting uneven
    phase coverage; otherwise all samples count equally.  ``std_err`` is the
    per-sample estimator spread divided by sqrt(N) (segment-weighted).
    """
    theta = samples.theta
    x = samples.value
    n = x.size
    if n == 0:
        raise DataError("no samples")
    if not np.all(np.isfinite(theta)):
        raise DataError("samples have unset phases")
    if n < 10 * dim * dim:
        warnings.warn(f"only {n} samples for a {dim}x{dim} reconstruction", stacklevel=2)
    if table is None or table.dim < dim:
        table = build_pattern_table(dim, x_max=max(histogram_half_range(x), max(5.0, math.sqrt(2.0 * dim)) + 3.0))

    if samples.segment is not None and weight_segments:
        seg = samples.segment
        labels, inverse = np.unique(seg, return_inverse=True)
        counts = np.bincount(inverse).astype(float)
        seg_phase = np.array([_segment_mean_angle(theta[inverse == k]) for k in range(labels.size)])
        wseg = phase_weights(seg_phase)
        wseg = wseg / wseg.sum()
    else:
        inverse = np.zeros(n, dtype=np.int64)
        counts = np.array([float(n)])
        wseg = np.array([1.0])
    nseg = counts.size
    i0, t = table.interpolation_weights(x)
    phase = {d: np.exp(1j * d * theta) for d in range(dim)}

    def seg_stats(values):
        """Weighted mean and its standard error from per-segment moments."""
        if np.iscomplexobj(values):
            s1 = np.bincount(inverse, values.real, nseg) + 1j * np.bincount(inverse, values.imag, nseg)
            s2 = np.bincount(inverse, values.real**2 + values.imag**2, nseg)
        else:
            s1 = np.bincount(inverse, values, nseg)
            s2 = np.bincount(inverse, values * values, nseg)
        mu = s1 / counts
        var = np.maximum(s2 / counts - np.abs(mu) ** 2, 0.0)
        dof = np.maximum(counts - 1.0, 1.0)
        var = var * counts / dof
        mean = np.sum(wseg * mu)
        err = math.sqrt(float(np.sum(wseg**2 * var / counts)))
        return mean, err

    rho = np.zeros((dim, dim), dtype=complex)
    err = np.zeros((dim, dim))
    n_acc = np.zeros(n)
    parity_acc = np.zeros(n)
    for m in range(dim):
        for k in range(m + 1):
            row = table.f_values[m, k]
            f = row[i0] * (1.0 - t) + row[i0 + 1] * t
            if m == k:
                mean, e = seg_stats(f)
                rho[m, m] = mean.real
                err[m, m] = e
                n_acc += m * f
                parity_acc += (-1) ** m * f
            else:
                mean, e = seg_stats(f * phase[m - k])
                rho[m, k] = mean
                rho[k, m] = np.conj(mean)
                err[m, k] = err[k, m] = e
    _, n_err = seg_stats(n_acc)
    _, parity_err = seg_stats(parity_acc)
    est = DensityMatrix(rho)
    return ReconstructedState(est, err, n, mean_n_err=n_err, w00_err=parity_err / math.pi)


def fit_coherent_amplitude(rho: DensityMatrix) -> tuple[complex, float]:
    """Coherent amplitude maximizing <alpha|rho|alpha>, started from <a>."""
    a0 = coherent_amplitude_estimate(rho)

    def neg(v):
        return -fidelity_with_coherent(rho, complex(v[0], v[1]))

    res = minimize(neg, [a0.real, a0.imag], method="Nelder-Mead",
                   options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 2000})
    alpha = complex(res.x[0], res.x[1])
    return alpha, fidelity_with_coherent(rho, alpha)


@dataclass(frozen=True)
class ReconstructionReport:
    n_samples: int
    mean_n: float
    mean_n_err: float
    distribution: np.ndarray
    distribution_err: np.ndarray
    poisson_reference: np.ndarray
    fitted_alpha: complex
    fitted_fidelity: float
    w00: float
    w00_err: float
    reference_alpha: complex | None = None
    reference_fidelity: float | None = None
    extras: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"samples: {self.n_samples}",
            f"mean photon number <n>: {self.mean_n:.4f} +- {self.mean_n_err:.4f}",
            f"fitted coherent amplitude: |alpha| = {abs(self.fitted_alpha):.4f}, "
            f"arg = {math.degrees(np.angle(self.fitted_alpha)):.2f} deg",
            f"fidelity vs fitted alpha: {self.fitted_fidelity:.4f}",
        ]
        if self.fitted_fidelity > 1.0:
            lines.append("  (linear estimate; values above 1 are within statistical error)")
        if self.reference_alpha is not None:
            lines.append(
                f"fidelity vs reference alpha {self.reference_alpha.real:.4g}"
                f"{self.reference_alpha.imag:+.4g}j: {self.reference_fidelity:.4f}"
            )
        if self.w00 + 3.0 * self.w00_err < 0:
            sign = "W(0,0) < 0, non-classical at 3 sigma"
        elif self.w00 < 0:
            sign = "W(0,0) < 0 but within 3 sigma of zero"
        else:
            sign = "W(0,0) >= 0"
        lines.append(f"W(0,0) from density matrix: {self.w00:.4f} +- {self.w00_err:.4f}  [{sign}]")
        for key, val in self.extras.items():
            lines.append(f"{key}: {val}")
        lines.append("photon number distribution (n, p_n, err, poisson):")
        for k, (pn, en, po) in enumerate(zip(self.distribution, self.distribution_err, self.poisson_reference)):
            lines.append(f"  {k:3d} {pn: .5f} {en:.5f} {po:.5f}")
        return "\n".join(lines) + "\n"


def reconstruct_report(state: ReconstructedState, reference_alpha: complex | None = None) -> ReconstructionReport:
    from scipy.stats import poisson

    rho = state.rho
    nbar = mean_photon_number(rho)
    dist = photon_number_distribution(rho)
    ref = poisson.pmf(np.arange(rho.dim), max(nbar, 0.0))
    alpha, fid = fit_coherent_amplitude(rho)
    ref_fid = None
    if reference_alpha is not None:
        reference_alpha = complex(reference_alpha)
        ref_fid = fidelity_with_coherent(rho, reference_alpha)
    w00 = float(np.sum(dist * (-1.0) ** np.arange(rho.dim)) / math.pi)
    return ReconstructionReport(
        n_samples=state.n_samples,
        mean_n=nbar,
        mean_n_err=state.mean_n_err,
        distribution=dist,
        distribution_err=np.diag(state.std_err).copy(),
        poisson_reference=ref,
        fitted_alpha=alpha,
        fitted_fidelity=fid,
        w00=w00,
        w00_err=state.w00_err,
        reference_alpha=reference_alpha,
        reference_fidelity=ref_fid,
    )
