"""``pulsed-bhd`` command-line front end.

Every command is a pure function of (preset, config file, flags, seed).  Each
output file starts with ``#@ key=value`` lines holding the fully resolved
configuration, so ``--config <any output file>`` replays the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from . import io as bio
from .characterize import (
    cmrr_db,
    leakage_threshold_photons,
    linearity_check,
    measured_subtraction_db,
    noise_scaling_fit,
    noise_sweep,
    snr_db,
    spectrum_report,
    subtraction_db,
)
from .config import RunConfig, load_config_file, parse_key_values, preset, provenance_lines, resolve
from .errors import ConfigError, DataError, NumericalError, PhaseUnresolvableError
from .fockstate import (
    DensityMatrix,
    apply_loss,
    coherent_density_matrix,
    fock_density_matrix,
    vacuum_density_matrix,
    wigner_at_origin,
    wigner_from_density,
)
from .simulator import (
    AcquisitionConfig,
    DetectorParams,
    block_rng,
    detected_amplitude_factor,
    emit_trace,
    pulse_charge,
    run_acquisition,
)
from .tomography import (
    assign_segment_phases,
    bin_marginals,
    estimate_phases,
    fit_gaussian_peak,
    inverse_radon,
    reconstruct_report,
    sample_density_matrix,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

# command-line flag dest -> configuration key
_FLAG_KEYS = {
    "seed": "seed",
    "state": "state",
    "alpha": "alpha",
    "fock_n": "fock_n",
    "pulses": "n_pulses",
    "n_phases": "n_phases",
    "n_bins": "n_bins",
    "include_charge": "include_charge",
    "phases": "phases",
    "ref_alpha": "ref_alpha",
    "dim": "dim",
    "cutoff": "cutoff",
    "snr_at": "snr_at",
    "subtraction_at": "subtraction_at",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    # SUPPRESS keeps subparser defaults from clobbering flags given before the subcommand
    g.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                   help="key=value file; any output file's header also works")
    g.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS)
    g.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory (default: .)")
    g.add_argument("--preset", metavar="NAME", default=argparse.SUPPRESS,
                   help="coherent-paper, vacuum or single-photon")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS,
                   help="override any configuration key (repeatable)")

    parser = _Parser(prog="pulsed-bhd", parents=[common],
                     description="Pulsed balanced homodyne detection: simulation, tomography, characterization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate a phase-scanned acquisition")
    _state_flags(p)
    p.add_argument("--pulses", type=int, default=argparse.SUPPRESS)
    p.add_argument("--n-phases", type=int, default=argparse.SUPPRESS)
    p.add_argument("--include-charge", action="store_const", const="true", default=argparse.SUPPRESS,
                   help="also write charge_e and lo_n columns")

    p = sub.add_parser("reconstruct", parents=[common], help="Wigner function and density matrix from data")
    p.add_argument("input", help="acquisition CSV (index,theta_rad,quadrature)")
    p.add_argument("--phases", choices=["estimate", "scan"], default=argparse.SUPPRESS,
                   help="estimate LO phases from the data or trust the scan column")
    p.add_argument("--ref-alpha", type=float, default=argparse.SUPPRESS,
                   help="report fidelity against this (real) coherent amplitude")
    p.add_argument("--dim", type=int, default=argparse.SUPPRESS)
    p.add_argument("--cutoff", type=float, default=argparse.SUPPRESS)
    p.add_argument("--n-phases", type=int, default=argparse.SUPPRESS)
    p.add_argument("--n-bins", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("characterize", parents=[common], help="noise-vs-LO-power sweep, SNR and subtraction")
    p.add_argument("--sweep", metavar="CSV", default=None, help="measured sweep (lo_photons,variance_e2)")
    p.add_argument("--snr-at", type=float, default=argparse.SUPPRESS, metavar="N")
    p.add_argument("--subtraction-at", type=float, default=argparse.SUPPRESS, metavar="N")

    p = sub.add_parser("spectrum", parents=[common], help="noise power spectrum of a detector trace")
    p.add_argument("--trace", metavar="CSV", default=None, help="trace file (time_s,signal); simulated if absent")
    _state_flags(p)

    p = sub.add_parser("wigner", parents=[common], help="exact Wigner function of the detected analytic state")
    _state_flags(p)
    return parser


def _state_flags(p):
    p.add_argument("--state", choices=["vacuum", "coherent", "fock"], default=argparse.SUPPRESS)
    p.add_argument("--alpha", type=float, default=argparse.SUPPRESS)
    p.add_argument("--fock-n", type=int, default=argparse.SUPPRESS)


def _flag_overrides(args) -> dict:
    out = {}
    ns = vars(args)
    for dest, key in _FLAG_KEYS.items():
        if dest in ns and ns[dest] is not None:
            out[key] = ns[dest] if isinstance(ns[dest], str) else str(ns[dest])
    for item in ns.get("set", []) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    return out


def resolve_config(args, base: dict | None = None) -> RunConfig:
    ns = vars(args)
    layers = [base or {}, preset(ns.get("preset"))]
    if "config" in ns:
        layers.append(load_config_file(ns["config"]))
    layers.append(_flag_overrides(args))
    return resolve(*layers)


def source_state(cfg: RunConfig, params: DetectorParams) -> DensityMatrix:
    """Density matrix of the state entering the detector (before loss)."""
    if cfg.state == "vacuum":
        return vacuum_density_matrix(1)
    if cfg.state == "fock":
        return fock_density_matrix(cfg.fock_n, cfg.fock_n + 1)
    amp = cfg.alpha
    if cfg.alpha_reference == "detected":
        amp /= detected_amplitude_factor(params, cfg.calibration)
    alpha = amp * np.exp(1j * math.radians(cfg.alpha_phase_deg))
    nbar = abs(alpha) ** 2
    dim = max(20, int(math.ceil(nbar + 6.0 * math.sqrt(nbar) + 12.0)))
    return coherent_density_matrix(alpha, dim)


def detected_state(cfg: RunConfig, params: DetectorParams) -> DensityMatrix:
    """State as seen in calibrated data: loss eta, plus the effective loss that
    vacuum calibration assigns to electronic noise."""
    eff = detected_amplitude_factor(params, cfg.calibration) ** 2
    return apply_loss(source_state(cfg, params), eff)


def _out_dir(args) -> str:
    out = vars(args).get("out", ".")
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _write(fn, path, *a, **kw):
    try:
        fn(path, *a, **kw)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    return path


def _axis(cfg: RunConfig, limit: float | None = None) -> np.ndarray:
    half = cfg.grid_half_width if limit is None else min(cfg.grid_half_width, limit)
    return np.linspace(-half, half, cfg.grid_points)


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> list[str]:
    cfg = resolve_config(args)
    out = _out_dir(args)
    params = cfg.detector()
    records, samples = run_acquisition(source_state(cfg, params), params, cfg.acquisition())
    head = provenance_lines(cfg, "simulate")
    path = _write(bio.write_acquisition, os.path.join(out, "acquisition.csv"), samples, records,
                  head, include_charge=cfg.include_charge)
    print(f"wrote {len(samples)} pulses to {path}")
    return [path]


def _phase_drift_text(phases, scan) -> str:
    d = np.unwrap(np.asarray(phases) - np.asarray(scan))
    d -= d.mean()
    return (f"rms {math.degrees(float(np.sqrt(np.mean(d * d)))):.2f} deg, "
            f"peak-to-peak {math.degrees(float(np.ptp(d))):.2f} deg (estimated minus scan, offset removed)")


def cmd_reconstruct(args) -> list[str]:
    samples, table = bio.read_acquisition(args.input)
    try:
        header = parse_key_values(table.header, args.input)
    except ConfigError as exc:
        raise DataError(f"unreadable header in {args.input}: {exc}") from exc
    cfg = resolve_config(args, header)
    out = _out_dir(args)
    n = len(samples)
    if n < cfg.n_phases:
        raise DataError(f"{n} samples cannot be split into n_phases={cfg.n_phases} segments")

    if n % cfg.n_phases:
        print(f"pulsed-bhd: note: {n} samples do not divide into {cfg.n_phases} segments; "
              "segment sizes differ by one", file=sys.stderr)
    m = bin_marginals(samples, cfg.n_phases, cfg.n_bins, use_scan_phases=True, allow_uneven=True)
    extras = {}
    if cfg.phases == "estimate":
        try:
            est = estimate_phases(m, scan_span=math.radians(cfg.scan_span_deg))
        except PhaseUnresolvableError as exc:
            raise PhaseUnresolvableError(
                f"{exc}. The state has no resolvable mean field; rerun with --phases scan") from None
        if m.scan_phases is not None:
            extras["phase drift"] = _phase_drift_text(est, m.scan_phases)
        m = m.with_phases(est)
    else:
        extras["phase drift"] = "not estimated (scan phases used)"
    phased = assign_segment_phases(samples, m)

    state = sample_density_matrix(phased, cfg.dim)
    axis = _axis(cfg, float(m.bin_edges[-1]))
    grid = inverse_radon(m, cfg.cutoff, axis, axis)
    extras["W(0,0) from inverse Radon"] = f"{grid.value_at(0.0, 0.0):.4f}"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            peak = fit_gaussian_peak(grid)
        extras["Wigner peak (Gaussian fit)"] = (f"q0 = {peak.q0:.4f}, p0 = {peak.p0:.4f}, "
                                                f"width = {peak.width:.4f}")
    except NumericalError:
        extras["Wigner peak (Gaussian fit)"] = "fit did not converge"
    rep = reconstruct_report(state, cfg.ref_alpha)
    rep.extras.update(extras)
    text = rep.to_text()

    head = provenance_lines(cfg, "reconstruct") + [f"# input: {os.path.basename(args.input)}"]
    paths = [
        _write(bio.write_marginals, os.path.join(out, "marginals.csv"), m, head),
        _write(bio.write_wigner, os.path.join(out, "wigner.csv"), grid, head),
        _write(bio.write_density_matrix, os.path.join(out, "rho.csv"), state.rho, head),
        _write(bio.write_text, os.path.join(out, "report.txt"), text, head),
    ]
    sys.stdout.write(text)
    return paths


def _linearity_text(params: DetectorParams, seed: int) -> str:
    x = np.linspace(-20.0, 20.0, 21)
    rng = block_rng(seed, 0, stream=3)
    charge, _ = pulse_charge(np.repeat(x, 2000), params, rng)
    res = linearity_check(x * params.gain(), charge.reshape(x.size, -1).mean(axis=1))
    verdict = "pass" if res.passed else "FAIL"
    return f"max deviation {100 * res.max_deviation:.3f}% of full scale, slope {res.slope:.5f} [{verdict}, limit 1%]"


def cmd_characterize(args) -> list[str]:
    cfg = resolve_config(args)
    out = _out_dir(args)
    params = cfg.detector()
    if args.sweep:
        lo, var = bio.read_sweep(args.sweep)
        n_pulses = None
    else:
        lo = np.geomspace(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points)
        var = noise_sweep(params, lo, cfg.sweep_pulses, cfg.seed, cfg.lo_poisson)
        n_pulses = cfg.sweep_pulses
    fit = noise_scaling_fit(lo, var, n_pulses)
    snr_n = cfg.snr_at if cfg.snr_at is not None else cfg.lo_photons
    sub_n = cfg.subtraction_at if cfg.subtraction_at is not None else float(np.max(lo))
    p_snr = DetectorParams(**{**params.__dict__, "lo_photons": snr_n})
    fit_snr = 10 * math.log10(fit.gain_fit * snr_n / fit.floor_variance) if fit.floor_variance > 0 else math.inf
    try:
        meas_sub = f"{measured_subtraction_db(lo, var, fit.gain_fit, fit.floor_variance):.2f} dB"
    except DataError as exc:
        meas_sub = f"n/a ({exc})"
    lines = [
        f"sweep points: {lo.size} ({lo.min():.3g} to {lo.max():.3g} LO photons/pulse)",
        f"electronic noise floor sigma_e: {fit.sigma_e_fit:.1f} +- {fit.sigma_e_err:.1f} e-/pulse",
        f"shot-noise gain (Var per LO photon): {fit.gain_fit:.5f} +- {fit.gain_err:.5f}",
        f"background-subtracted rms exponent: {fit.exponent_fit:.4f} +- {fit.exponent_err:.4f}",
        f"excluded points: {int(fit.excluded.sum())}",
        f"SNR at N = {snr_n:.4g}: {snr_db(p_snr):.2f} dB (model), {fit_snr:.2f} dB (fit)",
        f"subtraction at N = {sub_n:.4g}: {subtraction_db(sub_n):.2f} dB",
        f"subtraction from sweep (half-shot threshold): {meas_sub}",
        f"common-mode rejection (imbalance {cfg.imbalance:g}): {cmrr_db(cfg.imbalance):.2f} dB",
        f"imbalance leakage limit: {leakage_threshold_photons(params):.4g} LO photons/pulse",
        f"linearity: {_linearity_text(params, cfg.seed)}",
    ]
    text = "\n".join(lines) + "\n"
    head = provenance_lines(cfg, "characterize")
    if args.sweep:
        head.append(f"# sweep: {os.path.basename(args.sweep)}")
    resid = np.column_stack([lo, var, fit.residuals, fit.excluded.astype(float)])
    paths = [
        _write(bio.write_sweep, os.path.join(out, "sweep.csv"), lo, var, head),
        _write(bio.write_table, os.path.join(out, "sweep_residuals.csv"),
               ["lo_photons", "variance_e2", "residual_e2", "excluded"], resid, head),
        _write(bio.write_text, os.path.join(out, "characterize.txt"), text, head),
    ]
    sys.stdout.write(text)
    return paths


def cmd_spectrum(args) -> list[str]:
    cfg = resolve_config(args)
    out = _out_dir(args)
    head = provenance_lines(cfg, "spectrum")
    if args.trace:
        t, trace = bio.read_trace(args.trace)
        fs = 1.0 / float(np.median(np.diff(t)))
        head.append(f"# trace: {os.path.basename(args.trace)}")
    else:
        params = cfg.detector()
        acq = AcquisitionConfig(n_pulses=cfg.trace_pulses, n_phases=1, scan_span=math.radians(cfg.scan_span_deg),
                                drift_deg=cfg.drift_deg, seed=cfg.seed, calibration=cfg.calibration,
                                lo_poisson=cfg.lo_poisson)
        records, _ = run_acquisition(source_state(cfg, params), params, acq)
        try:
            t, trace = emit_trace(records, cfg.rep_rate_hz, cfg.shaping_width_us, cfg.sample_rate_hz)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        fs = cfg.sample_rate_hz or 20.0 * cfg.rep_rate_hz
    rep = spectrum_report(trace, fs, cfg.rep_rate_hz)
    harm = ", ".join(f"{h / 1e3:.1f}" for h in rep.harmonics) or "none"
    lines = [
        f"samples: {trace.size} at {fs:.6g} Hz, Welch segment {rep.nperseg} (Hann, 50% overlap)",
        f"flatness (inter-harmonic band means up to {rep.band_edges[-1] / 1e3:.1f} kHz): {rep.flatness_db:.3f} dB",
        f"repetition-rate harmonics above floor (kHz): {harm}",
        f"spectral lines above floor: {rep.lines.size}",
    ]
    text = "\n".join(lines) + "\n"
    paths = [
        _write(bio.write_psd, os.path.join(out, "psd.csv"), rep.frequency, rep.psd, head),
        _write(bio.write_text, os.path.join(out, "spectrum.txt"), text, head),
    ]
    sys.stdout.write(text)
    return paths


def cmd_wigner(args) -> list[str]:
    cfg = resolve_config(args)
    out = _out_dir(args)
    params = cfg.detector()
    rho = detected_state(cfg, params)
    axis = _axis(cfg)
    grid = wigner_from_density(rho, axis, axis)
    lines = [
        f"state: {cfg.state}, detected efficiency {detected_amplitude_factor(params, cfg.calibration) ** 2:.4f}",
        f"W(0,0) = {wigner_at_origin(rho):.6f}",
        f"min W = {grid.values.min():.6f}, max W = {grid.values.max():.6f}",
        f"grid integral = {grid.integral():.6f}",
    ]
    text = "\n".join(lines) + "\n"
    head = provenance_lines(cfg, "wigner")
    paths = [
        _write(bio.write_wigner, os.path.join(out, "wigner_exact.csv"), grid, head),
        _write(bio.write_density_matrix, os.path.join(out, "rho_exact.csv"), rho, head),
        _write(bio.write_text, os.path.join(out, "wigner_exact.txt"), text, head),
    ]
    sys.stdout.write(text)
    return paths


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "characterize": cmd_characterize,
    "spectrum": cmd_spectrum,
    "wigner": cmd_wigner,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"pulsed-bhd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"pulsed-bhd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"pulsed-bhd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"pulsed-bhd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
