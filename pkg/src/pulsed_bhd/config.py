"""Run configuration: flat ``key=value`` files, presets and provenance headers.

Resolution order (later wins): defaults, input-file header (reconstruct
only), preset, ``--config`` file, command-line flags.  Output files carry
every resolved key as ``#@ key=value`` lines, so any output can be passed
back as ``--config`` to replay the run.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError
from .simulator import DEFAULT_KAPPA, AcquisitionConfig, DetectorParams

PROVENANCE_PREFIX = "#@"


@dataclass(frozen=True)
class RunConfig:
    # state
    state: str = "coherent"
    alpha: float = 2.24
    alpha_phase_deg: float = 0.0
    alpha_reference: str = "source"
    fock_n: int = 1
    # detector
    eta_total: float = 0.91
    kappa: float = DEFAULT_KAPPA
    sigma_e: float = 730.0
    imbalance: float = 0.0
    lo_photons: float = 1.6e8
    lo_rin: float = 0.0
    rep_rate_hz: float = 204_000.0
    # acquisition
    n_pulses: int = 262_144
    n_phases: int = 64
    scan_span_deg: float = 360.0
    drift_deg: float = 8.0
    seed: int = 0
    calibration: str = "model"
    lo_poisson: bool = True
    include_charge: bool = False
    # tomography
    n_bins: int = 128
    cutoff: float = 7.25
    dim: int = 20
    phases: str = "estimate"
    ref_alpha: float | None = None
    grid_half_width: float = 6.0
    grid_points: int = 121
    # characterization
    sweep_min: float = 3e6
    sweep_max: float = 3e8
    sweep_points: int = 10
    sweep_pulses: int = 50_000
    snr_at: float | None = None
    subtraction_at: float | None = None
    shaping_width_us: float = 1.0
    sample_rate_hz: float | None = None
    trace_pulses: int = 16_384

    def __post_init__(self):
        _validate(self)

    def detector(self) -> DetectorParams:
        return DetectorParams(
            eta_total=self.eta_total, kappa=self.kappa, sigma_e=self.sigma_e, imbalance=self.imbalance,
            lo_photons=self.lo_photons, lo_rin=self.lo_rin, rep_rate_hz=self.rep_rate_hz,
        )

    def acquisition(self) -> AcquisitionConfig:
        return AcquisitionConfig(
            n_pulses=self.n_pulses, n_phases=self.n_phases, scan_span=math.radians(self.scan_span_deg),
            drift_deg=self.drift_deg, seed=self.seed, calibration=self.calibration, lo_poisson=self.lo_poisson,
        )

    def items(self):
        return asdict(self).items()


_CHOICES = {
    "state": ("vacuum", "coherent", "fock"),
    "alpha_reference": ("source", "detected"),
    "calibration": ("model", "vacuum"),
    "phases": ("estimate", "scan"),
}

# (low, high, low_inclusive, high_inclusive)
_RANGES = {
    "alpha": (0.0, 5.0, True, True),
    "fock_n": (0, 23, True, True),
    "eta_total": (0.0, 1.0, False, True),
    "kappa": (0.0, 1.0, False, True),
    "sigma_e": (0.0, math.inf, True, False),
    "imbalance": (0.0, 0.5, True, False),
    "lo_photons": (0.0, math.inf, False, False),
    "lo_rin": (0.0, 1.0, True, True),
    "rep_rate_hz": (0.0, math.inf, False, False),
    "n_pulses": (1, 10**8, True, True),
    "n_phases": (1, 4096, True, True),
    "scan_span_deg": (0.0, 3600.0, True, True),
    "drift_deg": (0.0, 360.0, True, True),
    "seed": (0, 2**63 - 1, True, True),
    "n_bins": (2, 8192, True, True),
    "cutoff": (0.0, 100.0, False, True),
    "dim": (1, 25, True, True),
    "ref_alpha": (0.0, 5.0, True, True),
    "grid_half_width": (0.0, 20.0, False, True),
    "grid_points": (3, 2001, True, True),
    "sweep_min": (0.0, math.inf, False, False),
    "sweep_max": (0.0, math.inf, False, False),
    "sweep_points": (6, 1000, True, True),
    "sweep_pulses": (100, 10**8, True, True),
    "snr_at": (0.0, math.inf, False, False),
    "subtraction_at": (0.0, math.inf, False, False),
    "shaping_width_us": (0.0, 1e3, False, True),
    "sample_rate_hz": (0.0, math.inf, False, False),
    "trace_pulses": (1, 10**7, True, True),
}


def _validate(cfg: RunConfig):
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {getattr(cfg, key)!r}")
    for key, (lo, hi, lo_in, hi_in) in _RANGES.items():
        v = getattr(cfg, key)
        if v is None:
            continue
        ok_lo = v >= lo if lo_in else v > lo
        ok_hi = v <= hi if hi_in else v < hi
        if not (ok_lo and ok_hi):
            lb = "[" if lo_in else "("
            rb = "]" if hi_in else ")"
            raise ConfigError(f"{key}={v} outside {lb}{lo}, {hi}{rb}")
    if cfg.n_pulses < cfg.n_phases:
        raise ConfigError(f"n_pulses={cfg.n_pulses} is smaller than n_phases={cfg.n_phases}")
    if cfg.sweep_max <= cfg.sweep_min:
        raise ConfigError("sweep_max must exceed sweep_min")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "str":
            return text
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "None" in kind and text.lower() in ("", "none"):
            return None
        if kind.startswith("int"):
            value = float(text)
            if not value.is_integer():
                raise ValueError(text)
            return int(value)
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(text)
        return value
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r} as {kind}") from None


def parse_key_values(lines, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines; ``#@ key=value`` provenance lines count too.

    Plain ``#`` comments and blank lines are skipped; the first line without
    ``=`` that is not a comment ends the block (CSV data may follow).
    """
    out = {}
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if s.startswith(PROVENANCE_PREFIX):
            s = s[len(PROVENANCE_PREFIX):].strip()
        elif not s or s.startswith("#"):
            continue
        elif "=" not in s:
            break
        key, sep, value = s.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        out[key] = _convert(key, value)
    return out


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_key_values(fh, str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


PRESETS = {
    "coherent-paper": {
        "state": "coherent",
        "alpha": 2.24,
        "alpha_reference": "detected",
        "eta_total": 0.91,
        "sigma_e": 730.0,
        "n_pulses": 262_144,
        "n_phases": 64,
        "n_bins": 128,
        "drift_deg": 8.0,
        "calibration": "vacuum",
        "phases": "estimate",
        "cutoff": 7.25,
        "dim": 20,
    },
    "vacuum": {
        "state": "vacuum",
        "n_pulses": 262_144,
        "n_phases": 64,
        "calibration": "vacuum",
        "phases": "scan",
        "dim": 10,
    },
    "single-photon": {
        "state": "fock",
        "fock_n": 1,
        "eta_total": 0.91,
        "sigma_e": 0.0,
        "n_pulses": 100_000,
        "n_phases": 32,
        "calibration": "model",
        "phases": "scan",
        "dim": 10,
    },
}


def resolve(*layers: dict) -> RunConfig:
    """Merge override dictionaries (later wins) over the defaults and validate."""
    merged = {}
    for layer in layers:
        for key, value in (layer or {}).items():
            merged[key] = _convert(key, value)
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def preset(name: str | None) -> dict:
    if name is None:
        return {}
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return dict(PRESETS[name])


def provenance_lines(cfg: RunConfig, command: str) -> list[str]:
    lines = [f"# pulsed-bhd {command}"]
    for key, value in cfg.items():
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{PROVENANCE_PREFIX} {key}={value}")
    return lines
