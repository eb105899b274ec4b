"""CSV readers and writers with ``#@ key=value`` provenance headers.

Floats are written with ``%.17g`` so that files round-trip exactly and are
byte-identical between runs with the same configuration.
"""

from __future__ import annotations

import io as _io
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .fockstate import DensityMatrix, WignerGrid
from .simulator import PulseRecords, QuadratureSamples

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Table:
    header: list[str]  # raw comment lines, without trailing newline
    columns: list[str]
    data: np.ndarray  # shape (rows, len(columns))

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise DataError(f"missing column {name!r}; have {', '.join(self.columns)}") from None


def write_table(path, columns, data, header_lines=(), fmt=FLOAT_FMT):
    """Write ``data`` (rows x columns) as CSV; ``fmt`` may be one format per column."""
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError("data shape does not match the column names")
    buf = _io.StringIO()
    for line in header_lines:
        buf.write(line.rstrip("\n") + "\n")
    buf.write(",".join(columns) + "\n")
    if data.shape[0]:
        np.savetxt(buf, data, fmt=fmt, delimiter=",")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_table(path, required=()) -> Table:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    header = []
    i = 0
    while i < len(lines) and (not lines[i].strip() or lines[i].lstrip().startswith("#")):
        if lines[i].strip():
            header.append(lines[i])
        i += 1
    if i == len(lines):
        raise DataError(f"{path}: no column header found")
    columns = [c.strip() for c in lines[i].split(",")]
    for name in required:
        if name not in columns:
            raise DataError(f"{path}: missing column {name!r}")
    body = "\n".join(lines[i + 1:])
    try:
        data = np.loadtxt(_io.StringIO(body), delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: malformed data ({exc})") from exc
    if data.size == 0:
        data = np.zeros((0, len(columns)))
    if data.shape[1] != len(columns):
        raise DataError(f"{path}: {data.shape[1]} data columns but {len(columns)} names")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite values")
    return Table(header, columns, data)


# -- acquisition ------------------------------------------------------------

ACQ_COLUMNS = ["index", "theta_rad", "quadrature"]


def write_acquisition(path, samples: QuadratureSamples, records: PulseRecords | None = None,
                      header_lines=(), include_charge: bool = False):
    n = len(samples)
    cols = [np.arange(n), samples.theta, samples.value]
    names = list(ACQ_COLUMNS)
    fmt = ["%d", FLOAT_FMT, FLOAT_FMT]
    if include_charge:
        if records is None:
            raise ValueError("charge columns need the pulse records")
        cols += [records.charge_e, records.lo_n]
        names += ["charge_e", "lo_n"]
        fmt += [FLOAT_FMT, FLOAT_FMT]
    write_table(path, names, np.column_stack(cols), header_lines, fmt)


def read_acquisition(path) -> tuple[QuadratureSamples, Table]:
    table = read_table(path, ACQ_COLUMNS)
    idx = table.column("index")
    if idx.size and np.any(np.diff(idx) <= 0):
        raise DataError(f"{path}: pulse index must be strictly increasing")
    try:
        samples = QuadratureSamples(table.column("theta_rad"), table.column("quadrature"))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return samples, table


# -- density matrix ---------------------------------------------------------

def write_density_matrix(path, rho: DensityMatrix, header_lines=()):
    r = rho.elements
    m, n = np.meshgrid(np.arange(rho.dim), np.arange(rho.dim), indexing="ij")
    data = np.column_stack([m.ravel(), n.ravel(), r.real.ravel(), r.imag.ravel()])
    write_table(path, ["m", "n", "re", "im"], data, header_lines, ["%d", "%d", FLOAT_FMT, FLOAT_FMT])


def read_density_matrix(path) -> DensityMatrix:
    """Accepts either the full matrix or one triangle (mirrored by Hermiticity)."""
    t = read_table(path, ["m", "n", "re", "im"])
    m = t.column("m")
    n = t.column("n")
    if np.any(m < 0) or np.any(n < 0) or np.any(m != np.round(m)) or np.any(n != np.round(n)):
        raise DataError(f"{path}: indices must be non-negative integers")
    m = m.astype(int)
    n = n.astype(int)
    dim = int(max(m.max(), n.max())) + 1
    r = np.full((dim, dim), np.nan, dtype=complex)
    r[m, n] = t.column("re") + 1j * t.column("im")
    missing = np.isnan(r.real)
    r[missing] = np.conj(r.T[missing])
    if np.any(np.isnan(r.real)):
        raise DataError(f"{path}: density matrix has missing elements")
    return DensityMatrix(r)


# -- Wigner grid ------------------------------------------------------------

def write_wigner(path, grid: WignerGrid, header_lines=()):
    q, p = np.meshgrid(grid.q_axis, grid.p_axis, indexing="ij")
    data = np.column_stack([q.ravel(), p.ravel(), grid.values.ravel()])
    write_table(path, ["q", "p", "w"], data, header_lines)


def read_wigner(path) -> WignerGrid:
    t = read_table(path, ["q", "p", "w"])
    q_axis = np.unique(t.column("q"))
    p_axis = np.unique(t.column("p"))
    if q_axis.size * p_axis.size != t.data.shape[0]:
        raise DataError(f"{path}: points do not form a complete grid")
    qi = np.searchsorted(q_axis, t.column("q"))
    pi = np.searchsorted(p_axis, t.column("p"))
    values = np.full((q_axis.size, p_axis.size), np.nan)
    values[qi, pi] = t.column("w")
    if np.any(np.isnan(values)):
        raise DataError(f"{path}: duplicate grid points")
    try:
        return WignerGrid(q_axis, p_axis, values)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# -- derived tables ---------------------------------------------------------

def write_marginals(path, marginals, header_lines=()):
    """One row per (segment, bin): segment, assigned phase, bin centre, count."""
    ns, nb = marginals.counts.shape
    phases = marginals.phases if marginals.phases is not None else np.full(ns, np.nan)
    seg = np.repeat(np.arange(ns), nb)
    data = np.column_stack([seg, np.repeat(phases, nb), np.tile(marginals.bin_centers, ns),
                            marginals.counts.ravel()])
    write_table(path, ["segment", "theta_rad", "bin_center", "count"], data, header_lines,
                ["%d", FLOAT_FMT, FLOAT_FMT, "%d"])


def write_sweep(path, lo_photons, variances, header_lines=()):
    write_table(path, ["lo_photons", "variance_e2"], np.column_stack([lo_photons, variances]), header_lines)


def read_sweep(path):
    t = read_table(path, ["lo_photons", "variance_e2"])
    return t.column("lo_photons"), t.column("variance_e2")


def write_psd(path, frequency, psd, header_lines=()):
    write_table(path, ["frequency_hz", "psd_e2_per_hz"], np.column_stack([frequency, psd]), header_lines)


def write_trace(path, t, trace, header_lines=()):
    write_table(path, ["time_s", "signal"], np.column_stack([t, trace]), header_lines)


def read_trace(path):
    tab = read_table(path, ["time_s", "signal"])
    t = tab.column("time_s")
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise DataError(f"{path}: time column must be strictly increasing")
    return t, tab.column("signal")


def write_text(path, text: str, header_lines=()):
    body = "".join(line + "\n" for line in header_lines) + text
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(body)
    os.replace(tmp, path)
