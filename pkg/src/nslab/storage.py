"""On-disk formats: NSLP1 snapshots, key = value configs, CSV tables and run manifests."""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .criterion import CriterionReport, CriterionRow, ShellNormSeries
from .littlewood_paley import build_cutoffs, dyadic, shell_norm_table
from .solver import EnergyLedger, Solver, SolverConfig, initial_condition
from .spectral import Grid, SpectralField

log = logging.getLogger(__name__)

MAGIC = b"NSLP1"
VERSION = 1
_HEADER = struct.Struct("<5sBIdd")


class DataFormatError(ValueError):
    """An input file does not match its declared format."""


# --- snapshots ------------------------------------------------------------------

def write_snapshot(path, u: SpectralField, t: float) -> None:
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, g.n, float(t), float(g.nu)))
        fh.write(np.ascontiguousarray(u.full(), dtype="<c16").tobytes())


def read_snapshot(path) -> tuple:
    """(SpectralField, time) from an NSLP1 file."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n, t, nu = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != 3 * n ** 3 * 16:
        raise DataFormatError(f"{path}: expected {3 * n ** 3 * 16} payload bytes, found {len(body)}")
    try:
        grid = Grid(n, nu)
        full = np.frombuffer(body, dtype="<c16").reshape(3, n, n, n)
        return SpectralField.from_full(grid, full), t
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def snapshot_paths(directory) -> list:
    paths = sorted(Path(directory).glob("snap_*.nslp"))
    if not paths:
        raise DataFormatError(f"no snapshots in {directory}")
    return paths


def iter_snapshots(directory):
    for p in snapshot_paths(directory):
        u, t = read_snapshot(p)
        yield t, u


# --- configuration --------------------------------------------------------------

_CONFIG_KEYS = {
    "n": ("n", int),
    "nu": ("nu", float),
    "dt": ("dt", float),
    "t_end": ("t_end", float),
    "mode": ("mode", str),
    "dealias": ("dealias", "bool"),
    "snapshot_stride": ("snapshot_stride", int),
    "ic.name": ("ic_name", str),
    "ic.seed": ("ic_seed", int),
    "ic.slope": ("ic_slope", float),
    "ic.kc": ("ic_kc", float),
    "ic.amplitude": ("ic_amplitude", float),
    "forcing.name": ("forcing_name", str),
    "forcing.amplitude": ("forcing_amplitude", float),
}
_BOOLS = {"1": True, "true": True, "yes": True, "on": True,
          "0": False, "false": False, "no": False, "off": False}


def parse_config(text: str, source: str = "<config>") -> SolverConfig:
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise DataFormatError(f"{source}: {exc}") from None
    kwargs = {}
    for key, raw in parser["run"].items():
        if key not in _CONFIG_KEYS:
            raise DataFormatError(f"{source}: unknown key {key!r}")
        name, kind = _CONFIG_KEYS[key]
        raw = raw.strip()
        try:
            if kind == "bool":
                value = _BOOLS[raw.lower()]
            else:
                value = kind(raw)
        except (KeyError, ValueError):
            raise DataFormatError(f"{source}: bad value {raw!r} for {key}") from None
        kwargs[name] = value
    try:
        config = SolverConfig(**kwargs)
        config.grid
    except ValueError as exc:
        raise DataFormatError(f"{source}: {exc}") from None
    return config


def load_config(path) -> SolverConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))


def config_text(config: SolverConfig) -> str:
    inverse = {name: key for key, (name, _) in _CONFIG_KEYS.items()}
    lines = []
    for name, value in asdict(config).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{inverse[name]} = {value}")
    return "\n".join(lines) + "\n"


# --- numbers in CSV -------------------------------------------------------------

def format_float(x: float) -> str:
    return format(float(x), ".17g")


def format_short(x: float) -> str:
    """Shortest text that reads back to the same double."""
    return repr(float(x))


def format_exponent(s: float) -> str:
    """Shortest exact text for an exponent: '2', '10/3', 'inf' or 17 digits."""
    s = float(s)
    if math.isinf(s):
        return "inf"
    frac = Fraction(s).limit_denominator(64)
    if float(frac) == s:
        return str(frac)
    return format_float(s)


def parse_exponent(text: str) -> float:
    text = text.strip()
    if "/" in text:
        a, b = text.split("/", 1)
        if int(b) == 0:
            raise ValueError(f"zero denominator in {text!r}")
        return float(Fraction(int(a), int(b)))
    return float(text)


def _hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- shell-norm series ----------------------------------------------------------

SERIES_HEADER = ["time", "q", "s", "norm"]


def save_series(series, path) -> None:
    """Write one or more ShellNormSeries (sharing times and shells) as time,q,s,norm rows."""
    group = [series] if isinstance(series, ShellNormSeries) else list(series)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        times = group[0].times
        for i, t in enumerate(times):
            for ser in group:
                s_txt = format_exponent(ser.s)
                for j, q in enumerate(ser.shells):
                    w.writerow([format_float(t), q, s_txt, format_float(ser.norms[i, j])])


def load_series_table(path) -> dict:
    """s -> ShellNormSeries for every exponent present in the file."""
    path = Path(path)
    data = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise DataFormatError(f"{path}: header must be {','.join(SERIES_HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 4:
                    raise ValueError("expected 4 fields")
                t, q, s, v = float(row[0]), int(row[1]), parse_exponent(row[2]), float(row[3])
                if not (math.isfinite(t) and v >= 0):
                    raise ValueError("non-finite time or negative norm")
            except ValueError as exc:
                raise DataFormatError(f"{path}: malformed row at line {line}: {exc}") from None
            data.setdefault(s, {}).setdefault(t, {})[q] = v
    if not data:
        raise DataFormatError(f"{path}: no data rows")
    out = {}
    for s, by_time in data.items():
        shells = sorted(set().union(*(set(d) for d in by_time.values())))
        times = sorted(by_time)
        for t in times:
            missing = [q for q in shells if q not in by_time[t]]
            if missing:
                raise DataFormatError(f"{path}: time {t!r} (s={format_exponent(s)}) "
                                      f"lacks shells {missing}")
        norms = np.array([[by_time[t][q] for q in shells] for t in times])
        out[s] = ShellNormSeries(np.array(times), shells, norms, s, source=str(path))
    return out


def load_series(path, s: float | None = None) -> ShellNormSeries:
    table = load_series_table(path)
    if s is None:
        if len(table) != 1:
            raise DataFormatError(f"{path}: several exponents {sorted(table)}; choose one")
        return next(iter(table.values()))
    for key, ser in table.items():
        if math.isclose(key, s, rel_tol=1e-12) or key == s:
            return ser
    raise DataFormatError(f"{path}: no rows with s = {format_exponent(s)}")


def series_from_snapshots(directory, s_values) -> list:
    """One ShellNormSeries per exponent from every snapshot in ``directory``."""
    s_values = [float(s) for s in s_values]
    times, tables, shells = [], [], None
    for t, u in iter_snapshots(directory):
        cutoffs = build_cutoffs(u.grid)
        if shells is None:
            shells = list(cutoffs.shells)
        elif list(cutoffs.shells) != shells:
            raise DataFormatError(f"{directory}: snapshots on different grids")
        times.append(t)
        tables.append(shell_norm_table(u, s_values, cutoffs))
    stack = np.array(tables)   # (time, s, shell)
    return [ShellNormSeries(np.array(times), shells, stack[:, i, :], s, source=str(directory))
            for i, s in enumerate(s_values)]


# --- criterion and covering tables ---------------------------------------------

CRITERION_HEADER = ["t0", "p", "lambda_p", "integral", "flag"]


def save_criterion_report(report: CriterionReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CRITERION_HEADER)
        for row in report.rows:
            w.writerow([format_float(row.t0), row.p, format_float(row.lambda_p),
                        format_float(row.integral), int(row.flag)])


def load_criterion_report(path, tail: int = 3, params=None) -> CriterionReport:
    """Rebuild a report; t0 is bad when a flag is set at one of the ``tail`` largest scales."""
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CRITERION_HEADER:
            raise DataFormatError(f"{path}: header must be {','.join(CRITERION_HEADER)}, got {header}")
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                if len(rec) != 5 or rec[4] not in ("0", "1"):
                    raise ValueError("expected t0,p,lambda_p,integral,flag with flag 0/1")
                t0, p = float(rec[0]), int(rec[1])
                rows.append(CriterionRow(t0, p, float(rec[2]), (t0 - dyadic(p) ** -2, t0),
                                         float(rec[3]), rec[4] == "1"))
            except ValueError as exc:
                raise DataFormatError(f"{path}: malformed row at line {line}: {exc}") from None
    t0s = sorted({r.t0 for r in rows})
    scales = sorted({r.p for r in rows})
    top = set(scales[-tail:])
    index = {t: i for i, t in enumerate(t0s)}
    proxy = np.zeros(len(t0s))
    bad = np.zeros(len(t0s), dtype=bool)
    for r in rows:
        if r.p in top:
            i = index[r.t0]
            proxy[i] = max(proxy[i], r.integral)
            bad[i] |= r.flag
    report = CriterionReport(params, rows, np.array(t0s), proxy, bad)
    report.notes.append(f"bad set rebuilt from flags at the {len(top)} largest scales")
    return report


def save_premeasure(trend, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "floor", "count", "premeasure"])
        for i, d in enumerate(trend.d_grid):
            for j, p in enumerate(trend.floors):
                w.writerow([format_short(d), p, trend.counts[j], format_float(trend.sums[i, j])])


SHELL_INEQ_HEADER = ["t", "q", "s", "lhs_diff", "lhs_visc", "rhs_low", "rhs_high", "i1", "i2", "i3"]


def save_shell_inequality(report, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SHELL_INEQ_HEADER)
        for r in report.records:
            w.writerow([format_float(r.t), r.q, format_exponent(r.s)] +
                       [format_float(v) for v in (r.lhs_diff, r.lhs_visc, r.rhs_low, r.rhs_high,
                                                  r.i1, r.i2, r.i3)])


def save_key_values(pairs, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in pairs:
            if v is None:
                v = "nan"
            elif isinstance(v, float):
                v = format_short(v)
            w.writerow([k, v])


def load_key_values(path) -> dict:
    path = Path(path)
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["key", "value"]:
            raise DataFormatError(f"{path}: header must be key,value")
        for line, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise DataFormatError(f"{path}: malformed row at line {line}")
            out[row[0]] = row[1]
    return out


# --- manifests ------------------------------------------------------------------

@dataclass
class RunManifest:
    kind: str
    config: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)   # name -> sha256, paths relative to the manifest
    inputs: dict = field(default_factory=dict)      # path -> sha256
    status: str = "ok"
    version: str = __version__

    def add_artifact(self, root, path) -> None:
        rel = Path(path).relative_to(root).as_posix()
        self.artifacts[rel] = _hash(path)

    def add_input(self, path) -> None:
        # keyed by name, not location, so relocated runs give identical manifests
        path = Path(path)
        if path.is_dir():
            for p in sorted(path.glob("*")):
                if p.is_file():
                    self.inputs[f"{path.name}/{p.name}"] = _hash(p)
        else:
            self.inputs[path.name] = _hash(path)

    def save(self, path) -> None:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, verify: bool = True) -> "RunManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            man = cls(**data)
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataFormatError(f"{path}: not a run manifest ({exc})") from None
        if verify:
            root = path.parent
            for rel, digest in man.artifacts.items():
                target = root / rel
                if not target.is_file() or _hash(target) != digest:
                    raise DataFormatError(f"{path}: artifact {rel} missing or modified")
        return man


def manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + ".manifest.json")


def write_artifact_manifest(kind: str, artifact, config: dict, inputs=()) -> RunManifest:
    man = RunManifest(kind, config)
    for p in inputs:
        man.add_input(p)
    artifact = Path(artifact)
    man.add_artifact(artifact.parent, artifact)
    man.save(manifest_path(artifact))
    return man


# --- simulation runs ------------------------------------------------------------

def _write_ledger(ledger: EnergyLedger, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "energy", "dissipation"])
        for t, e, d in zip(ledger.times, ledger.energy, ledger.dissipation):
            w.writerow([format_float(t), format_float(e), format_float(d)])


def load_ledger(path) -> EnergyLedger:
    path = Path(path)
    ledger = EnergyLedger()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["time", "energy", "dissipation"]:
            raise DataFormatError(f"{path}: header must be time,energy,dissipation")
        for line, row in enumerate(reader, start=2):
            try:
                ledger.append(*(float(x) for x in row))
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}: malformed row at line {line}") from None
    return ledger


def run(config: SolverConfig, out_dir) -> RunManifest:
    """Integrate ``config``, writing snapshots, energy.csv, config.txt and manifest.json.

    On a numerical failure everything produced so far is flushed, the
    manifest records the failure and the error is re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("snap_*.nslp"):
        old.unlink()
    (out / "config.txt").write_text(config_text(config), encoding="utf-8")
    ledger = EnergyLedger()
    solver = Solver(config)
    man = RunManifest("simulate", {k: v for k, v in asdict(config).items()})
    written = []
    try:
        for index, (t, u) in enumerate(solver.iterate(initial_condition(config), ledger)):
            path = out / f"snap_{index:06d}.nslp"
            write_snapshot(path, u, t)
            written.append(path)
    except Exception as exc:
        man.status = f"aborted: {exc}"
        raise
    finally:
        _write_ledger(ledger, out / "energy.csv")
        for p in written + [out / "energy.csv", out / "config.txt"]:
            man.add_artifact(out, p)
        man.save(out / "manifest.json")
    return man
