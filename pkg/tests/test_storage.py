import math
import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nslab import storage
from nslab.criterion import CriterionParams, ShellNormSeries, detect_bad_points
from nslab.solver import CFLError, SolverConfig, initial_condition
from nslab.spectral import Grid, random_field
from nslab.storage import DataFormatError


def test_snapshot_round_trip_and_layout(tmp_path, rng):
    grid = Grid(16, nu=0.3)
    u = random_field(grid, rng)
    path = tmp_path / "a.nslp"
    storage.write_snapshot(path, u, 0.125)
    raw = path.read_bytes()
    assert raw[:5] == b"NSLP1"
    assert raw[5] == 1
    assert struct.unpack_from("<I", raw, 6)[0] == 16
    assert struct.unpack_from("<dd", raw, 10) == (0.125, 0.3)
    assert len(raw) == 26 + 3 * 16 ** 3 * 16
    # first component, k = (0, 0, 1) sits at flat index 1 in row-major order
    re, im = struct.unpack_from("<dd", raw, 26 + 16)
    assert complex(re, im) == u.coeff((0, 0, 1))[0]
    v, t = storage.read_snapshot(path)
    assert t == 0.125 and v.grid == grid
    assert np.array_equal(v.coeffs, u.coeffs)


def test_snapshot_rejects_corruption(tmp_path, rng):
    u = random_field(Grid(16), rng)
    path = tmp_path / "a.nslp"
    storage.write_snapshot(path, u, 0.0)
    raw = path.read_bytes()
    (tmp_path / "magic.nslp").write_bytes(b"XXXXX" + raw[5:])
    (tmp_path / "short.nslp").write_bytes(raw[:-16])
    (tmp_path / "tiny.nslp").write_bytes(raw[:10])
    for name in ("magic", "short", "tiny"):
        with pytest.raises(DataFormatError):
            storage.read_snapshot(tmp_path / f"{name}.nslp")


CONFIG = """
# comment
n = 16
nu = 0.5
dt = 1e-3
t_end = 0.01
mode = stokes
dealias = off
snapshot_stride = 2
ic.name = random_divfree
ic.seed = 7
ic.slope = -1.5
ic.kc = 2.5
ic.amplitude = 2
forcing.name = none
"""


def test_config_parse():
    cfg = storage.parse_config(CONFIG)
    assert cfg == SolverConfig(n=16, nu=0.5, dt=1e-3, t_end=0.01, mode="stokes", dealias=False,
                               snapshot_stride=2, ic_name="random_divfree", ic_seed=7,
                               ic_slope=-1.5, ic_kc=2.5, ic_amplitude=2.0)
    assert storage.parse_config(storage.config_text(cfg)) == cfg


def test_config_inline_comments():
    cfg = storage.parse_config("n = 16   # grid\nmode = stokes # linear\n")
    assert cfg.n == 16 and cfg.mode == "stokes"


@pytest.mark.parametrize("text", ["n = 16\ncolour = red\n", "n = sixteen\n", "n = 17\n",
                                  "dealias = maybe\n", "mode = euler\n", "n\n"])
def test_config_errors(text):
    with pytest.raises(DataFormatError):
        storage.parse_config(text)


def test_exponent_text():
    assert storage.format_exponent(10 / 3) == "10/3"
    assert storage.format_exponent(2.0) == "2"
    assert storage.format_exponent(math.inf) == "inf"
    assert storage.parse_exponent("10/3") == float(Fraction(10, 3)) == 10 / 3
    assert storage.format_exponent(math.pi) == format(math.pi, ".17g")
    with pytest.raises(ValueError):
        storage.parse_exponent("1/0")


@given(st.floats(1, 100, allow_nan=False))
def test_exponent_round_trip(s):
    assert storage.parse_exponent(storage.format_exponent(s)) == s


def make_series(rng, s=10 / 3):
    times = np.cumsum(rng.uniform(0.01, 0.1, 12))
    shells = list(range(-1, 5))
    return ShellNormSeries(times, shells, rng.uniform(0, 3, (12, 6)) ** 3, s, source="x")


def test_series_round_trip(tmp_path, rng):
    a, b = make_series(rng), make_series(rng, 2.0)
    b.times = a.times
    path = tmp_path / "series.csv"
    storage.save_series([a, b], path)
    table = storage.load_series_table(path)
    assert set(table) == {10 / 3, 2.0}
    for ser in (a, b):
        got = table[ser.s]
        assert np.array_equal(got.times, ser.times)
        assert np.array_equal(got.norms, ser.norms)
        assert got.shells == ser.shells
    assert "10/3" in path.read_text().splitlines()[1]
    assert np.array_equal(storage.load_series(path, 10 / 3).norms, a.norms)
    with pytest.raises(DataFormatError, match="several"):
        storage.load_series(path)


def test_series_errors(tmp_path):
    good = "time,q,s,norm\n0,0,2,1\n0,1,2,1\n"
    cases = {
        "header": ("t,q,s,norm\n0,0,2,1\n", "header"),
        "line": (good + "0.5,zero,2,1\n", "line 4"),
        "negative": (good + "0.5,0,2,-1\n", "line 4"),
        "missing": (good + "0.5,0,2,1\n", "0.5"),
        "empty": ("time,q,s,norm\n", "no data"),
    }
    for name, (text, match) in cases.items():
        path = tmp_path / f"{name}.csv"
        path.write_text(text)
        with pytest.raises(DataFormatError, match=match):
            storage.load_series_table(path)


def test_criterion_report_round_trip(tmp_path, rng):
    ser = make_series(rng)
    ser = ShellNormSeries(np.linspace(0, 1, 2049), ser.shells, rng.uniform(0, 1, (2049, 6)), ser.s)
    params = CriterionParams(10 / 3, 10 / 3, p_range=(1, 3), tail=2)
    rep = detect_bad_points(ser, params, np.linspace(0.5, 1, 17))
    path = tmp_path / "crit.csv"
    storage.save_criterion_report(rep, path)
    back = storage.load_criterion_report(path, tail=2)
    assert [(r.t0, r.p, r.integral, r.flag) for r in back.rows] == \
           [(r.t0, r.p, r.integral, r.flag) for r in rep.rows]
    assert back.bad_times == rep.bad_times


def test_manifest_detects_tampering(tmp_path):
    art = tmp_path / "out.csv"
    art.write_text("a\n")
    inp = tmp_path / "in.csv"
    inp.write_text("b\n")
    storage.write_artifact_manifest("demo", art, {"x": 1}, [inp])
    man = storage.RunManifest.load(storage.manifest_path(art))
    assert man.kind == "demo" and "in.csv" in man.inputs
    art.write_text("changed\n")
    with pytest.raises(DataFormatError, match="modified"):
        storage.RunManifest.load(storage.manifest_path(art))


def test_run_zero_duration(tmp_path):
    cfg = SolverConfig(n=16, t_end=0.0, ic_name="random_divfree")
    man = storage.run(cfg, tmp_path)
    snaps = storage.snapshot_paths(tmp_path)
    assert len(snaps) == 1
    u, t = storage.read_snapshot(snaps[0])
    assert t == 0.0
    u0 = initial_condition(cfg)
    assert np.abs(u.coeffs - u0.coeffs).max() < 1e-15 * np.abs(u0.coeffs).max()
    assert man.status == "ok"
    storage.RunManifest.load(tmp_path / "manifest.json")
    assert len(storage.load_ledger(tmp_path / "energy.csv").times) == 1


def test_run_flushes_partial_output(tmp_path):
    cfg = SolverConfig(n=16, dt=1e-2, t_end=0.1, ic_name="random_divfree", ic_amplitude=50.0)
    with pytest.raises(CFLError):
        storage.run(cfg, tmp_path)
    man = storage.RunManifest.load(tmp_path / "manifest.json")
    assert man.status.startswith("aborted")
    assert len(storage.snapshot_paths(tmp_path)) >= 1
