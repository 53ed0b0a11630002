import csv
import json

import pytest

from nslab import storage
from nslab.cli import main

TG_CONFIG = """n = 32
nu = 1.0
dt = 1.25e-4
t_end = 0.025
ic.name = taylor_green
"""


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def tg_pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("tg")
    (d / "cfg.txt").write_text(TG_CONFIG)
    codes = [
        main(["simulate", "--config", str(d / "cfg.txt"), "--out", str(d / "run")]),
        main(["shells", "--in", str(d / "run"), "--s", "10/3", "--s", "2", "--out", str(d / "series.csv")]),
        main(["criterion", "--series", str(d / "series.csv"), "--pmin", "3", "--pmax", "5",
              "--out", str(d / "crit.csv")]),
        main(["cover", "--report", str(d / "crit.csv"), "--r", "10/3", "--s", "10/3", "--out", str(d / "pre.csv")]),
    ]
    return d, codes


def test_tg_pipeline_is_clean(tg_pipeline):
    d, codes = tg_pipeline
    assert codes == [0, 0, 0, 0]
    rep = storage.load_criterion_report(d / "crit.csv")
    assert rep.bad_times == [] and len(rep.t0_grid) > 0
    pre = rows(d / "pre.csv")
    assert pre[0] == ["d", "floor", "count", "premeasure"]
    assert all(float(r[3]) == 0.0 for r in pre[1:])
    man = json.loads((d / "pre.csv.manifest.json").read_text())
    assert man["config"]["predicted_exponent"] == pytest.approx(5 / 6)


def test_shells_table_shape(tg_pipeline):
    d, _ = tg_pipeline
    body = rows(d / "series.csv")[1:]
    nsnap = len(storage.snapshot_paths(d / "run"))
    nshell = len({r[1] for r in body})
    assert len(body) == nsnap * nshell * 2
    assert len({(r[0], r[1], r[2]) for r in body}) == len(body)
    assert {r[2] for r in body} == {"10/3", "2"}


def test_verify_and_report(tg_pipeline, capsys):
    d, _ = tg_pipeline
    assert main(["verify", "--check", "energy", "--trajectory", str(d / "run")]) == 0
    assert main(["verify", "--check", "shell-inequality", "--trajectory", str(d / "run"),
                 "--out", str(d / "ineq.csv")]) == 0
    assert main(["report", "--criterion", str(d / "crit.csv"), "--premeasure", str(d / "pre.csv"),
                 "--constants", str(d / "ineq.constants.csv"), "--out", str(d / "summary.csv")]) == 0
    kv = storage.load_key_values(d / "summary.csv")
    assert kv["bad_count"] == "0"
    assert float(kv["M"]) == pytest.approx(12.930218858, rel=1e-9)
    out = capsys.readouterr().out
    assert "PASS energy" in out and "PASS shell-inequality" in out


def test_verify_partition_of_unity(capsys):
    assert main(["verify", "--check", "partition-of-unity", "--n", "32", "--trials", "100"]) == 0
    assert capsys.readouterr().out.startswith("PASS partition-of-unity")


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["criterion"]) == 2
    assert main(["verify", "--check", "nonsense"]) == 2
    assert main(["verify", "--check", "energy"]) == 2
    series = tmp_path / "s.csv"
    series.write_text("time,q,s,norm\n0,0,10/3,1\n")
    assert main(["criterion", "--series", str(series), "--delta", "2", "--out", str(tmp_path / "c.csv")]) == 2
    assert main(["cover", "--report", str(series), "--d-grid", "1:0:0.1", "--out", str(tmp_path / "p.csv")]) != 0


def test_data_errors(tmp_path):
    assert main(["shells", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "s.csv")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("time,q,s,norm\n0,0,10/3,oops\n")
    assert main(["criterion", "--series", str(bad), "--out", str(tmp_path / "c.csv")]) == 3
    assert main(["simulate", "--config", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "r")]) == 3
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("n = 16\nwhatever = 1\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 3
    pre = tmp_path / "pre.csv"
    pre.write_text("d,floor,count,premeasure\n0.5,x,1,2\n")
    assert main(["report", "--premeasure", str(pre), "--out", str(tmp_path / "k.csv")]) == 3


def test_coverage_error_is_data_error(tmp_path):
    series = tmp_path / "s.csv"
    series.write_text("time,q,s,norm\n" + "".join(f"{t},{q},10/3,1\n" for t in (0, 0.001) for q in range(4)))
    assert main(["criterion", "--series", str(series), "--out", str(tmp_path / "c.csv")]) == 3


def test_numerical_failure(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("n = 16\ndt = 0.01\nt_end = 0.1\nic.name = random_divfree\nic.amplitude = 50\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 4
    man = storage.RunManifest.load(tmp_path / "run" / "manifest.json")
    assert man.status.startswith("aborted")
