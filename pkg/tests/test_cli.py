import csv
import io
import json

import pytest

from highway_ips.cli import main, run, suggest, validate

SMALL = """\
scenario = single-point
channel.r = 25
traffic.lambda = 0.05
traffic.v = 30
replicates = 2
jobs = 1
sim.road_length = 20000
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def call(fn, *args, **kw):
    out, err = io.StringIO(), io.StringIO()
    code = fn(*args, out=out, err=err, **kw)
    return code, out.getvalue(), err.getvalue()


def test_validate_ok(tmp_path):
    assert call(validate, write(tmp_path, SMALL)) == (0, "ok\n", "")


def test_validate_suggests_lambda(tmp_path):
    code, out, _ = call(validate, write(tmp_path, "scenario = density-sweep\ntraffic.lamda = 0.05\n"))
    assert code == 2 and "'traffic.lambda'" in out
    assert suggest("lamda") == "traffic.lambda"
    assert suggest("wholly.unrelated") is None


def test_validate_reports_every_problem(tmp_path):
    code, out, _ = call(validate, write(tmp_path, "traffic.lambda = -1\nchannel.P_out = 2\n"))
    assert code == 2
    assert "traffic.lambda" in out and "out of range" in out
    assert "channel.P_out" in out and "missing required key 'scenario'" in out


def test_validate_unreadable_file(tmp_path):
    assert call(validate, tmp_path / "absent.cfg")[0] == 2
    bad = tmp_path / "bin.cfg"
    bad.write_bytes(b"\xff\xfe\x00")
    assert call(validate, bad)[0] == 2


def test_run_rejects_malformed_config(tmp_path):
    code, _, err = call(run, write(tmp_path, "scenario = single-point\nchannel.K = zero\n"),
                        output=str(tmp_path / "o"))
    assert code == 2 and "channel.K" in err
    assert not (tmp_path / "o").exists()
    code, _, err = call(run, write(tmp_path, SMALL), replicates=0, output=str(tmp_path / "o"))
    assert code == 2 and "replicates" in err


def test_single_point_run(tmp_path):
    code, _, _ = call(run, write(tmp_path, SMALL), output=str(tmp_path / "o"))
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "o" / "single-point.csv").open()))
    assert len(rows) == 1
    row = rows[0]
    assert float(row["sim_vp_coop"]) > float(row["sim_vp_noncoop"]) > 0
    assert float(row["analytic_vp_coop"]) > float(row["analytic_vp_noncoop"]) > 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["partial"] is False and summary["config"]["replicates"] == 2
    resolved = (tmp_path / "o" / "resolved_config.txt").read_text()
    assert "channel.K = 10.0" in resolved and "protocol.tau = 0.01" in resolved


def test_outputs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL.replace("single-point", "density-sweep")
                .replace("traffic.lambda = 0.05", "traffic.lambda = 0.05, 0.1"))
    assert call(run, cfg, output=str(tmp_path / "a"))[0] == 0
    assert call(run, cfg, output=str(tmp_path / "b"), jobs=2)[0] == 0
    for name in ("density-sweep.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader((tmp_path / "a" / "density-sweep.csv").open()))
    assert [r["lambda"] for r in rows] == ["0.05", "0.1"]
    assert rows[0]["config_hash"] != rows[1]["config_hash"]


def test_censored_run_is_flagged_partial(tmp_path):
    code, _, err = call(run, write(tmp_path, SMALL + "sim.time_cap = 0.001\n"),
                        output=str(tmp_path / "o"))
    assert code == 3 and "censored" in err
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["partial"] is True and summary["errors"]
    assert (tmp_path / "o" / "single-point.csv").exists()


def test_gain_curve_and_channel_mc(tmp_path):
    cfg = write(tmp_path, "scenario = gain-curve\ngain.n_receivers = 1, 2, 8\njobs = 1\n")
    assert call(run, cfg, output=str(tmp_path / "g"))[0] == 0
    rows = list(csv.DictReader((tmp_path / "g" / "gain-curve.csv").open()))
    gains = [float(r["gain"]) for r in rows]
    assert gains == sorted(gains) and gains[0] > 1
    cfg = write(tmp_path, "scenario = channel-mc\nmc.n_receivers = 1, 4\njobs = 1\n")
    assert call(run, cfg, output=str(tmp_path / "m"))[0] == 0
    rows = list(csv.DictReader((tmp_path / "m" / "channel-mc.csv").open()))
    assert len(rows) == 4
    for r in rows:
        assert abs(float(r["mc_outage"]) - float(r["analytic_outage"])) < 0.01


def test_main_entry_point(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path, SMALL))]) == 0
    assert capsys.readouterr().out == "ok\n"
    with pytest.raises(SystemExit):
        main(["frobnicate"])
