import csv
import io
import json
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cranmux import dump_config, load_config, table_one
from cranmux.cli import main
from cranmux.latency import queuing_percentiles

ROOT = Path(__file__).resolve().parents[1]
TABLE1 = str(ROOT / "configs" / "table1.conf")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_reports_percentile(capsys):
    code, out, _ = run(capsys, "analyze", "--config", TABLE1, "--servers", "20")
    assert code == 0
    assert "stable=true" in out
    m = re.search(r"^p99\(t2\)=(\S+)$", out, re.M)
    assert m is not None
    expected = queuing_percentiles(table_one(10), 20, [0.99]).max()
    assert float(m.group(1)) == pytest.approx(expected, rel=1e-5)


def test_analyze_table_one_reference_string(capsys):
    _, out, _ = run(capsys, "analyze", "--config", TABLE1, "--servers", "20")
    assert "p99(t2)=0.8717" in out


def test_analyze_zero_load_percentiles_zero(capsys):
    code, out, _ = run(capsys, "analyze", "--config", TABLE1, "--set", "lambda=0,0",
                       "--servers", "4", "--zeta", "0.99", "--zeta", "0.999")
    assert code == 0
    vals = re.findall(r"p99(?:_9)?\(t2\)=(\S+)", out)
    assert vals and all(float(v) == 0.0 for v in vals)


def test_analyze_unstable_is_reported_not_fatal(capsys):
    # lambda = 10 per frame and muF = 2, so a pool of 10 sits on the boundary
    code, out, _ = run(capsys, "analyze", "--config", TABLE1, "--servers", "10")
    assert code == 0
    assert "stable=false" in out and "unstable" in out


def test_analyze_min_servers_and_infeasible(capsys):
    code, out, _ = run(capsys, "analyze", "--config", TABLE1, "--tau", "10")
    assert code == 0 and "min_servers(tau=10,zeta=0.99)=" in out
    code, _, err = run(capsys, "analyze", "--config", TABLE1, "--set", "lambda=25,25",
                       "--tau", "1")
    assert code == 3 and "infeasible" in err


def test_analyze_exports(capsys, tmp_path):
    cdf, mat, pi = tmp_path / "cdf.csv", tmp_path / "P.csv", tmp_path / "pi.csv"
    code, _, _ = run(capsys, "analyze", "--config", TABLE1, "--servers", "20",
                     "--cdf-out", str(cdf), "--cdf-points", "11", "--cdf-max", "20",
                     "--matrix-out", str(mat), "--pi-out", str(pi))
    assert code == 0
    rows = list(csv.reader(open(cdf)))
    assert rows[0] == ["t", "t2"] and len(rows) == 12
    vals = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.diff(vals) >= 0) and 0 <= vals[0] <= vals[-1] <= 1
    P = np.loadtxt(mat, delimiter=",", skiprows=1)
    assert np.allclose(P[:, -P.shape[0]:].sum(axis=1), 1.0, atol=1e-9) or \
        np.allclose(P[:, 1:].sum(axis=1), 1.0, atol=1e-9)
    assert pi.stat().st_size > 0


def test_unknown_key_names_key(capsys, tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("num_rrh = 2\nbogus_key = 3\n")
    code, _, err = run(capsys, "analyze", "--config", str(bad))
    assert code == 1
    assert "bogus_key" in err and ":2:" in err


def test_usage_error_exits_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["analyze"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate", "--config", TABLE1])
    assert info.value.code == 1


def test_bad_range_is_config_error(capsys):
    code, _, err = run(capsys, "sweep-servers", "--config", TABLE1, "--range", "9:x")
    assert code == 1 and "config error" in err


def test_sweep_servers_schema_and_determinism(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sweep-servers", "--config", TABLE1, "--range", "10:16",
            "--lambda-per-rrh", "5", "--lambda-per-rrh", "10"]
    assert run(capsys, *args, "--out", str(a))[0] == 0
    assert run(capsys, *args, "--out", str(b), "--jobs", "2")[0] == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(open(a)))
    assert list(rows[0]) == ["servers", "lambda", "zeta", "percentile_t2"]
    assert len(rows) == 14          # the range stop is inclusive
    # the unstable point (lambda=10, c=10) is left blank and the sweep goes on
    by = {(int(r["servers"]), float(r["lambda"])): r["percentile_t2"] for r in rows}
    assert by[(10, 10.0)] == ""
    assert float(by[(12, 10.0)]) == pytest.approx(
        queuing_percentiles(table_one(10), 12, [0.99]).max(), rel=1e-5)


def test_sweep_servers_json(capsys):
    code, out, _ = run(capsys, "sweep-servers", "--config", TABLE1, "--range", "20:22",
                       "--format", "json")
    assert code == 0
    rows = json.loads(out)
    assert [r["servers"] for r in rows] == [20, 21, 22]


def test_sweep_savings_rows(capsys):
    code, out, _ = run(capsys, "sweep-savings", "--config", TABLE1, "--rho", "0.2,0.4",
                       "--tau", "1", "--tau", "10", "--zeta", "0.99",
                       "--frame", "10", "--frame", "5")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == ["rho_bbu", "policy", "tau", "zeta", "frame", "servers",
                             "savings", "upper_bound"]
    st = [r for r in rows if r["policy"] == "short_term"]
    assert len(st) == 4
    for r in st:
        assert float(r["savings"]) <= float(r["upper_bound"]) + 1e-9
    for rho in ("0.2", "0.4"):
        lt = {r["tau"]: r["savings"] for r in rows
              if r["policy"] == "long_term" and r["rho_bbu"] == rho}
        if lt["1.0"] != "":
            assert float(lt["10.0"]) >= float(lt["1.0"])
        f = {r["frame"]: float(r["savings"]) for r in st if r["rho_bbu"] == rho}
        assert f["5.0"] > f["10.0"]


def test_sweep_savings_rho_point_two_tau_one(capsys):
    _, out, _ = run(capsys, "sweep-savings", "--config", TABLE1, "--rho", "0.2",
                    "--tau", "1", "--zeta", "0.99")
    row = next(r for r in csv.DictReader(io.StringIO(out)) if r["policy"] == "long_term")
    assert float(row["savings"]) == pytest.approx(0.60)


def test_sweep_savings_with_simulation(capsys):
    code, out, _ = run(capsys, "sweep-savings", "--config", TABLE1, "--rho", "0.2",
                       "--tau", "10", "--zeta", "0.99", "--simulate", "--frames", "20000")
    assert code == 0
    pol = [r["policy"] for r in csv.DictReader(io.StringIO(out))]
    assert pol == ["long_term", "long_term_sim", "short_term", "short_term_sim"]


def test_simulate_same_seed_identical_json(capsys, tmp_path):
    args = ["simulate", "--config", TABLE1, "--servers", "20", "--frames", "5000",
            "--seed", "1"]
    c1, o1, _ = run(capsys, *args)
    c2, o2, _ = run(capsys, *args)
    assert c1 == c2 == 0 and o1 == o2
    doc = json.loads(o1)
    assert doc["result"]["transfers_blocked"] == 0
    assert "p99_t2" in doc["result"]
    samples = tmp_path / "s.csv"
    run(capsys, *args, "--policy", "st", "--samples-out", str(samples))
    assert samples.read_text().splitlines()[0] == "transfer_id,rrh,t1,t2,t3"


def test_simulate_zero_load(capsys):
    code, out, _ = run(capsys, "simulate", "--config", TABLE1, "--set", "lambda=0,0",
                       "--policy", "st", "--frames", "1000")
    assert code == 0
    assert json.loads(out)["result"]["transfers_completed"] == 0


def test_config_round_trip(capsys, tmp_path):
    cfg = load_config(TABLE1)
    dumped = tmp_path / "round.conf"
    dumped.write_text(dump_config(cfg))
    assert load_config(dumped) == cfg
    _, a, _ = run(capsys, "analyze", "--config", TABLE1, "--servers", "14")
    _, b, _ = run(capsys, "analyze", "--config", str(dumped), "--servers", "14")
    assert a == b


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "cranmux.cli", "analyze", "--config", TABLE1,
                          "--servers", "30"], capture_output=True, text=True, check=True)
    assert out.stdout.startswith("servers=30 rho_bbu=")


@pytest.mark.slow
def test_simulate_reference_percentile(capsys):
    _, out, _ = run(capsys, "simulate", "--config", TABLE1, "--servers", "20",
                    "--frames", "1000000", "--seed", "1", "--zeta", "0.99")
    p99 = json.loads(out)["result"]["p99_t2"]
    assert abs(p99 - 0.8717) <= 0.05 * 0.8717
