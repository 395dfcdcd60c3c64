import csv
import json

import pytest

from dapplan import __version__
from dapplan.cli import main

SCEN = "id,kind,x,y,height,indoor\n"


def write_scenario(path, rows):
    path.write_text(SCEN + "".join(r + "\n" for r in rows))
    return str(path)


def run(argv, capsys=None):
    code = main(argv)
    return code


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# dapplan {__version__} seed=")
    return list(csv.reader(lines[1:]))


def test_generate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["generate", "--profile", "rural", "--sms", "47", "--poles", "43", "--seed", "1", "--out", str(out)]) == 0
    assert (a / "scenario.csv").read_bytes() == (b / "scenario.csv").read_bytes()
    assert (a / "config").read_bytes() == (b / "config").read_bytes()
    rows = read_csv(a / "scenario.csv")
    assert sum(r[1] == "sm" for r in rows[1:]) == 47


def test_missing_required_argument_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--poles", "3", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_bad_input_is_usage_error(tmp_path):
    f = write_scenario(tmp_path / "s.csv", ["1,sm,0,0,2,false", "1,pole,5,5,10,false"])
    assert main(["plan", "--scenario", f, "--out", str(tmp_path)]) == 2


def test_single_meter_plan(tmp_path, capsys):
    f = write_scenario(tmp_path / "s.csv", ["1,sm,0,0,2,false", "2,pole,40,0,10,false"])
    assert main(["plan", "--scenario", f, "--out", str(tmp_path), "--seed", "3", "--diagnostics"]) == 0
    out = capsys.readouterr().out
    assert "DAPs: 1" in out and "max hops: 1" in out
    text = (tmp_path / "solution.json").read_text()
    first = text.splitlines()[0]
    assert first.startswith('{"header": ') and '"seed": 3' in first
    data = json.loads(text)
    assert data["daps"] == [2] and data["meters"][0]["parent_is_dap"]
    for name in ("hops_cdf.csv", "connections_cdf.csv", "queue_delay_cdf.csv", "diagnostics.csv"):
        assert len(read_csv(tmp_path / name)) >= 2
    geo = json.loads((tmp_path / "solution.geojson").read_text())
    assert geo["dapplan"]["seed"] == 3


def test_chain_cdf_well_formed(tmp_path):
    rows = [f"{i},sm,{150 * (i + 1)},0,2,false" for i in range(6)] + ["99,pole,0,0,10,false"]
    f = write_scenario(tmp_path / "s.csv", rows)
    assert main(["plan", "--scenario", f, "--out", str(tmp_path)]) == 0
    for name in ("hops_cdf.csv", "connections_cdf.csv", "queue_delay_cdf.csv"):
        table = read_csv(tmp_path / name)[1:]
        xs = [float(r[0]) for r in table]
        assert xs == sorted(xs) and len(set(xs)) == len(xs)
        for col in range(1, len(table[0])):
            ys = [float(r[col]) for r in table]
            assert ys == sorted(ys) and 0 <= ys[0] and ys[-1] == 1.0
    hops = read_csv(tmp_path / "hops_cdf.csv")[1:]
    assert [int(r[0]) for r in hops] == [1, 2, 3, 4, 5, 6]


def test_unconnected_meter_exit_code(tmp_path):
    f = write_scenario(tmp_path / "s.csv", ["1,sm,0,0,2,false", "2,sm,9000,9000,2,false", "3,pole,40,0,10,false"])
    assert main(["plan", "--scenario", f, "--out", str(tmp_path)]) == 3
    assert json.loads((tmp_path / "solution.json").read_text())["unconnected"] == [2]


def test_radio_budget_exit_code(tmp_path):
    f = write_scenario(tmp_path / "s.csv", ["1,sm,0,0,2,false", "2,pole,40,0,10,false"])
    cfg = tmp_path / "cfg"
    cfg.write_text("radio.tx_power_dbm = -80\n")
    assert main(["plan", "--scenario", f, "--config", str(cfg), "--out", str(tmp_path)]) == 4


def test_validate_and_corruption_hook(tmp_path):
    rows = [f"{i},sm,{60 * (i % 3)},{60 * (i // 3)},2,false" for i in range(6)] + ["99,pole,60,30,10,false"]
    f = write_scenario(tmp_path / "s.csv", rows)
    assert main(["plan", "--scenario", f, "--out", str(tmp_path)]) == 0
    sol = str(tmp_path / "solution.json")
    common = ["--scenario", f, "--solution", sol, "--duration", "259200", "--min-samples", "20", "--seed", "2"]
    assert main(["validate", *common, "--out", str(tmp_path / "v")]) == 0
    assert main(["validate", *common, "--out", str(tmp_path / "c"), "--corrupt", "0.5"]) == 5
    table = read_csv(tmp_path / "v" / "validation.csv")
    assert len(table) - 1 == 6 * 6


def test_validate_zero_traffic(tmp_path):
    f = write_scenario(tmp_path / "s.csv", ["1,sm,0,0,2,false", "2,pole,40,0,10,false"])
    cfg = tmp_path / "cfg"
    cfg.write_text("traffic.classes = X\ntraffic.x.category = NC\ntraffic.x.packet_size = 50\n"
                   "traffic.x.interval_s = 1e12\ntraffic.x.latency_s = 5\n")
    assert main(["plan", "--scenario", f, "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert main(["validate", "--scenario", f, "--config", str(cfg), "--solution", str(tmp_path / "solution.json"),
                 "--duration", "10", "--out", str(tmp_path)]) == 0
    assert "max gap: 0.0000" in (tmp_path / "validation_summary.txt").read_text()


def test_exact_single_and_refusal(tmp_path, capsys):
    f = write_scenario(tmp_path / "s.csv", ["1,sm,0,0,2,false", "2,pole,40,0,10,false"])
    assert main(["exact", "--scenario", f, "--out", str(tmp_path)]) == 0
    table = read_csv(tmp_path / "exact.csv")
    assert float(table[1][5]) == 1.0
    big = [f"{i},pole,{i},0,10,false" for i in range(1, 30)] + ["100,sm,0,0,2,false"]
    g = write_scenario(tmp_path / "big.csv", big)
    assert main(["exact", "--scenario", g, "--out", str(tmp_path)]) == 6
    assert "refused" in capsys.readouterr().err


def test_exact_sweep(tmp_path):
    assert main(["exact", "--sweep", "3", "--sms", "20", "--poles", "8", "--out", str(tmp_path)]) == 0
    table = read_csv(tmp_path / "exact.csv")
    for r in table[1:]:
        assert r[7] == "optimal" and 1.0 <= float(r[5]) <= max(1.0, float(r[6]))


def test_plan_outputs_are_byte_identical(tmp_path):
    for out in ("a", "b"):
        assert main(["generate", "--sms", "120", "--poles", "15", "--seed", "4", "--out", str(tmp_path / "g")]) == 0
        main(["plan", "--scenario", str(tmp_path / "g" / "scenario.csv"), "--config", str(tmp_path / "g" / "config"),
              "--seed", "4", "--diagnostics", "--out", str(tmp_path / out)])
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_report_rebuilds_from_solution(tmp_path):
    rows = [f"{i},sm,{150 * (i + 1)},0,2,false" for i in range(4)] + ["99,pole,0,0,10,false"]
    f = write_scenario(tmp_path / "s.csv", rows)
    assert main(["plan", "--scenario", f, "--out", str(tmp_path / "p")]) == 0
    assert main(["report", "--scenario", f, "--solution", str(tmp_path / "p" / "solution.json"),
                 "--out", str(tmp_path / "r")]) == 0
    for name in ("hops_cdf.csv", "connections_cdf.csv", "queue_delay_cdf.csv"):
        assert (tmp_path / "p" / name).read_bytes() == (tmp_path / "r" / name).read_bytes()
