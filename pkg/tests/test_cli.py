import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from multrigid.cli import main

MAPS = Path(__file__).resolve().parent.parent / "maps"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_q1(capsys):
    code, out, _ = run(capsys, "analyze", MAPS / "q1.json")
    rep = json.loads(out)
    assert code == 0
    assert rep["attractor_interval"] == [-1.0, 1.0]
    assert rep["membership"]["passed"] and rep["membership"]["schwarzian_negative"]


def test_analyze_attracting(capsys):
    code, out, _ = run(capsys, "analyze", MAPS / "q06.json")
    assert json.loads(out)["membership"]["attracting_cycle"]


def test_parse_error_names_field(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"t": 1.0, "alpha": 2, "phi": [{"kind": "bump", "c": 0.9}]}')
    code, _, err = run(capsys, "analyze", p)
    assert code != 0 and "phi[0]" in err


def test_json_syntax_error_has_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"t": 1.0,\n "alpha": }')
    code, _, err = run(capsys, "analyze", p)
    assert code != 0 and "line 2" in err


def test_orbits(capsys):
    code, out, _ = run(capsys, "orbits", MAPS / "q1.json", "--max-period", 2)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert [(r["word"], int(r["period"])) for r in rows] == [("L", 1), ("R", 1), ("RL", 2)]
    assert float(rows[0]["points"]) == -1.0 and float(rows[0]["multiplier"]) == pytest.approx(4)
    assert float(rows[1]["points"]) == pytest.approx(0.5) and float(rows[1]["multiplier"]) == pytest.approx(-2)
    assert len(rows[2]["points"].split(";")) == 2 and float(rows[2]["multiplier"]) == pytest.approx(-4)


def test_orbits_period_one_at_most_two_rows(capsys):
    for name in ("q1.json", "q097.json", "q06.json"):
        _, out, _ = run(capsys, "orbits", MAPS / name, "--max-period", 1)
        assert len(out.strip().splitlines()) - 1 <= 2


def test_orbits_empty(tmp_path, capsys):
    p = tmp_path / "low.json"
    p.write_text('{"t": 0.55, "alpha": 2, "phi": []}')
    code, out, _ = run(capsys, "orbits", p, "--max-period", 1)
    # only the attracting fixed point exists; rows may be few but the command succeeds
    assert code == 0 and out.startswith("word,period,points,multiplier")


def test_density_two_column(tmp_path, capsys):
    code, _, _ = run(capsys, "density", MAPS / "q1.json", "--grid", 256, "--out", tmp_path)
    text = (tmp_path / "density.dat").read_text()
    assert code == 0 and text.startswith("#")
    data = np.loadtxt(io.StringIO(text))
    assert data.shape == (256, 2)


def test_normalize_outputs(tmp_path, capsys):
    code, _, _ = run(capsys, "normalize", MAPS / "q1.json", "--grid", 512, "--out", tmp_path)
    assert code == 0
    assert {p.name for p in tmp_path.iterdir()} == {"normalize.json", "branches.csv", "H.dat", "F0.dat"}
    F0 = np.loadtxt(tmp_path / "F0.dat")
    y = F0[:, 0]
    keep = np.abs(y) > 0.05
    assert np.max(np.abs(F0[keep, 1] - (1 - 2 * np.abs(y[keep])))) <= 1e-6


def test_induce(capsys):
    code, out, _ = run(capsys, "induce", MAPS / "q1.json")
    rep = json.loads(out)
    assert code == 0 and rep["validation"]["valid"]


def test_rigidity_exit_codes_and_outputs(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_period": 6, "depth": 4, "grid_nodes": 1024}))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    code, _, _ = run(capsys, "rigidity", MAPS / "q1.json", MAPS / "q1_bump.json", "--config", cfg, "--out", out1)
    assert code == 0
    names = {p.name for p in out1.iterdir()}
    assert {"report.json", "multipliers.csv", "rho_f.dat", "H_f.dat", "F0.dat", "G0.dat", "conjugacy.dat"} <= names
    rep = json.loads((out1 / "report.json").read_text())
    assert rep["config"]["max_period"] == 6 and rep["report"]["stages"]["compare"]["sup"] <= 1e-3
    run(capsys, "rigidity", MAPS / "q1.json", MAPS / "q1_bump.json", "--config", cfg, "--out", out2)
    for p in out1.iterdir():
        assert p.read_bytes() == (out2 / p.name).read_bytes(), p.name


def test_rigidity_multipliers_differ(capsys):
    code, out, _ = run(capsys, "rigidity", MAPS / "q1.json", MAPS / "q097.json", "--max-period", 8)
    assert code == 2
    assert json.loads(out)["report"]["failed_stage"] == "multipliers"


def test_rigidity_incomplete(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_period": 4, "window_max_period": 1}))
    code, out, _ = run(capsys, "rigidity", MAPS / "q1.json", MAPS / "q1.json", "--config", cfg)
    assert code == 3 and json.loads(out)["report"]["failed_stage"] == "windows"


def test_config_unknown_field(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"grid": 10}))
    code, _, err = run(capsys, "rigidity", MAPS / "q1.json", MAPS / "q1.json", "--config", cfg)
    assert code != 0 and "'grid'" in err
