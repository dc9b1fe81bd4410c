import csv
import json

import pytest

from ventopt.cli import main
from ventopt.samples import mini_fixture


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _effective(err):
    line = next(ln for ln in err.splitlines() if ln.startswith("effective config: "))
    return json.loads(line[len("effective config: "):])


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def mini_files(tmp_path):
    g, cat, _ = mini_fixture()
    g.dump(tmp_path / "net.json")
    cat.dump(tmp_path / "cat.json")
    return tmp_path


def test_optimize_airflow_writes_outputs(capsys, tmp_path):
    code, out, err = _run(capsys, "optimize", "--fixture", "mini", "--mode", "airflow", "--out", str(tmp_path))
    assert code == 0
    for f in ("solution.json", "costs.csv", "rooms.csv", "assignment.json"):
        assert (tmp_path / f).is_file()
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["status"] == "optimal" and sol["mode"] == "airflow"
    assert _csv(tmp_path / "costs.csv")[-1][0] == "total"
    assert "status optimal" in out


def test_optimize_from_files(capsys, mini_files):
    code, _, _ = _run(capsys, "optimize", "--network", str(mini_files / "net.json"),
                      "--catalog", str(mini_files / "cat.json"), "--noise-limit", "55",
                      "--out", str(mini_files / "o"))
    assert code == 0
    rooms = _csv(mini_files / "o" / "rooms.csv")
    assert rooms[0] == ["room", "s1", "s2"]
    assert max(float(x) for x in rooms[1][1:]) <= 55.0 + 1e-6


def test_infeasible_limit_exits_2(capsys, tmp_path):
    code, out, _ = _run(capsys, "optimize", "--fixture", "mini", "--noise-limit", "20", "--out", str(tmp_path))
    assert code == 2
    assert "certificate" in out
    assert not (tmp_path / "assignment.json").exists()


def test_budget_exits_3(capsys, tmp_path):
    code, _, _ = _run(capsys, "optimize", "--fixture", "case_study", "--time-budget", "1e-6",
                      "--out", str(tmp_path))
    assert code == 3
    assert json.loads((tmp_path / "solution.json").read_text())["status"] == "budget"


@pytest.mark.parametrize("argv", [
    ["optimize", "--network", "/nonexistent.json", "--catalog", "/nonexistent.json"],
    ["optimize", "--fixture", "nope"],
    ["optimize", "--fixture", "mini", "--tol", "0.5"],
    ["optimize", "--fixture", "mini", "--noise-limit", "-3"],
    ["optimize", "--fixture", "mini", "--threads", "0"],
    ["optimize", "--fixture", "mini", "--mode", "loud"],
    ["optimize", "--fixture", "mini", "--noise-limit", "abc"],
    ["frobnicate"],
    ["optimize"],
    ["pareto", "--fixture", "mini"],
    ["pareto", "--fixture", "mini", "--limits", "50,x"],
])
def test_input_errors_exit_1(capsys, tmp_path, argv):
    code, _, _ = _run(capsys, *argv, "--out", str(tmp_path))
    assert code == 1


def test_bad_json_network_exits_1(capsys, tmp_path):
    (tmp_path / "n.json").write_text("{\n \"nodes\": [\n")
    g, cat, _ = mini_fixture()
    cat.dump(tmp_path / "c.json")
    code, _, err = _run(capsys, "optimize", "--network", str(tmp_path / "n.json"), "--catalog",
                        str(tmp_path / "c.json"), "--out", str(tmp_path))
    assert code == 1
    assert "line" in err


def test_config_precedence(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("VENTOPT_THREADS", raising=False)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fixture": "mini", "noise_limit": 58.0, "tol": 0.01, "seed": 4}))
    code, _, err = _run(capsys, "optimize", "--config", str(cfg), "--noise-limit", "55",
                        "--out", str(tmp_path / "o"))
    assert code == 0
    eff = _effective(err)
    assert eff["noise_limit"] == 55.0          # flag beats file
    assert eff["tol"] == 0.01 and eff["seed"] == 4   # file beats default
    assert eff["threads"] == 1 and eff["mode"] == "coupled"   # defaults
    meta = json.loads((tmp_path / "o" / "solution.json").read_text())["metadata"]
    assert meta["seed"] == 4


def test_config_unknown_key_exits_1(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fixture": "mini", "loudness": 3}))
    code, _, err = _run(capsys, "optimize", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 1 and "loudness" in err


def test_config_paths_resolve_against_config_dir(capsys, mini_files, monkeypatch):
    (mini_files / "cfg.json").write_text(json.dumps({"network": "net.json", "catalog": "cat.json",
                                                     "mode": "airflow"}))
    monkeypatch.chdir("/")
    code, _, _ = _run(capsys, "optimize", "--config", str(mini_files / "cfg.json"),
                      "--out", str(mini_files / "o"))
    assert code == 0


def test_threads_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("VENTOPT_THREADS", "3")
    code, _, err = _run(capsys, "optimize", "--fixture", "chain", "--mode", "airflow", "--out", str(tmp_path))
    assert code == 0 and _effective(err)["threads"] == 3
    code, _, err = _run(capsys, "optimize", "--fixture", "chain", "--mode", "airflow", "--threads", "2",
                        "--out", str(tmp_path))
    assert _effective(err)["threads"] == 2
    monkeypatch.setenv("VENTOPT_THREADS", "many")
    assert _run(capsys, "optimize", "--fixture", "chain", "--out", str(tmp_path))[0] == 1


def test_pareto_overlay_only_with_flag(capsys, tmp_path):
    code, _, _ = _run(capsys, "pareto", "--fixture", "mini", "--limits", "62,58,54,50", "--out", str(tmp_path / "a"))
    assert code == 0
    head = _csv(tmp_path / "a" / "pareto.csv")[0]
    assert not any(h.startswith("seq_") for h in head)
    code, _, _ = _run(capsys, "pareto", "--fixture", "mini", "--limits", "62,58,54,50", "--compare-sequential",
                      "--out", str(tmp_path / "b"))
    assert code == 0
    rows = _csv(tmp_path / "b" / "pareto.csv")
    assert rows[0][-3:] == ["seq_invest_eur", "seq_energy_eur", "seq_total_eur"]
    assert len(rows) - 1 == len(json.loads((tmp_path / "b" / "pareto.json").read_text())["points"])
    for r in rows[1:]:
        if r[-1]:
            assert float(r[3]) <= float(r[-1]) * (1 + 1e-9)


def test_pareto_records_first_infeasible_limit(capsys, tmp_path):
    code, _, _ = _run(capsys, "pareto", "--fixture", "mini", "--limits", "55,20", "--out", str(tmp_path))
    assert code == 0
    d = json.loads((tmp_path / "pareto.json").read_text())
    assert d["infeasible"]["limit"] == 20.0
    assert len(d["points"]) >= 1
    assert d["min_feasible_limit_dba"] == d["points"][-1]["abscissa_dba"]


def test_pareto_with_infeasible_airflow_exits_2(capsys, tmp_path):
    d = json.loads(json.dumps(mini_fixture()[0].to_dict()))
    for e in d["edges"]:
        if e["id"] == "duct":
            e["loss_coefficient_pa_s2_m6"] = 1e6
    (tmp_path / "n.json").write_text(json.dumps(d))
    mini_fixture()[1].dump(tmp_path / "c.json")
    code, _, _ = _run(capsys, "pareto", "--network", str(tmp_path / "n.json"), "--catalog", str(tmp_path / "c.json"),
                      "--limits", "50", "--out", str(tmp_path))
    assert code == 2
    assert json.loads((tmp_path / "pareto.json").read_text())["points"] == []


def test_optimize_compare_sequential(capsys, tmp_path):
    code, _, _ = _run(capsys, "optimize", "--fixture", "tradeoff", "--compare-sequential", "--out", str(tmp_path))
    assert code == 0
    hol = json.loads((tmp_path / "solution.json").read_text())
    seq = json.loads((tmp_path / "sequential_solution.json").read_text())
    assert seq["mode"] == "sequential"
    assert hol["objective_eur"] <= seq["objective_eur"]


def test_trace_matches_solution_level(capsys, tmp_path):
    assert _run(capsys, "optimize", "--fixture", "mini", "--noise-limit", "55", "--out", str(tmp_path))[0] == 0
    sol = json.loads((tmp_path / "solution.json").read_text())
    code, _, _ = _run(capsys, "trace", "--fixture", "mini", "--solution", str(tmp_path / "solution.json"),
                      "--room", "r1", "--scenario", "s2", "--out", str(tmp_path))
    assert code == 0
    rows = _csv(tmp_path / "trace.csv")
    assert rows[0] == ["step", "edge", "kind", "band", "level_in_db", "damping_db", "flow_noise_db", "level_out_db"]
    assert rows[-1][2] == "room_dba"
    assert float(rows[-1][-1]) == pytest.approx(sol["room_levels_dba"]["r1"]["s2"], abs=1e-6)
    assert {r[1] for r in rows[1:-1]} == {"fs", "sil", "vfc", "duct"}


def test_trace_unknown_room_exits_1(capsys, tmp_path):
    _run(capsys, "optimize", "--fixture", "mini", "--noise-limit", "55", "--out", str(tmp_path))
    code, _, _ = _run(capsys, "trace", "--fixture", "mini", "--solution", str(tmp_path / "solution.json"),
                      "--room", "attic", "--out", str(tmp_path))
    assert code == 1


def test_export_and_check_roundtrip(capsys, tmp_path):
    assert _run(capsys, "optimize", "--fixture", "mini", "--noise-limit", "55", "--out", str(tmp_path))[0] == 0
    code, out, _ = _run(capsys, "export-model", "--fixture", "mini", "--noise-limit", "55", "--out", str(tmp_path))
    assert code == 0 and "variables" in out
    code, _, _ = _run(capsys, "check-solution", "--model", str(tmp_path / "model.txt"),
                      "--assignment", str(tmp_path / "assignment.json"), "--out", str(tmp_path))
    assert code == 0
    rep = json.loads((tmp_path / "check_report.json").read_text())
    assert rep["feasible"] and rep["max_residual"] <= 1e-6
    vals = json.loads((tmp_path / "assignment.json").read_text())
    vals["values"] = {k: 0.0 for k in vals["values"]}
    (tmp_path / "zero.json").write_text(json.dumps(vals))
    code, _, _ = _run(capsys, "check-solution", "--model", str(tmp_path / "model.txt"),
                      "--assignment", str(tmp_path / "zero.json"), "--out", str(tmp_path))
    assert code == 2
    assert json.loads((tmp_path / "check_report.json").read_text())["violations"]


def test_loadcases(capsys, tmp_path):
    d = {"format_version": 1, "operating_hours": 4,
         "rooms": [{"id": "a", "Q_build_m3s": 0.1, "Q_person_m3s": 0.01, "a_max": 20,
                    "occupancy": [0.1, 0.2, 0.9, 1.0]},
                   {"id": "b", "Q_build_m3s": 0.05, "Q_person_m3s": 0.01, "a_max": 10,
                    "occupancy": [0.0, 0.1, 0.5, 0.6]}]}
    (tmp_path / "d.json").write_text(json.dumps(d))
    code, _, _ = _run(capsys, "loadcases", "--demands", str(tmp_path / "d.json"), "-k", "2", "--out", str(tmp_path))
    assert code == 0
    lc = json.loads((tmp_path / "loadcases.json").read_text())
    text = (tmp_path / "loadcases.json").read_text()
    assert sum(s["weight"] for s in lc["scenarios"]) == pytest.approx(1.0)
    code, _, _ = _run(capsys, "loadcases", "--demands", str(tmp_path / "d.json"), "-k", "9", "--out", str(tmp_path))
    assert code == 1
    _run(capsys, "loadcases", "--demands", str(tmp_path / "d.json"), "-k", "2", "--out", str(tmp_path))
    assert (tmp_path / "loadcases.json").read_text() == text


def _write_samples(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q_m3s", "n", "D_m", "dp_pa"])
        w.writerows(rows)


def test_fit_writes_coefficients_and_catalog(capsys, mini_files):
    import numpy as np

    rng = np.random.default_rng(1)
    q, n, D = rng.uniform(0.2, 2, 40), rng.uniform(0.3, 1, 40), rng.choice([0.4, 0.5], 40)
    dp = -6 * q ** 2 / D ** 4 + 40 * q * n / D + 3200 * n ** 2 * D ** 2
    _write_samples(mini_files / "fp.csv", zip(q, n, D, dp))
    code, _, _ = _run(capsys, "fit", "--samples", f"fan_pressure={mini_files / 'fp.csv'}",
                      "--catalog", str(mini_files / "cat.json"), "--entity", "LOUD", "--out", str(mini_files / "f"))
    assert code == 0
    coef = json.loads((mini_files / "f" / "coefficients.json").read_text())
    assert coef["equations"]["fan_pressure"]["coefficients"] == pytest.approx([-6, 40, 3200], abs=1e-6)
    cat = json.loads((mini_files / "f" / "catalog.json").read_text())
    assert cat["fan_lines"]["LOUD"]["pressure"] == pytest.approx([-6, 40, 3200], abs=1e-6)
    assert _csv(mini_files / "f" / "r2_report.csv")[1][3] == "no"


def test_fit_short_sample_file_exits_1(capsys, tmp_path):
    _write_samples(tmp_path / "fp.csv", [(0.5, 0.5, 0.4, 100.0), (0.6, 0.7, 0.4, 150.0), (1.0, 0.9, 0.5, 300.0)])
    code, _, err = _run(capsys, "fit", "--samples", f"fan_pressure={tmp_path / 'fp.csv'}", "--out", str(tmp_path))
    assert code == 1
    assert "input error" in err


def test_fit_bad_equation_exits_1(capsys, tmp_path):
    _write_samples(tmp_path / "fp.csv", [(0.5, 0.5, 0.4, 100.0)])
    assert _run(capsys, "fit", "--samples", f"warp_drive={tmp_path / 'fp.csv'}", "--out", str(tmp_path))[0] == 1


def test_rerun_is_byte_identical_except_timestamp(capsys, tmp_path):
    for d in ("a", "b"):
        assert _run(capsys, "optimize", "--fixture", "mini", "--noise-limit", "55", "--out", str(tmp_path / d))[0] == 0
    for f in ("costs.csv", "rooms.csv", "assignment.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    a, b = (json.loads((tmp_path / d / "solution.json").read_text()) for d in ("a", "b"))
    a["metadata"].pop("timestamp"), b["metadata"].pop("timestamp")
    assert a == b
