import json

import pytest

from crossret.cli import main
from crossret.panel import load_panel

RUN = {
    "synth": {"n_stocks": 30, "n_months": 30, "signal_strength": 0.5, "seed": 3},
    "eval_start": "2002-02", "eval_end": "2002-05", "train_window": 12, "retrain_every": 2,
    "models": ["NN3_1", "RF_F5_D3", "SVR_BEST", "ensemble:[NN3_1,RF_F5_D3,SVR_BEST]"],
    "mlp": {"epochs": 2}, "rf": {"n_estimators": 10}, "seed": 5,
}


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_synth_writes_panel(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"synth": {"n_stocks": 12, "n_months": 15}})
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "a.csv"), "--seed", "1"]) == 0
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "b.csv"), "--seed", "2"]) == 0
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "c.csv"), "--seed", "1"]) == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "c.csv").read_bytes() != (tmp_path / "b.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1 + 12 * 15
    assert load_panel(tmp_path / "a.csv").n_stocks == 12
    assert "wrote" in capsys.readouterr().out


def test_synth_errors(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["synth", "--out", str(blocker / "x.csv")]) == 1
    cfg = write_cfg(tmp_path, {"synth": {"n_stocks": 5}})
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "x.csv")]) == 2
    assert "/synth/n_stocks" in capsys.readouterr().err
    assert main(["synth"]) == 2
    with pytest.raises(SystemExit):
        main(["synth", "--out", "x.csv", "--seed", "-1"])


def test_validate_command(tmp_path, capsys):
    main(["synth", "--out", str(tmp_path / "p.csv")])
    capsys.readouterr()
    assert main(["validate", str(tmp_path / "p.csv")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep["universe_sizes"].values()) == {200} and rep["warnings"] == []
    assert main(["validate", str(tmp_path / "p.csv"), "--floor", "500"]) == 1
    assert main(["validate", str(tmp_path / "missing.csv")]) == 2


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_cfg(tmp, RUN)
    assert main(["run", "--config", cfg, "--out", str(tmp / "out")]) == 0
    return tmp / "out"


def test_run_outputs(run_dir):
    doc = json.loads((run_dir / "report.json").read_text())
    assert doc["schema_version"] == 1
    assert [r["name"] for r in doc["rows"]] == ["NN3_1", "RF_F5_D3", "SVR_C0.1_G0.01_E0.1", "Ensemble"]
    assert all(r["status"] == "ok" for r in doc["rows"])
    resolved = json.loads((run_dir / "config.resolved.json").read_text())
    assert resolved["train_window"] == 12 and resolved["seed"] == 5
    assert resolved["models"][1] == {"type": "rf", "name": "RF_F5_D3", "max_features": 5,
                                     "max_depth": 3, "n_estimators": 10}
    assert len((run_dir / "scores" / "Ensemble.csv").read_text().splitlines()) == 1 + 4 * 30
    assert (run_dir / "report.csv").read_text().startswith("name,status,n_months,corr")


def test_rerun_is_byte_identical(run_dir, tmp_path):
    cfg = write_cfg(tmp_path, RUN)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "again"), "--threads", "2"]) == 0
    files = sorted(p.relative_to(run_dir) for p in run_dir.rglob("*") if p.is_file()
                   and "report" not in p.parts[:-1])
    assert len(files) >= 10
    for rel in files:
        assert (tmp_path / "again" / rel).read_bytes() == (run_dir / rel).read_bytes(), rel


def test_report_command(run_dir, tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["report", str(run_dir), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "CORR" in text and "Ensemble" in text
    for name in ("cumulative_tertile", "cumulative_quintile", "corr_monthly", "corr_summary"):
        assert (out / "figures" / f"{name}.png").read_bytes()[:4] == b"\x89PNG"
    lines = (out / "cumulative_ls.csv").read_text().splitlines()
    assert lines[0] == "month,model,bucket,ls_return,cumulative"
    assert len(lines) == 1 + 4 * 2 * 4
    assert main(["report", str(tmp_path / "nothing")]) == 2


def test_run_config_errors(tmp_path, capsys):
    bad = dict(RUN, colour="red")
    assert main(["run", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err
    bad = dict(RUN, models=["NOPE_9"])
    assert main(["run", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    assert "/models/0" in capsys.readouterr().err
    bad = dict(RUN, train_window="12")
    assert main(["run", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    bad = {k: v for k, v in RUN.items() if k != "synth"}
    bad["panel"] = "does/not/exist.csv"
    assert main(["run", "--config", write_cfg(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
    assert main(["run", "--config", write_cfg(tmp_path, RUN)]) == 2
    (tmp_path / "junk.json").write_text("{not json")
    assert main(["run", "--config", str(tmp_path / "junk.json"), "--out", str(tmp_path / "o")]) == 2


def test_run_with_failing_pattern(tmp_path, capsys):
    doc = dict(RUN, eval_start="2002-01", models=["RF_F5_D3"])
    assert main(["run", "--config", write_cfg(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1
    assert "FAILED" in capsys.readouterr().err
    rows = json.loads((tmp_path / "o" / "report.json").read_text())["rows"]
    assert rows[0]["status"] == "failed"


def test_run_from_panel_file(tmp_path):
    panel = tmp_path / "data" / "p.csv"
    cfg = write_cfg(tmp_path, {"synth": RUN["synth"]})
    assert main(["synth", "--config", cfg, "--out", str(panel)]) == 0
    doc = {k: v for k, v in RUN.items() if k != "synth"}
    doc.update(panel="data/p.csv", models=["RF_F5_D3"], out="o")
    path = write_cfg(tmp_path, doc)
    assert main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "scores" / "RF_F5_D3.csv").exists()
