import csv
import json

import pytest

from lockeryield.cli import main

FAST_CONFIG = {"forest": {"n_trees": 8}, "dwell_forest": {"n_trees": 8}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "fast.json").write_text(json.dumps(FAST_CONFIG))
    assert main(["bench", "--out", str(root / "bench"), "--lockers", "3", "--seed", "4"]) == 0
    return root


def run(workdir, *argv):
    return main([*argv, "--data", str(workdir / "bench"), "--out", str(workdir / "out"),
                 "--config", str(workdir / "fast.json")])


def test_bench_layout(workdir):
    bench = workdir / "bench"
    for name in ("manifest.json", "lockers.csv", "options.csv", "home.csv", "dwell_truth.csv",
                 "events/L000.csv", "history/L002.csv"):
        assert (bench / name).exists(), name


def test_train_plan_simulate_report(workdir, capsys):
    assert run(workdir, "train") == 0
    assert (workdir / "out" / "models" / "dwell.json").exists()
    assert run(workdir, "plan", "--plan-day", "0") == 0
    plans = sorted((workdir / "out" / "plans").glob("*.csv"))
    assert [p.name for p in plans] == ["L000.csv", "L001.csv", "L002.csv"]
    assert json.loads((workdir / "out" / "plan_metrics.json").read_text())["plan_day"] == 0
    assert run(workdir, "simulate") == 0
    summary = json.loads((workdir / "out" / "summary.json").read_text())
    assert set(summary["L001"]) == {"FCFS", "ProportionRule", "Reservation"}
    assert main(["report", "--run", str(workdir / "out"), "--data", str(workdir / "bench")]) == 0
    with (workdir / "out" / "figure_uplift_Reservation_vs_ProportionRule.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["rank"] for r in rows] == ["1", "2", "3"]
    assert {r["tier"] for r in rows} == {"low", "medium", "high"}
    assert "mean uplift" in capsys.readouterr().out


def test_simulate_from_plan_files(workdir, caplog):
    plans = workdir / "out" / "plans"
    if not plans.exists():
        assert run(workdir, "plan") == 0
    (plans / "L000.csv").rename(workdir / "L000.csv.bak")
    try:
        rc = main(["simulate", "--data", str(workdir / "bench"), "--out", str(workdir / "static"),
                   "--config", str(workdir / "fast.json"), "--models", str(workdir / "out" / "models"),
                   "--plans", str(plans), "--policy", "FCFS", "--policy", "Reservation"])
    finally:
        (workdir / "L000.csv.bak").rename(plans / "L000.csv")
    assert rc == 0
    assert "no plan for locker L000" in caplog.text
    assert set(json.loads((workdir / "static" / "summary.json").read_text())) == {"L001", "L002"}


def test_ingest(tmp_path, capsys):
    good = tmp_path / "a.csv"
    good.write_text("locker_id,order_id,kind,ship_option,day,seq\nL,a,Pickup,1,1,9\nL,a,Request,1,0,0\n"
                    "L,a,Delivery,1,1,5\nL,b,Request,1,0,1\nL,b,Request,1,0,2\n")
    out = tmp_path / "out.csv"
    assert main(["ingest", str(good), "--out", str(out)]) == 3
    assert not out.exists()
    assert "duplicate Request" in capsys.readouterr().err
    assert main(["ingest", str(good), "--out", str(out), "--skip-bad"]) == 0
    assert out.read_text().splitlines()[1:] == ["L,a,Request,1,0,0", "L,b,Request,1,0,1", "L,a,Delivery,1,1,5",
                                               "L,a,Pickup,1,1,9"]


def test_exit_codes(workdir, tmp_path):
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text('{"cadence": "hourly"}')
    assert main(["train", "--data", str(workdir / "bench"), "--out", str(tmp_path), "--config", str(bad_cfg)]) == 2
    bad_cfg.write_text("{not json")
    assert main(["train", "--data", str(workdir / "bench"), "--out", str(tmp_path), "--config", str(bad_cfg)]) == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 3
    assert main(["train", "--data", str(workdir / "bench"), "--out", str(tmp_path), "--locker", "NOPE"]) == 2
    assert main(["report", "--run", str(tmp_path / "nothing")]) == 3
    with pytest.raises(SystemExit):
        main(["frobnicate"])
