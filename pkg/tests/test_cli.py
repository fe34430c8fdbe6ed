import pandas as pd
import pytest

from coachddpc.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out", str(root / "data"), "--days", "2", "--validation-days", "1", "--raw"]) == 0
    return root


def test_generate_layout(workdir):
    assert len(list((workdir / "data" / "train").glob("*.csv"))) == 2
    assert len(list((workdir / "data" / "validation").glob("*.csv"))) == 1
    assert {p.name for p in (workdir / "data" / "raw").iterdir()} >= {"hvac.csv", "weather.csv", "trips.csv"}


def test_ingest(workdir, capsys):
    out = workdir / "ingested"
    code = main(["ingest", "--raw", str(workdir / "data" / "raw"), "--period", "300", "--downsample", "2",
                 "--min-length", "18", "--out", str(out)])
    assert code == 0
    table = pd.read_csv(out / "summary.csv")
    assert len(table) == 2
    assert (out / "period_300s").is_dir() and (out / "period_600s").is_dir()
    assert "[PASS] ingest.trajectories" in capsys.readouterr().out


@pytest.fixture(scope="module")
def fitted(workdir):
    path = workdir / "model.npz"
    assert main(["fit", "--train", str(workdir / "data" / "train"), "--rho", "12", "--horizon", "6",
                 "--out", str(path)]) == 0
    return path


def test_evaluate_exit_codes(workdir, fitted):
    val = str(workdir / "data" / "validation")
    report = workdir / "mae.csv"
    assert main(["evaluate", "--model", str(fitted), "--validation", val, "--report", str(report),
                 "--mae-limit", "100"]) == 0
    assert len(pd.read_csv(report)) > 0
    assert main(["evaluate", "--model", str(fitted), "--validation", val, "--mae-limit", "0"]) == 1


def test_missing_input_is_exit_2(workdir):
    assert main(["evaluate", "--model", str(workdir / "absent.npz"),
                 "--validation", str(workdir / "data" / "validation")]) == 2


def test_fit_rejects_wrong_period(workdir):
    assert main(["fit", "--train", str(workdir / "data" / "train"), "--period", "600",
                 "--out", str(workdir / "never.npz")]) == 2


@pytest.mark.slow
def test_simulate_compare_report(workdir, fitted, capsys):
    runs = workdir / "runs"
    code = main(["simulate", "--mode", "both", "--scenario", "march", "--model", str(fitted),
                 "--duration-h", "3", "--out", str(runs), "--min-savings", "-100", "--max-violation", "100"])
    out = capsys.readouterr().out
    assert code == 0, out
    for check in ("simulate.setpoint_band", "simulate.setpoint_rate", "simulate.kkt", "simulate.outputs"):
        assert f"[PASS] {check}" in out
    assert (runs / "run_activated.csv").exists() and (runs / "run_deactivated.csv").exists()

    code = main(["compare", "--run-a", str(runs / "run_activated.csv"), "--run-b", str(runs / "run_deactivated.csv"),
                 "--out", str(workdir / "cmp"), "--min-savings", "-100", "--max-violation", "100"])
    assert code == 0
    assert (workdir / "cmp").is_dir()

    assert main(["report", "--runs", str(runs), "--out", str(workdir / "figs")]) == 0
    assert list((workdir / "figs").glob("*.png"))


def test_report_without_runs(tmp_path):
    assert main(["report", "--runs", str(tmp_path)]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["nonsense"])
