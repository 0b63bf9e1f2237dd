import json
import subprocess
import sys

import numpy as np
import pytest

from bnnlab import cli, harness
from bnnlab.games import ConfigError

SMALL = dict(game="rps", params="12,1,1", iters=300, eval_interval=10, seeds="0..3")


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "bnnlab", *args], capture_output=True, text=True, cwd=cwd)


def test_defaults_resolve():
    cfg = harness.resolve_config()
    d = cfg.to_dict()
    assert d["eta"] == "power:c=1,t0=10" and d["noise"] == "gauss:0"
    assert d["eval_interval"] == 10 and d["seeds"] == "0..9"


def test_config_file_overridden_by_flags(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\ngame = brps  # trailing comment\niters = 50\n")
    cfg = harness.load_config(path, {"iters": 70})
    assert cfg.game == "brps" and cfg.iters == 70


@pytest.mark.parametrize("text, line, needle", [
    ("game = brps\niters = -5\n", 2, "iters"),
    ("game = brps\nbogus = 1\n", 2, "unknown key"),
    ("iters = 5\niters = 6\n", 2, "duplicate"),
    ("game brps\n", 1, "key = value"),
    ("eta = power:c=0\n", 1, "eta"),
])
def test_config_errors_name_the_line(tmp_path, text, line, needle):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError) as err:
        harness.load_config(path)
    assert f"bad.cfg:{line}:" in str(err.value) and needle in str(err.value)


def test_cross_field_conflict_lists_keys(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("game = kuhn\nschedule = rps1\n")
    with pytest.raises(ConfigError) as err:
        harness.load_config(path)
    assert "game" in str(err.value) and "schedule" in str(err.value)


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("iters = 0\n")
    res = run_cli("run", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert res.returncode == 2 and "bad.cfg:1" in res.stderr
    assert run_cli("run", "--algo", "nope", "--out", str(tmp_path / "o")).returncode == 2
    res = run_cli("run", "--game", "rps", "--params", "1e308,1e308,1e308", "--iters", "5", "--seeds", "0",
                  "--out", str(tmp_path / "num"))
    assert res.returncode == 3
    dump = json.loads((tmp_path / "num" / "numerical_error.json").read_text())
    assert "state" in dump and "profile" in dump["state"]


def test_run_outputs_and_byte_identical_reruns(tmp_path):
    cfg = harness.ExperimentConfig(**SMALL, noise="gauss:0.1")
    harness.run_experiment(cfg, tmp_path / "a", threads=1)
    harness.run_experiment(cfg, tmp_path / "b", threads=2)
    for name in ("seed_0.csv", "seed_3.csv", "mean.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lines = (tmp_path / "a" / "seed_0.csv").read_text().splitlines()
    assert lines[0] == "# bnnlab-trace v1"
    assert lines[1] == ",".join(harness.CSV_FIELDS)
    assert len(lines) == 2 + 31
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config"]["noise"] == "gauss:0.1" and summary["seeds"] == [0, 1, 2, 3]


def test_seed_runs_do_not_depend_on_batch():
    a = harness.run_trace(harness.ExperimentConfig(**{**SMALL, "seeds": "2"}), threads=1)
    b = harness.run_trace(harness.ExperimentConfig(**SMALL), threads=1)
    np.testing.assert_array_equal(a.columns["gamma"][:, 0], b.columns["gamma"][:, 2])


def test_simplex_invariant_in_every_algorithm():
    for algo in ("bnn", "replicator", "reg-rd"):
        tr = harness.run_trace(harness.ExperimentConfig(**SMALL, algo=algo, noise="gauss:0.2"), threads=1)
        assert np.all(tr.final > 0)
        np.testing.assert_allclose(tr.final[:, :3].sum(axis=1), 1, atol=1e-12)


def test_stage_report_by_hand():
    from bnnlab.runs import Trace
    t = np.arange(0, 30, 1)
    nc = np.where(t < 10, 1.0, np.where(t < 12, 5.0, 1.2))[:, None]
    cols = {k: nc for k in ("nash_conv", "gamma", "s_mass", "eta_t", "floor_events", "min_external_reach", "stage_id")}
    tr = Trace((0,), t, cols, np.zeros((1, 3)), np.zeros((1, 3)), 0.0, {})
    rep = harness.stage_report(tr, [0, 10, 20], factor=1.5)
    assert rep["recovery_time"] == [2, 0]
    assert rep["pre_transition_floor"] == [1.0, 1.2]
    rep = harness.stage_report(tr, [0, 10, 20], factor=1.1)
    assert rep["recovery_time"][0] is None


def test_compare_grid_has_six_reg_rd_cells(tmp_path):
    base = harness.ExperimentConfig(game="rps", schedule="rps3", iters=600, seeds="0..1", eval_interval=10)
    cfgs = [base] + harness.reg_rd_grid(base)
    result = harness.compare(cfgs, tmp_path, threads=1)
    assert [r["algo"] for r in result["rows"]].count("reg-rd") == 6
    assert (tmp_path / "compare.csv").read_text().count("\n") == 8
    with pytest.raises(ConfigError):
        harness.compare([base, harness.ExperimentConfig(game="rps", iters=10)])


def test_plot_data_header_and_columns(tmp_path):
    cfg = harness.ExperimentConfig(**SMALL)
    harness.run_experiment(cfg, tmp_path / cfg.label(), threads=1)
    written = harness.emit_plot_data(tmp_path)
    lines = written[0].read_text().splitlines()
    assert lines[0] == "# t nash_conv_mean nash_conv_stderr nash_conv_lo nash_conv_hi " \
                       "gamma_mean gamma_stderr gamma_lo gamma_hi  seeds=4"
    row = [float(x) for x in lines[1].split()]
    assert len(row) == 9 and row[3] == pytest.approx(row[1] - row[2]) and row[4] == pytest.approx(row[1] + row[2])
    assert (tmp_path / "plot" / "plot.gp").exists()
    with pytest.raises(ConfigError):
        harness.emit_plot_data(tmp_path / "empty")


def test_efg_and_bnnac_runs_through_harness(tmp_path):
    for algo in ("bnn", "bnnac", "reg-rd"):
        cfg = harness.ExperimentConfig(game="kuhn", algo=algo, iters=100, seeds="0..1", schedule="kuhn_direct",
                                       stage_length=25)
        summary = harness.run_experiment(cfg, tmp_path / algo, threads=1)
        assert len(summary["stages"]["stage_mean_nash_conv"]) == 4
        assert summary["meta"]["signed_transfer"]


def test_figures_preset_covers_seven_groups():
    groups = harness.appendix_preset(0.01, "0..1")
    assert len(groups) == 7
    assert all(groups.values())


def test_cli_main_in_process(tmp_path, capsys):
    code = cli.main(["run", "--game", "brps", "--iters", "50", "--seeds", "0", "--sigma", "0.1",
                     "--out", str(tmp_path / "r"), "--threads", "1"])
    assert code == 0 and "final NashConv" in capsys.readouterr().out
    assert cli.main(["run", "--sigma", "0.1", "--noise", "gauss:0.1", "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["plot-data", str(tmp_path)]) == 0


def test_thread_limit_env(monkeypatch):
    monkeypatch.setenv("BNNLAB_THREADS", "3")
    assert harness.thread_limit() == 3
    monkeypatch.setenv("BNNLAB_THREADS", "zero")
    with pytest.raises(ConfigError):
        harness.thread_limit()
