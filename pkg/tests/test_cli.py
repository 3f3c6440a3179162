import csv
import subprocess
import sys

import pytest
import yaml

from aqmlab import config as cfgmod
from aqmlab.cli import main
from aqmlab.controllers import Irbf


def write(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


SHORT = {"scenario": {"preset": "nominal", "duration": 5.0}, "run": {"dt": 1 / 160}}


# ------------------------------------------------------------------- config

def test_defaults_parse():
    exp = cfgmod.parse({})
    assert exp.scenario.name == "nominal"
    assert list(exp.controllers) == ["rbf", "irbf", "pi", "rem", "ared", "droptail"]


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"scenario": {"preset": "nowhere"}},
    {"scenario": {"capacity": -1}},
    {"controller": "fuzzy"},
    {"controller": {"scheme": "rbf", "weights": [1.0], "centers": [0.0], "spreads": [-1.0]}},
    {"controllers": "rbf"},
    {"controllers": ["rbf", "rbf"]},
    {"run": {"dt": 0}},
    {"sweep": {"axis": "users", "values": [80, 70]}},
    {"tune": {"population": 1}},
    {"tune": {"lower": [0.0]}},
])
def test_bad_configs(data):
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse(data)


def test_dump_round_trip():
    exp = cfgmod.parse({"scenario": {"preset": "dynamic_load"},
                        "controllers": ["rbf", {"name": "slow_pi", "scheme": "pi", "a": 1e-5}],
                        "sweep": {"axis": "prop_delay", "values": [0.02, 0.04]},
                        "tune": {"max_iterations": 7, "eval": {"n_initial": 3}}})
    again = cfgmod.parse(yaml.safe_load(cfgmod.dump(exp)))
    assert again == exp


def test_missing_file_names_path(tmp_path):
    with pytest.raises(cfgmod.ConfigError, match="nope.yaml"):
        cfgmod.load(tmp_path / "nope.yaml")


# ---------------------------------------------------------------------- cli

def test_run_writes_trace_and_metrics(tmp_path):
    cfg = write(tmp_path / "c.yaml", SHORT)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    trace = rows(out / "trace.csv")
    assert trace[0] == ["time", "queue", "window", "control", "arrival_rate"]
    assert len(trace) - 1 == 5 * 160 + 1
    metrics = rows(out / "metrics.csv")
    assert metrics[0] == ["iae", "utilization", "loss_rate"] and len(metrics) == 2


def test_full_run_row_count(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "trace.csv")) - 1 == 100 * 160 + 1


def test_numbers_keep_nine_significant_digits(tmp_path):
    cfg = write(tmp_path / "c.yaml", SHORT)
    main(["run", "--config", str(cfg), "--out", str(tmp_path)])
    value = rows(tmp_path / "metrics.csv")[1][0]
    assert len(value.replace(".", "").replace("-", "").lstrip("0").split("e")[0]) >= 9


def test_seed_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path / "c.yaml", SHORT)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "7"]) == 0
    for f in ("trace.csv", "metrics.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2
    assert "missing.yaml" in capsys.readouterr().err


def test_bad_overrides_exit_2(tmp_path):
    assert main(["run", "--dt", "-1", "--out", str(tmp_path)]) == 2
    assert main(["run", "--seed", "-3", "--out", str(tmp_path)]) == 2
    assert main(["launch"]) == 2


def test_simulation_error_exit_3(tmp_path):
    cfg = write(tmp_path / "c.yaml", {**SHORT, "run": {"dt": 0.05}})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 3


def test_io_error_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write(tmp_path / "c.yaml", SHORT)
    assert main(["run", "--config", str(cfg), "--out", str(blocker / "sub")]) == 4


def test_tune_outputs(tmp_path):
    cfg = write(tmp_path / "c.yaml", {
        "controller": "irbf",
        "tune": {"max_iterations": 4, "population": 3, "eval": {"duration": 5.0, "n_initial": 2}},
    })
    assert main(["tune", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    conv = rows(tmp_path / "convergence.csv")
    assert conv[0] == ["iteration", "best_iae"] and 2 <= len(conv) <= 5
    best_iae = [float(r[1]) for r in conv[1:]]
    assert all(b <= a for a, b in zip(best_iae, best_iae[1:]))
    best = rows(tmp_path / "best.csv")
    assert [r[0] for r in best[1:]] == ["w1", "w2", "w3", "w4", "w5", "w_I"]
    # the tuned controller is reusable as a config
    reused = cfgmod.load(tmp_path / "best_controller.yaml").controller
    assert isinstance(reused, Irbf)
    assert reused.integral_gain == pytest.approx(float(best[-1][1]), rel=1e-11)


def test_tune_rejects_untunable(tmp_path):
    cfg = write(tmp_path / "c.yaml", {"controller": "pi"})
    assert main(["tune", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_tune_population_one_rejected(tmp_path):
    cfg = write(tmp_path / "c.yaml", {"tune": {"population": 1}})
    assert main(["tune", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_sweep_users_six_controllers(tmp_path):
    cfg = write(tmp_path / "c.yaml", {**SHORT, "sweep": {"axis": "users"}})
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "sweep.csv")
    assert table[0] == ["axis_value", "controller", "utilization", "loss_rate"]
    assert len(table) - 1 == 60


def test_sweep_delay_and_single_value(tmp_path):
    cfg = write(tmp_path / "c.yaml", {**SHORT, "sweep": {"axis": "prop_delay"},
                                      "controllers": ["rbf"]})
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path)])
    assert [r[0] for r in rows(tmp_path / "sweep.csv")[1:]] == \
        ["0.02", "0.04", "0.06", "0.08", "0.1", "0.12", "0.14"]
    cfg = write(tmp_path / "c.yaml", {**SHORT, "sweep": {"axis": "users", "values": [90]}})
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path)])
    assert len(rows(tmp_path / "sweep.csv")) - 1 == 6


def test_sweep_empty_controller_list(tmp_path):
    cfg = write(tmp_path / "c.yaml", {**SHORT, "controllers": []})
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_compare(tmp_path):
    cfg = write(tmp_path / "c.yaml", SHORT)
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    table = rows(tmp_path / "metrics.csv")
    assert table[0] == ["controller", "iae", "utilization", "loss_rate"]
    assert [r[0] for r in table[1:]] == ["rbf", "irbf", "pi", "rem", "ared", "droptail"]
    assert rows(tmp_path / "trace_pi.csv")[0][0] == "time"


def test_dump_effective_config_round_trip(tmp_path, capsys):
    cfg = write(tmp_path / "c.yaml", {"scenario": {"preset": "long_delay"}, "controller": "rem"})
    assert main(["run", "--config", str(cfg), "--dump-effective-config", "--dt", "0.002"]) == 0
    dumped = write(tmp_path / "d.yaml", yaml.safe_load(capsys.readouterr().out))
    a = cfgmod.load(dumped)
    b = cfgmod.load(cfg)
    b.dt = 0.002
    assert a == b


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path / "c.yaml", SHORT)
    done = subprocess.run([sys.executable, "-m", "aqmlab", "run", "--config", str(cfg),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert (tmp_path / "trace.csv").exists()
