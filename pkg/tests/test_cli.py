import csv
import json

import pytest

from etdgrid.cli import main
from etdgrid.data import load_csv
from etdgrid.qnet import Checkpoint, QNetworkParams, save_checkpoint
from etdgrid.trainer import read_trace_csv

SMALL_CONFIG = """# tiny network for quick runs
episode_length = 24
buffer_capacity = 500
warmup_transitions = 32
batch_size = 16
hidden = 16
hidden_layers = 2
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--seed", "3", "--hours", "720", "--out", str(d / "data")]) == 0
    (d / "small.cfg").write_text(SMALL_CONFIG)
    assert main(["train", "--data", str(d / "data" / "train.csv"), "--config", str(d / "small.cfg"),
                 "--episodes", "4", "--mode", "etd", "--schedule", "soit2fnn", "--out", str(d / "run")]) == 0
    return d


def test_synth_outputs(workdir):
    files = sorted(p.name for p in (workdir / "data").iterdir())
    assert files == ["clean.csv", "manifest.json", "test.csv", "train.csv"]
    assert len(load_csv(workdir / "data" / "train.csv")) == 720


def test_train_outputs(workdir):
    run = workdir / "run"
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["config"]["mode"] == "etd"
    assert manifest["config"]["hidden"] == 16 and manifest["config"]["episodes"] == 4
    with (run / "curve.csv").open() as fh:
        assert len(list(csv.reader(fh))) == 5


def test_eval_trace(workdir, capsys):
    out = workdir / "eval"
    assert main(["eval", "--checkpoint", str(workdir / "run" / "checkpoint.json"),
                 "--data", str(workdir / "data" / "test.csv"), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    trace = read_trace_csv(out / "trace.csv")
    assert len(trace["reward"]) == 720 - 6
    acr = float(printed.split("ACR:")[1].split()[0])
    assert acr == pytest.approx(trace["reward"].sum(), abs=1e-5)


def test_zero_checkpoint_prints_zero(workdir, capsys):
    ck = workdir / "zero.json"
    good = json.loads((workdir / "run" / "checkpoint.json").read_text())
    save_checkpoint(ck, Checkpoint(QNetworkParams.zeros((22, 16, 16, 5)), extra=good["extra"]))
    assert main(["eval", "--checkpoint", str(ck), "--data", str(workdir / "data" / "test.csv"),
                 "--out", str(workdir / "zero")]) == 0
    assert "ACR: 0.000000" in capsys.readouterr().out


def test_simulate_week(workdir):
    out = workdir / "week"
    assert main(["simulate", "--checkpoint", str(workdir / "run" / "checkpoint.json"),
                 "--data", str(workdir / "data" / "test.csv"), "--start-hour", "24", "--out", str(out)]) == 0
    with (out / "week.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 168
    for r in rows:
        assert 200 <= float(r["soc"]) <= 1000
        p_u, p_b, p_g, p_c = (float(r[k]) for k in ("p_u", "p_b_applied", "p_g", "p_c"))
        assert abs(p_u + p_b - p_g + p_c) <= 1e-9
    assert (out / "week.svg").read_text().startswith("<svg")
    assert main(["simulate", "--checkpoint", str(workdir / "run" / "checkpoint.json"),
                 "--data", str(workdir / "data" / "test.csv"), "--start-hour", "700", "--out", str(out)]) == 2


def test_rerun_reproduces(workdir):
    assert main(["rerun", str(workdir / "run" / "manifest.json"), "--out", str(workdir / "again")]) == 0
    assert (workdir / "again" / "checkpoint.json").read_bytes() == (workdir / "run" / "checkpoint.json").read_bytes()


def test_rerun_detects_changed_input(workdir, tmp_path):
    data = tmp_path / "train.csv"
    data.write_bytes((workdir / "data" / "train.csv").read_bytes())
    assert main(["train", "--data", str(data), "--config", str(workdir / "small.cfg"), "--episodes", "1",
                 "--out", str(tmp_path / "r")]) == 0
    with data.open("a") as fh:
        fh.write("720,1,1,0.1,0.4\n")
    assert main(["rerun", str(tmp_path / "r" / "manifest.json"), "--out", str(tmp_path / "r2")]) == 2


def test_td_with_schedule_warns(workdir, caplog):
    with caplog.at_level("WARNING"):
        assert main(["train", "--data", str(workdir / "data" / "train.csv"), "--config", str(workdir / "small.cfg"),
                     "--episodes", "1", "--schedule", "cnn-lstm", "--out", str(workdir / "tdw")]) == 0
    assert "ignores the MPE schedule" in caplog.text


def test_schedule_file(workdir, tmp_path):
    sched = tmp_path / "s.csv"
    sched.write_text("variable,step,mpe_percent\n" + "".join(f"{v},{k},5\n" for v in ("pu", "pr", "ci")
                                                               for k in range(1, 7)))
    assert main(["train", "--data", str(workdir / "data" / "train.csv"), "--config", str(workdir / "small.cfg"),
                 "--episodes", "1", "--mode", "etd", "--schedule", f"file:{sched}", "--out", str(tmp_path / "r")]) == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert str(sched) in manifest["inputs"]


def test_compare_grid(workdir, capsys):
    out = workdir / "cmp"
    args = ["compare", "--train", str(workdir / "data" / "train.csv"), "--test", str(workdir / "data" / "test.csv"),
            "--seeds", "1,2", "--schedule", "soit2fnn", "--config", str(workdir / "small.cfg"), "--episodes", "2",
            "--out", str(out)]
    assert main(args) == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0] == "seed,DQN/actual,DQN/pred,ETD-DQN/actual,ETD-DQN/pred"
    assert len(lines) == 4 and lines[-1].startswith("median")
    assert "median" in capsys.readouterr().out


@pytest.mark.parametrize("argv, needle", [
    (["train", "--data", "missing.csv", "--out", "x"], "missing.csv"),
    (["train", "--data", "{train}", "--mode", "etd", "--out", "x"], "--schedule"),
    (["train", "--data", "{train}", "--schedule", "file:nowhere.csv", "--out", "x"], "nowhere.csv"),
    (["train", "--data", "{train}", "--config", "nope.cfg", "--out", "x"], "nope.cfg"),
    (["compare", "--seeds", "1", "--schedule", "soit2fnn", "--out", "x"], "two seeds"),
    (["eval", "--checkpoint", "{train}", "--data", "{train}", "--out", "x"], "checkpoint"),
])
def test_usage_errors_exit_2(workdir, tmp_path, monkeypatch, capsys, argv, needle):
    monkeypatch.chdir(tmp_path)
    argv = [a.replace("{train}", str(workdir / "data" / "train.csv")) for a in argv]
    assert main(argv) == 2
    assert needle in capsys.readouterr().err


def test_bad_config_value_exit_2(workdir, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("gamma = 1.5\n")
    assert main(["train", "--data", str(workdir / "data" / "train.csv"), "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == 2


def test_argparse_usage_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_runtime_failure_exit_1(workdir, tmp_path, monkeypatch):
    import etdgrid.cli as cli
    from etdgrid.qnet import TrainingError

    def boom(*a, **k):
        raise TrainingError("non-finite loss")
    monkeypatch.setattr(cli, "train", boom)
    assert main(["train", "--data", str(workdir / "data" / "train.csv"), "--out", str(tmp_path / "o")]) == 1
