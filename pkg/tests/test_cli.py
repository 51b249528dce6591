import csv

import numpy as np
import pytest

from pararealnet import checkpoint
from pararealnet.cli import main
from pararealnet.data import write_idx


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


SMALL_MODEL = """
[model]
input_shape = 1, 8, 8
classes = 3
blocks = 6
width = 2
N = 2
coarse_units = 1
"""


def test_ode_command_writes_history(tmp_path, capsys):
    cfg = write(tmp_path, "[ode]\nsystem = scalar\nN = 4\nM = 4\nmax_iters = 4\n")
    assert main(["ode", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    table = rows(tmp_path / "o" / "ode.csv")
    assert table[0] == ["iter", "error"] and len(table) == 6
    assert float(table[-1][1]) <= 1e-12


def test_consistency_command(tmp_path, capsys):
    cfg = write(tmp_path, "[consistency]\nN = 1\n")
    assert main(["consistency", "--config", cfg]) == 0
    assert capsys.readouterr().out.strip().endswith("max deviation 0.0")
    assert main(["consistency"]) == 0


def test_gradcheck_command_small(tmp_path, capsys):
    cfg = write(tmp_path, "[gradcheck]\nblocks = 6\nwidth = 1\nN = 1, 2\ncoarse_units = 1\n")
    assert main(["gradcheck", "--config", cfg]) == 0
    assert "max relative gradient error" in capsys.readouterr().out


def test_bench_cost_mode_equal_runs_give_zero_rs(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_MODEL + "[exec]\ntiming = cost\nbench_N = 1, 1\nbench_batch = 4\n")
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert out.count("RS 0.0%") == 2
    table = rows(tmp_path / "b" / "bench_1_N1.csv")
    assert table[0] == ["stage", "forward_ms", "backward_ms"] and table[-1][0] == "total"


def test_bench_wall_mode(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_MODEL + "[exec]\nbench_N = 1, 2\nbench_batch = 4\n")
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert (tmp_path / "b" / "bench_1_N2.csv").exists()


def test_train_synth_writes_metrics_and_checkpoint(tmp_path, capsys):
    text = SMALL_MODEL + "[train]\nepochs = 2\nbatch_size = 8\n[data]\nper_class = 6\ntest_per_class = 3\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "t"
    assert main(["train", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    table = rows(out / "metrics.csv")
    assert table[0] == ["epoch", "loss", "train_err", "test_err"] and len(table) == 3
    params, velocity, epoch = checkpoint.load_training_state(out / "model.prnn")
    assert epoch == 2 and params.keys() == velocity.keys()

    # resuming from the checkpoint for a third epoch
    resume = write(tmp_path, text.replace("epochs = 2", f"epochs = 3\nresume = {out / 'model.prnn'}"))
    assert main(["train", "--config", resume, "--out", str(tmp_path / "r"), "--seed", "3"]) == 0
    assert [r[0] for r in rows(tmp_path / "r" / "metrics.csv")[1:]] == ["2"]


def test_train_from_idx(tmp_path, capsys):
    rng = np.random.default_rng(0)
    write_idx(tmp_path / "i", tmp_path / "l", rng.integers(0, 256, (12, 8, 8)), rng.integers(0, 3, 12))
    text = SMALL_MODEL + f"""
[train]
batch_size = 4
[data]
source = idx
train_images = {tmp_path / 'i'}
train_labels = {tmp_path / 'l'}
test_images = {tmp_path / 'i'}
test_labels = {tmp_path / 'l'}
train_limit = 10
"""
    assert main(["train", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("text", ["[model]\nn_subnets = 3\n", "[model]\npreset = toy-lenet\n",
                                  "[data]\nsource = idx\ntrain_images = /nonexistent\n"])
def test_errors_exit_nonzero(tmp_path, capsys, text):
    assert main(["train", "--config", write(tmp_path, text), "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["ode", "--config", str(tmp_path / "none.ini")]) != 0
