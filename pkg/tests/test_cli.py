import csv
import json

import numpy as np
import pytest

from timessm.cli import main
from timessm.hippo import build_legs
from timessm.tensor import parse_matrix

TRAIN_FLAGS = [
    "--dataset", "sine", "--lookback", "32", "--horizon", "8", "--patch-len", "8",
    "--d-model", "8", "--d-state", "4", "--max-steps", "6", "--eval-every", "3",
]  # fmt: skip


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out and all(line.startswith("PASS") for line in out)


def test_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["op", "max_rel_err"]
    assert all(float(r[1]) < 1e-4 for r in rows[1:])


@pytest.mark.parametrize(
    "argv",
    [[], ["nonsense"], ["hippo"], ["hippo", "dump", "--n", "x"], ["train", "--lr", "0.5"], ["train", "--variant", "mamba"]],
)
def test_usage_errors_exit_one(argv, capsys):
    with pytest.raises(SystemExit) as info:
        code = main(argv)
        raise SystemExit(code)
    assert info.value.code == 1


def test_missing_dataset_exits_two(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "absent.csv")]) == 2


def test_malformed_dataset_exits_two(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a\n1\nzz\n")
    assert main(["train", "--dataset", str(path)]) == 2


def test_missing_checkpoint_exits_two(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 2


def test_hippo_dump_dense(capsys):
    assert main(["hippo", "dump", "--family", "legs", "--n", "4"]) == 0
    text = capsys.readouterr().out
    a_block = text.split("# B")[0].replace("# A", "").strip()
    np.testing.assert_array_equal(parse_matrix(a_block), build_legs(4).A)


def test_hippo_dump_diagonal(capsys):
    assert main(["hippo", "dump", "--family", "legt", "--n", "4", "--form", "diagonal"]) == 0
    lam = parse_matrix(capsys.readouterr().out.split("# V")[0].replace("# lambda", "").strip())
    assert np.max(np.abs(lam.real)) < 1e-9


def test_kernel_dump(capsys):
    assert main(["kernel", "dump", "--family", "legs", "--n", "4", "--length", "10"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["lag", "k"]
    assert [int(r[0]) for r in rows[1:]] == list(range(10))


def test_reconstruct_writes_files(tmp_path, capsys):
    out, trace = tmp_path / "r.csv", tmp_path / "t.csv"
    argv = ["reconstruct", "--family", "legp", "--n", "8", "--scales", "2", "--seed", "7", "--length", "5000",
            "--dt", "1e-3", "--out", str(out), "--trace", str(trace)]  # fmt: skip
    assert main(argv) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["family", "N", "seed", "mse"] and rows[1][:3] == ["legp", "8", "7"]
    assert out.read_text().startswith("# timessm-v1 reconstruct")
    assert len(trace.read_text().splitlines()) == 2 + 1000


def test_train_eval_predict_round_trip(tmp_path, capsys):
    ckpt, metrics_path, preds = tmp_path / "m.ckpt", tmp_path / "m.csv", tmp_path / "p.csv"
    assert main(["train", *TRAIN_FLAGS, "--checkpoint", str(ckpt), "--metrics", str(metrics_path)]) == 0
    trained = capsys.readouterr().out
    assert "test_mse=" in trained
    assert len(metrics_path.read_text().splitlines()) == 2 + 2

    assert main(["eval", "--checkpoint", str(ckpt)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "dataset,variant,horizon,mse,mae"
    name, variant, horizon, mse, _ = lines[1].split(",")
    assert (name, variant, horizon) == ("sine", "s4d-real", "8")
    assert float(mse) == pytest.approx(float(trained.split("test_mse=")[1].split()[0]), abs=1e-3)

    assert main(["predict", "--checkpoint", str(ckpt), "--out", str(preds)]) == 0
    rows = preds.read_text().splitlines()
    assert rows[0] == "# timessm-v1 predictions" and rows[1] == "window,step,c0,c1"


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"horizon": 16, "variant": "legs-complex", "lr": 5e-4}))
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", *TRAIN_FLAGS, "--config", str(cfg), "--checkpoint", str(ckpt)]) == 0
    meta = json.loads(ckpt.read_text().splitlines()[1].split(" ", 1)[1])
    assert meta["config"]["horizon"] == 8
    assert meta["config"]["variant"] == "legs-complex"
    assert meta["run"]["lr"] == 5e-4


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hidden": 3}))
    assert main(["train", "--config", str(cfg)]) == 1
