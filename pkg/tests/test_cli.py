import csv

import numpy as np
import pytest
from PIL import Image

from samdaq.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


TINY = ["--set", "input_size=32", "--set", "stage_channels=4,8,12,16", "--set", "stage_heads=1,1,1,1",
        "--set", "fpn_width=8", "--set", "adapter_rank=2", "--set", "num_frame_queries=3",
        "--set", "num_video_queries=2", "--set", "query_hidden_dim=8", "--set", "clip_length=2"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["gen-data", "--seed", "1", "--videos", "2", "--frames", "3", "--size", "32", "--out", str(out)]) == 0
    return out


def test_gen_data(data_dir):
    assert sorted(p.name for p in data_dir.iterdir()) == ["video_000", "video_001"]


def test_train_predict_eval(data_dir, tmp_path, capsys):
    run_dir = tmp_path / "run"
    code, out, _ = run(["train", *TINY, "--set", "iterations=3", "--set", f"data_root={data_dir}",
                        "--out", str(run_dir), "--log-every", "0"], capsys)
    assert code == 0 and "checkpoint" in out
    assert (run_dir / "loss.png").exists() and (run_dir / "config.txt").exists()

    code, out, _ = run(["predict", "--ckpt", str(run_dir / "model.pt"),
                        "--video", str(data_dir / "video_000"), "--out", str(tmp_path / "pred")], capsys)
    assert code == 0 and "wrote 3 masks" in out

    code, out, _ = run(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(data_dir / "video_000" / "GT"),
                        "--out", str(tmp_path / "res.csv")], capsys)
    assert code == 0 and "E_xi" in out
    assert (tmp_path / "res.md").exists() and (tmp_path / "res.png").exists()
    rows = list(csv.reader(open(tmp_path / "res.csv")))
    assert rows[-1][0] == "mean" and len(rows) == 5


def test_config_file(data_dir, tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("\n".join(a.split("=", 1)[0] + " = " + a.split("=", 1)[1] for a in TINY[1::2])
                   + f"\niterations = 1\ndata_root = {data_dir}\n", encoding="utf-8")
    code, _, err = run(["train", "--config", str(cfg), "--out", str(tmp_path / "r")], capsys)
    assert code == 0, err


def test_eval_missing_prediction_error(tmp_path, capsys):
    (tmp_path / "gt").mkdir()
    (tmp_path / "pred").mkdir()
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "gt" / "00003.png")
    code, _, err = run(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt")], capsys)
    assert code == 1
    assert err.count("\n") == 1 and err.startswith("daq: error: MissingFrameError:") and "00003" in err


def test_bad_config_error(capsys):
    code, _, err = run(["bench-memory", "--set", "peft=prefix"], capsys)
    assert code == 1 and err.startswith("daq: error: ConfigError:")
    code, _, err = run(["train", "--set", "nonsense"], capsys)
    assert code == 1 and "key=value" in err


def test_bench_memory_csv(tmp_path, capsys):
    code, out, _ = run(["bench-memory", *TINY, "--out", str(tmp_path / "mem.csv")], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "variant,trainable,total,peak_bytes"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["parallel", "sequential", "lora"]
    assert (tmp_path / "mem.csv").exists() and (tmp_path / "mem.png").exists()


@pytest.mark.parametrize("axis,rows", [
    ("update_strategy", ["none", "sam2_bank", "multiply", "addition"]),
    ("hidden_dim", ["32", "64", "128", "256"]),
])
def test_ablate_rows(axis, rows, data_dir, tmp_path, capsys):
    code, out, err = run(["ablate", "--axis", axis, *TINY, "--set", "iterations=1",
                          "--set", f"data_root={data_dir}", "--out", str(tmp_path)], capsys)
    assert code == 0, err
    body = [ln for ln in out.splitlines() if ln.startswith("| ")][1:]
    assert [ln.split("|")[1].strip() for ln in body] == rows
    assert (tmp_path / f"ablation_{axis}.csv").exists() and (tmp_path / f"ablation_{axis}.png").exists()


def test_unknown_axis(capsys):
    code, _, err = run(["ablate", "--axis", "colour"], capsys)
    assert code == 1 and "unknown ablation axis" in err
