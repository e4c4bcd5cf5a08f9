import json

import numpy as np
import pytest
from PIL import Image

from adgs.cli import main
from adgs.config import ConfigError, RunConfig, override, parse_config, serialize_config
from adgs.tensorio import read_tensor


# ------------------------------------------------------------------ config


def test_defaults_round_trip():
    text = serialize_config(RunConfig())
    assert parse_config(text) == RunConfig()
    assert serialize_config(parse_config(text)) == text


def test_values_are_typed_and_applied():
    cfg = parse_config("[train]\nmode = ema-gs\niterations = 300\nmip = false\n"
                       "[loss]\nlambda_m = 0.25\n[ema]\nbeta = 0.5\n[scene]\nwidth = 48\n")
    assert cfg.train.mode == "ema-gs" and cfg.train.iterations == 300 and cfg.train.mip is False
    assert cfg.train.lambda_m == 0.25 and cfg.train.beta == 0.5 and cfg.scene.width == 48
    assert parse_config(serialize_config(cfg)) == cfg


@pytest.mark.parametrize("text,word", [
    ("[loss]\nlamda_m = 0.1\n", "lamda_m"),
    ("[train]\nlambda_m = 0.1\n", "lambda_m"),     # right key, wrong section
    ("[optim]\nlr = 1\n", "optim"),
    ("[train]\niterations = many\n", "iterations"),
    ("[train]\nmode = triple\n", "mode"),
    ("[mask]\nmasks = both\n", "masks"),
])
def test_bad_config_is_rejected_by_name(text, word):
    with pytest.raises(ConfigError, match=word):
        parse_config(text)


def test_overrides_ignore_unset_flags():
    cfg = parse_config("[train]\nseed = 4\niterations = 50\nwarmup = 5\n")
    out = override(cfg, seed=None, iterations=70, mode="gs-gs", seed2=9)
    assert (out.train.seed, out.train.iterations, out.train.mode, out.train.seed2) == (4, 70, "gs-gs", 9)
    with pytest.raises(ConfigError):
        override(cfg, warmup=100)


# --------------------------------------------------------------------- cli


def write_config(path, data, **train):
    lines = ["[train]", f"data = {data}", "iterations = 40", "warmup = 5"]
    lines += [f"{k} = {v}" for k, v in train.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_unknown_key_exits_with_usage_error(tmp_path, tiny_dataset, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(f"[train]\ndata = {tiny_dataset}\n[loss]\nlamda_m = 0.1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "run")]) == 1
    assert "lamda_m" in capsys.readouterr().err


def test_missing_data_is_a_usage_error(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "run")]) == 1
    assert "dataset" in capsys.readouterr().err


def test_runtime_failure_exit_code(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.adgs"), "--data", str(tmp_path)]) == 2
    assert "runtime error" in capsys.readouterr().err


def test_gen_writes_dataset_and_resolved_config(tmp_path):
    spec = tmp_path / "scene.ini"
    spec.write_text("[scene]\nwidth = 24\nheight = 16\nn_gaussians = 5\nn_train_views = 3\nn_test_views = 1\n")
    out = tmp_path / "data"
    assert main(["gen", "--spec", str(spec), "--seed", "9", "--ratio", "0.1", "--out", str(out)]) == 0
    cfg = parse_config((out / "config.resolved").read_text())
    assert (cfg.scene.seed, cfg.scene.distractor_ratio, cfg.scene.width) == (9, 0.1, 24)
    assert np.asarray(Image.open(out / "images" / "train_000.png")).shape == (16, 24, 3)


@pytest.fixture(scope="module")
def ema_run(tiny_dataset, tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_config(base / "run.ini", tiny_dataset, mode="single")
    out = base / "run"
    assert main(["train", "--config", str(cfg), "--mode", "ema-gs", "--seed", "3", "--out", str(out)]) == 0
    return base, out


def test_train_resolves_flags_over_file(ema_run):
    _, out = ema_run
    cfg = parse_config((out / "config.resolved").read_text())
    assert cfg.train.mode == "ema-gs" and cfg.train.seed == 3 and cfg.train.iterations == 40


def test_train_writes_results_and_report(ema_run):
    _, out = ema_run
    res = json.loads((out / "results.json").read_text())
    assert res["iteration"] == 40 and "ema_metrics" in res
    assert np.isfinite(res["metrics"]["mean_psnr"])
    for name in ("final.adgs", "runlog.jsonl", "losses.csv", "losses.png", "results.csv", "metrics.png"):
        assert (out / name).stat().st_size > 0
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "view,psnr,ssim"
    with Image.open(out / "losses.png") as im:
        assert im.format == "PNG"


def test_training_twice_gives_identical_results(ema_run, tiny_dataset):
    base, out = ema_run
    again = base / "again"
    assert main(["train", "--config", str(base / "run.ini"), "--mode", "ema-gs", "--seed", "3",
                 "--out", str(again)]) == 0
    assert (out / "results.json").read_bytes() == (again / "results.json").read_bytes()
    assert (out / "final.adgs").read_bytes() == (again / "final.adgs").read_bytes()


def test_stop_and_resume_match_straight_run(ema_run, tiny_dataset):
    base, out = ema_run
    part = base / "part"
    args = ["train", "--config", str(base / "run.ini"), "--mode", "ema-gs", "--seed", "3", "--out", str(part)]
    assert main(args + ["--stop-at", "20"]) == 0
    assert not (part / "results.json").exists()
    assert main(args + ["--resume", str(part / "checkpoint.adgs")]) == 0
    assert (out / "results.json").read_bytes() == (part / "results.json").read_bytes()


def test_eval_render_mask_and_report(ema_run, tiny_dataset, tmp_path, capsys):
    _, out = ema_run
    ckpt = str(out / "final.adgs")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tiny_dataset), "--out", str(tmp_path / "ev")]) == 0
    first = json.loads((out / "results.json").read_text())["metrics"]
    again = json.loads((tmp_path / "ev" / "results.json").read_text())["metrics"]
    assert again == first
    assert "mean" in capsys.readouterr().out
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tiny_dataset), "--ema", "--out",
                 str(tmp_path / "ev2")]) == 0

    png = tmp_path / "r.png"
    assert main(["render", "--checkpoint", ckpt, "--data", str(tiny_dataset), "--camera", "1", "--out",
                 str(png)]) == 0
    assert np.asarray(Image.open(png)).shape == (32, 32, 3)
    assert main(["render", "--checkpoint", ckpt, "--data", str(tiny_dataset), "--camera", "9", "--out",
                 str(png)]) == 1
    assert main(["render", "--checkpoint", ckpt, "--data", str(tiny_dataset), "--camera", "0",
                 "--mode", "appearance", "--out", str(png)]) == 1

    masks = tmp_path / "masks"
    assert main(["mask", "--checkpoint", ckpt, "--data", str(tiny_dataset), "--view", "2", "--out",
                 str(masks)]) == 0
    hard = read_tensor(masks / "train_002.hard.ten")
    soft = read_tensor(masks / "train_002.soft.ten")
    assert hard.shape == soft.shape == (32, 32)
    assert set(np.unique(hard)) <= {0.0, 1.0} and soft.min() >= 0 and soft.max() <= 1
    assert (masks / "train_002.masks.png").exists()

    assert main(["report", "--run", str(out)]) == 0
    assert main(["report", "--run", str(tmp_path / "empty")]) == 1
