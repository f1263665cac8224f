import numpy as np
import pytest

from satmamba.harness.cli import main, parse_config_file
from satmamba.harness.data import read_tensor


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def tiny_config_file(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("""
# tiny desk variant
model.enc_dim = 32
model.enc_depth = 1
model.dec_dim = 16
model.dec_depth = 1
model.state_dim = 4
model.head_dim = 16
train.epochs = 2
train.batch_size = 4
train.warmup_epochs = 1
train.base_lr = 0.001
train.val_fraction = 0.25
""")
    return cfg


def test_config_file_parsing(tiny_config_file):
    model_kw, train_kw = parse_config_file(tiny_config_file)
    assert model_kw["enc_dim"] == 32
    assert train_kw["epochs"] == 2
    assert train_kw["base_lr"] == 0.001


def test_config_file_rejects_unknown_key(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("model.bogus = 1\n")
    assert run(["params", "--config", bad]) == 1


def test_gen_pretrain_predict_pipeline(tmp_path, tiny_config_file):
    corpus_dir = tmp_path / "corpus"
    assert run(["gen", "--kind", "pretrain", "--n", "6", "--size", "32",
                "--seed", "1", "--out", corpus_dir]) == 0
    out = tmp_path / "run"
    assert run(["pretrain", "--corpus", corpus_dir, "--config",
                tiny_config_file, "--seed", "0", "--out", out]) == 0
    assert (out / "metrics.csv").exists()
    assert (out / "ckpt_best.smck").exists()

    seg_dir = tmp_path / "seg"
    assert run(["gen", "--kind", "segmentation", "--n", "8", "--size", "32",
                "--seed", "2", "--out", seg_dir]) == 0
    ft = tmp_path / "ft"
    assert run(["finetune-seg", "--corpus", seg_dir, "--ckpt",
                out / "ckpt_best.smck", "--config", tiny_config_file,
                "--seed", "0", "--out", ft, "--no-tta"]) == 0
    assert (ft / "model.smck").exists()

    pred = tmp_path / "pred"
    assert run(["predict", "--ckpt", ft / "model.smck", "--corpus", seg_dir,
                "--index", "0", "--out", pred]) == 0
    class_map = read_tensor(pred / "pred_0000.smtn")
    assert class_map.shape == (32, 32)
    assert set(np.unique(class_map).astype(int).tolist()) <= {0, 1, 2, 3}


def test_finetune_cd_cli(tmp_path, tiny_config_file):
    cd_dir = tmp_path / "cd"
    assert run(["gen", "--kind", "change", "--n", "6", "--size", "32",
                "--seed", "3", "--out", cd_dir]) == 0
    out = tmp_path / "cdrun"
    assert run(["finetune-cd", "--corpus", cd_dir, "--config",
                tiny_config_file, "--seed", "0", "--out", out,
                "--no-tta"]) == 0
    pred = tmp_path / "cdpred"
    assert run(["predict", "--ckpt", out / "model.smck", "--corpus", cd_dir,
                "--index", "1", "--out", pred]) == 0
    assert (pred / "loc_0001.smtn").exists()
    assert (pred / "damage_0001.smtn").exists()


def test_benchmark_cli(tmp_path):
    out = tmp_path / "bench"
    assert run(["benchmark", "--sizes", "32,64", "--repeats", "1",
                "--kernel-lengths", "64,128", "--out", out]) == 0
    assert (out / "benchmark.csv").exists()
    assert (out / "benchmark_flops.svg").exists()
    assert (out / "kernels.csv").exists()
    svg = (out / "benchmark_flops.svg").read_text()
    assert svg.startswith("<svg") and svg.endswith("</svg>")


def test_params_and_flops_cli(capsys):
    assert run(["params", "--arch", "base"]) == 0
    out = capsys.readouterr().out
    assert "total" in out and "ratio" in out
    assert run(["flops", "--arch", "base", "--size", "224"]) == 0
    out = capsys.readouterr().out
    assert "FLOPs" in out


def test_missing_corpus_is_an_error(tmp_path):
    assert run(["pretrain", "--corpus", tmp_path / "nope", "--out",
                tmp_path / "o"]) == 1


def test_bad_direction_set_is_an_error(tmp_path):
    corpus_dir = tmp_path / "c"
    run(["gen", "--kind", "pretrain", "--n", "2", "--size", "32", "--out",
         corpus_dir])
    assert run(["ablate", "--corpus", corpus_dir, "--sets", "diag",
                "--seeds", "0", "--out", tmp_path / "a"]) == 1
