import csv
import json
import os

import numpy as np
import pytest

from irguide import experiments as E
from irguide.config import parse_config
from irguide.errors import ConfigError, IncompatibleShape, ShapeMismatch
from irguide.files import write_image

from test_config_cli import TINY


def tiny(tmp, **upd):
    data = dict(TINY, output_dir=str(tmp))
    data.update(upd)
    return parse_config(data)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = tiny(tmp_path_factory.mktemp("train"))
    return cfg, E.run_train(cfg)


def rows_of(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_outputs(trained):
    cfg, res = trained
    trace = rows_of(res["loss_trace"])
    assert trace[0] == E.TRACE_COLUMNS
    assert {r[0] for r in trace[1:]} == {"base"}
    assert len(trace) == 1 + cfg.train.iterations
    man = json.load(open(os.path.join(cfg.output_dir, "manifest.json")))
    for key in ("command", "config_sha256", "config", "seed", "csv_version", "versions", "outputs"):
        assert key in man
    assert man["config_sha256"] == cfg.digest()
    assert set(man["outputs"]) == {"checkpoint.npz", "loss_trace.csv"}
    assert np.isfinite(res["initial_loss"]) and np.isfinite(res["final_loss"])


def test_loss_in_training_adds_finetune_stage(tmp_path):
    g = [{"type": "visual", "rho": 1.0, "injection": "loss_in_training"}]
    cfg = tiny(tmp_path, guidance=g)
    res = E.run_train(cfg)
    stages = {r[0] for r in rows_of(res["loss_trace"])[1:]}
    assert stages == {"base", "finetune"}


def test_sr_metrics_and_labels(trained, tmp_path):
    cfg, res = trained
    out = E.run_sr(cfg, res["checkpoint"], out=str(tmp_path))
    rows = rows_of(out["metrics"])
    assert rows[0] == E.METRICS_COLUMNS
    methods = {r[0] for r in rows[1:]}
    assert methods == {"bicubic", "visual+perceptual+data_fidelity"}
    assert sum(r[1] == "mean" for r in rows[1:]) == 2
    assert len(out["images"]) == cfg.dataset.n_test
    plain = cfg.model_copy(update={"guidance": []})
    out2 = E.run_sr(plain, res["checkpoint"], out=str(tmp_path / "u"))
    assert {r["method"] for r in out2["rows"]} == {"bicubic", "unguided"}


def test_sr_is_deterministic(trained, tmp_path):
    cfg, res = trained
    a = E.run_sr(cfg, res["checkpoint"], out=str(tmp_path / "a"))
    b = E.run_sr(cfg, res["checkpoint"], out=str(tmp_path / "b"))
    for pa, pb in zip(a["images"], b["images"]):
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_sr_without_reference(trained, tmp_path):
    cfg, res = trained
    lr = np.random.default_rng(0).uniform(size=(1, 8, 8))
    only_df = cfg.model_copy(update={"guidance": [g for g in cfg.guidance if g.type == "data_fidelity"]})
    out = E.run_sr(only_df, res["checkpoint"], lr_images=lr, out=str(tmp_path))
    assert "metrics" not in out and len(out["images"]) == 1
    with pytest.raises(ConfigError):
        E.run_sr(cfg, res["checkpoint"], lr_images=lr, out=str(tmp_path / "x"))
    with pytest.raises(ShapeMismatch):
        E.run_sr(cfg, res["checkpoint"], lr_images=lr, hr_images=np.zeros((1, 16, 16)),
                 out=str(tmp_path / "y"))


def test_incompatible_checkpoint(trained, tmp_path):
    cfg, res = trained
    other = tiny(tmp_path, model={"channels": 5})
    with pytest.raises(IncompatibleShape):
        E.run_sr(other, res["checkpoint"])


def test_ablation_rows(trained, tmp_path):
    cfg, res = trained
    out = E.run_ablation(cfg, res["checkpoint"], out=str(tmp_path))
    rows = rows_of(out["csv"])
    assert rows[0] == E.ABLATION_COLUMNS
    assert [r[0] for r in rows[1:]] == E.ABLATION_CELLS
    assert {r[1] for r in rows[1:]} == {str(cfg.seed)}
    assert set(out["outcome"]) == {"both_ge_none", "grad_in_noise_ge_loss_in_training"}


def test_read_image_dir(tmp_path):
    with pytest.raises(ConfigError):
        E.read_image_dir(str(tmp_path))
    write_image(np.zeros((4, 4)), tmp_path / "b.pgm")
    write_image(np.ones((4, 4)), tmp_path / "a.pgm")
    stack = E.read_image_dir(str(tmp_path))
    assert stack.shape == (2, 4, 4) and stack[0].max() == 1.0  # sorted by name
    write_image(np.zeros((4, 5)), tmp_path / "c.pgm")
    with pytest.raises(ShapeMismatch):
        E.read_image_dir(str(tmp_path))


def test_directory_dataset(tmp_path):
    for split in ("tr", "te"):
        (tmp_path / split).mkdir()
        for i in range(2):
            write_image(np.random.default_rng(i).uniform(size=(32, 32)), tmp_path / split / f"{i}.pgm")
    cfg = tiny(tmp_path / "o", dataset={"source": "directory", "train_dir": str(tmp_path / "tr"),
                                        "test_dir": str(tmp_path / "te")})
    data = E.load_data(cfg)
    assert data.hr_train.shape == (2, 32, 32) and data.hr_test.shape == (2, 32, 32)


def test_method_label():
    cfg = parse_config(TINY)
    assert E.method_label([]) == "unguided"
    assert E.method_label(cfg.guidance) == "visual+perceptual+data_fidelity"
