import json
import re

import pytest
import yaml

from irguide.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, build_parser, main
from irguide.config import load_config, parse_config
from irguide.errors import ConfigError

TINY = {
    "seed": 3,
    "train": {"iterations": 20, "crop": 16, "finetune_iterations": 4},
    "dataset": {"n_train": 4, "n_test": 2, "size": 32},
    "sampler": {"num_steps": 5},
    "perceptual": {"channels": [4, 4]},
    "guidance": [{"type": "visual", "rho": 300.0}, {"type": "perceptual", "rho": 1e5},
                 {"type": "data_fidelity", "rho": 1e3}],
}


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_defaults_and_digest():
    a, b = parse_config({}), parse_config(None)
    assert a.digest() == b.digest()
    assert a.with_overrides(seed=4).digest() != a.digest()
    assert a.with_overrides(output_dir="x").output_dir == "x"
    assert a.with_overrides() is a


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"train": {"iterations": 10, "extra": 2}},
    {"sampler": {"eta": 1.5}},
    {"guidance": [{"type": "visual", "rho": -1}]},
    {"guidance": [{"type": "visual", "rho": 1}, {"type": "visual", "rho": 2}]},
    {"guidance": [{"type": "color", "rho": 1}]},
    {"dataset": {"source": "directory", "train_dir": "/nonexistent", "test_dir": "/nonexistent"}},
    {"dataset": {"size": 30}},
    {"sampler": {"num_steps": 2000}},
    {"sampler": {"start_t": 1001}},
    {"schedule": {"beta_min": 0.1, "beta_max": 0.01}},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_load_yaml(tmp_path):
    cfg = load_config(write(tmp_path, TINY))
    assert cfg.seed == 3 and [g.type for g in cfg.guidance] == ["visual", "perceptual", "data_fidelity"]
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "list.yaml"))
    (tmp_path / "broken.yaml").write_text("a: [1,\n")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "broken.yaml"))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


def test_help_and_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args(["--help"])
    assert e.value.code == 0
    assert "verify" in capsys.readouterr().out
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["sr", "--config", "x.yaml"])  # missing --checkpoint
    assert e.value.code == EXIT_USAGE


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "none.yaml")]) == EXIT_USAGE
    assert main(["train", "--config", write(tmp_path, {"nope": 1})]) == EXIT_USAGE
    assert "config error" in capsys.readouterr().err


def test_cli_train_sr_ablate(tmp_path, capsys):
    cfg = write(tmp_path, TINY)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out / "train")]) == EXIT_OK
    ckpt = out / "train" / "checkpoint.npz"
    assert ckpt.exists()
    assert main(["sr", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(out / "sr"),
                 "--trajectories"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "visual+perceptual+data_fidelity" in text and "bicubic" in text
    assert (out / "sr" / "trajectory.jsonl").exists()
    man = json.loads((out / "sr" / "manifest.json").read_text())
    assert man["command"] == "sr" and man["seed"] == 3
    assert main(["ablate", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(out / "ab")]) == EXIT_OK
    # corrupt checkpoint -> exit 2
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"xx")
    assert main(["sr", "--config", cfg, "--checkpoint", str(bad), "--out", str(out / "x")]) == EXIT_USAGE


def test_cli_sr_with_directories(tmp_path):
    import numpy as np

    from irguide.files import write_image
    cfg = write(tmp_path, TINY)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "t")]) == EXIT_OK
    lr_dir, hr_dir = tmp_path / "lr", tmp_path / "hr"
    lr_dir.mkdir(), hr_dir.mkdir()
    r = np.random.default_rng(0)
    for i in range(2):
        write_image(r.uniform(size=(8, 8)), lr_dir / f"{i}.pgm")
        write_image(r.uniform(size=(32, 32)), hr_dir / f"{i}.pgm")
    ck = str(tmp_path / "t" / "checkpoint.npz")
    assert main(["sr", "--config", cfg, "--checkpoint", ck, "--lr-dir", str(lr_dir),
                 "--hr-dir", str(hr_dir), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert len(list((tmp_path / "o" / "sr").glob("*.pgm"))) == 2
    assert main(["sr", "--config", cfg, "--checkpoint", ck, "--hr-dir", str(hr_dir)]) == EXIT_USAGE
    assert main(["sr", "--config", cfg, "--checkpoint", ck, "--lr-dir", str(tmp_path / "empty")]) == EXIT_USAGE


def test_verify_quick_exit_codes(tmp_path, monkeypatch, capsys):
    import irguide.verify as V
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report and all(r["passed"] for r in report)
    bad = V.Check("broken", lambda: V.CheckResult("", False, "forced"))
    monkeypatch.setattr(V, "quick_checks", lambda: [bad])
    assert main(["verify"]) == EXIT_FAIL
    assert re.search(r"^FAIL\s+broken", capsys.readouterr().out, re.M)


def test_shipped_configs_load():
    from pathlib import Path

    from irguide.verify import toy_config
    root = Path(__file__).resolve().parents[1] / "configs"
    toy = load_config(str(root / "toy_sr.yaml"))
    assert toy.model_dump() == toy_config("runs/toy_sr").model_dump()
    load_config(str(root / "smoke.yaml"))
