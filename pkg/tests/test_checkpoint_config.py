import json

import numpy as np
import pytest
import torch

from panoda.checkpoint import load_archive, load_segnet, save_archive, save_segnet
from panoda.datapipe import CITYSCAPES
from panoda.segnet import SegNet
from panoda.trainer.config import DEFAULTS, ConfigError, apply_overrides, load_config, resolve


def test_archive_round_trip(tmp_path):
    state = {"a": torch.arange(6.0).reshape(2, 3), "b": {0: np.ones(3), "x": [1, 2.5, None, "s"]},
             "t": (torch.tensor([1], dtype=torch.int64), True)}
    save_archive(tmp_path / "s.ckpt", state, {"note": "x"})
    back, header = load_archive(tmp_path / "s.ckpt")
    assert header == {"note": "x"}
    assert torch.equal(back["a"], state["a"]) and back["a"].dtype == torch.float32
    assert np.array_equal(back["b"][0], np.ones(3)) and back["b"]["x"] == [1, 2.5, None, "s"]
    assert isinstance(back["t"], tuple) and back["t"][1] is True


def test_archive_bytes_are_reproducible(tmp_path):
    state = {"w": torch.randn(4, 4)}
    save_archive(tmp_path / "a.ckpt", state)
    save_archive(tmp_path / "b.ckpt", state)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_archive_rejects_foreign_objects(tmp_path):
    with pytest.raises(TypeError):
        save_archive(tmp_path / "x.ckpt", {"f": object()})


def test_segnet_round_trip(tmp_path):
    model = SegNet(channels=(4, 8, 8, 8), head_channels=8).eval()
    save_segnet(tmp_path / "m.ckpt", model, CITYSCAPES.hash())
    back, header = load_segnet(tmp_path / "m.ckpt")
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(model(x)[1].c1, back.eval()(x)[1].c1)
    assert header["class_map"] == CITYSCAPES.hash()


def test_defaults_resolve():
    cfg = resolve()
    assert cfg == json.loads(json.dumps(cfg))
    assert cfg["optim"]["g_lr"] == 1e-5 and cfg["optim"]["d_lr"] == 4e-6
    assert cfg["ssl"]["quantile"] == 0.7 and cfg["schedule"]["max_iter"] == 200000
    assert cfg["lambdas"]["S"]["adv"] == 0.001


def test_overrides_last_wins():
    cfg = resolve({}, ["optim.g_lr=0.1", "optim.g_lr=0.2", "modules.active=[\"S\",\"A\"]"])
    assert cfg["optim"]["g_lr"] == 0.2 and cfg["modules"]["active"] == ["S", "A"]
    assert resolve({}, ["lambdas.S.adv=0.5"])["lambdas"]["S"] == {"seg": 1.0, "adv": 0.5, "d": 1.0}


def test_config_errors_are_collected():
    with pytest.raises(ConfigError) as exc:
        resolve({"optim": {"g_lr": "fast"}, "nope": 1, "model": {"mode": "x"}})
    msg = str(exc.value)
    assert "optim.g_lr" in msg and "unknown key nope" in msg
    with pytest.raises(ConfigError, match="unknown modules"):
        resolve({}, ["modules.active=[\"Q\"]"])
    with pytest.raises(ConfigError, match="non-table"):
        apply_overrides({"seed": 1}, ["seed.x=2"])
    with pytest.raises(ConfigError, match="key=value"):
        resolve({}, ["seed"])
    with pytest.raises(ConfigError, match="placement.R"):
        resolve({"modules": {"placement": {"R": "both"}}})
    with pytest.raises(ConfigError, match="d_window"):
        resolve({"modules": {"d_window": 1}})
    assert resolve({"modules": {"placement": {"S": "both"}}})["modules"]["placement"]["S"] == "both"
    with pytest.raises(ConfigError, match="ssl.gate"):
        resolve({"ssl": {"gate": "pixel"}})
    with pytest.raises(ConfigError, match="class_weights"):
        resolve({"ssl": {"class_weights": "no"}})


def test_load_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5}))
    assert load_config(p, ["seed=6"])["seed"] == 6
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    p.write_text("{bad")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(p)


def test_defaults_not_mutated():
    resolve({}, ["data.synthetic={\"seed\": 3}"])
    assert DEFAULTS["data"]["synthetic"] == {}
