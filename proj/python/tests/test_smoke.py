import json

import pytest

try:
    import _pyprop as pp
except ImportError:  # installed wheel layout
    import pyprop as pp


def tiny_config(tmp_path, seed=5):
    cfg = {
        "task": "imitation",
        "seed": seed,
        "out_dir": str(tmp_path),
        "hidden": [8, 8],
        "encoder_hidden": [16],
        "modulated_layers": [1],
        "key_length": 16,
        "n_demos": 120,
        "horizon": 8,
        "eval_trials": 3,
        "states_per_trial": 8,
        "train": {"epochs": 2, "batch_size": 32, "nk": 2, "k1_count": 2, "epsilon": 1},
        "users": [{"key": "random", "objective_id": 0}],
    }
    return pp.config_from_json(json.dumps(cfg))


def test_key_roundtrip_and_hamming():
    k = pp.Key.random(32, seed=7)
    assert k.length() == 32
    assert pp.Key.from_hex(k.to_hex()) == k
    flipped = k.with_flipped([0, 5])
    assert pp.hamming(k, flipped) == 2
    assert pp.Key.null().is_null()
    p1 = pp.Key.from_passphrase("open sesame", 64)
    p2 = pp.Key.from_passphrase("open sesame", 64)
    assert p1 == p2 and p1.length() == 64


def test_config_fields(tmp_path):
    cfg = tiny_config(tmp_path)
    assert cfg.task == "imitation"
    assert cfg.key_length == 16
    assert len(cfg.user_keys) == 1
    assert len(cfg.config_hash) > 0


def test_personalize_eval_leakage(tmp_path):
    cfg = tiny_config(tmp_path)
    ckpt_path = pp.personalize(cfg)
    ckpt = pp.load_checkpoint(ckpt_path)
    assert ckpt.kind == "prop"
    assert ckpt.key_length == 16

    out = ckpt.forward([0.1, -0.2, 0.3, 0.4], cfg.user_keys[0])
    assert len(out) == 2
    # Same input, same key: identical output.
    assert out == ckpt.forward([0.1, -0.2, 0.3, 0.4], cfg.user_keys[0])

    report = pp.evaluate(cfg, ckpt_path, format="csv")
    classes = {(c["key_class"], c["objective"]) for c in report["cells"]}
    assert ("user", "personalized") in classes
    assert ("null", "general") in classes

    curve = pp.leakage(cfg, ckpt_path)
    assert len(curve) == cfg.key_length + 1
    user_cell = next(
        c for c in report["cells"]
        if c["key_class"] == "user" and c["objective"] == "personalized"
    )
    assert curve[0]["distance"] == 0
    assert curve[0]["mean"] == user_cell["mean"]


def test_determinism(tmp_path):
    cfg = tiny_config(tmp_path, seed=9)
    path1 = pp.personalize(cfg)
    bytes1 = open(path1, "rb").read()
    path2 = pp.personalize(cfg)
    assert path1 == path2
    assert open(path2, "rb").read() == bytes1


def test_gradcheck(tmp_path):
    cfg = tiny_config(tmp_path, seed=3)
    assert pp.gradcheck(cfg, instances=5) < 1e-4
