from __future__ import annotations

import json

import numpy as np
import pytest

from saslab.checkpoint import (
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
)
from saslab.tensor import Tensor


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "emb": Tensor(rng.normal(size=(7, 3)), requires_grad=True),
        "bias": Tensor(rng.normal(size=4)),
        "opt.m.emb": rng.normal(size=(7, 3)),
    }
    path = save_checkpoint(tmp_path, 42, tensors, rng_state={"run_seed": 1, "next_step": 42})
    ck = load_checkpoint(path)
    assert ck.step == 42
    assert ck.rng_state == {"run_seed": 1, "next_step": 42}
    for name, t in tensors.items():
        want = t.data if isinstance(t, Tensor) else t
        got = ck.arrays[name]
        assert got.shape == want.shape
        assert np.array_equal(got, want)
        assert got.tobytes() == want.tobytes()


def test_manifest_layout(tmp_path):
    tensors = {"a": np.zeros((2, 2)), "b": np.ones(3)}
    path = save_checkpoint(tmp_path, 7, tensors)
    doc = json.loads(path.read_text())
    assert doc["byte_order"] == "little"
    assert doc["step"] == 7
    names = [e["name"] for e in doc["tensors"]]
    assert names == ["a", "b"]
    assert doc["tensors"][0]["offset"] == 0
    assert doc["tensors"][1]["offset"] == 2 * 2 * 8
    assert doc["tensors"][0]["shape"] == [2, 2]


def test_rejects_foreign_manifest(tmp_path):
    bogus = tmp_path / "x.json"
    bogus.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_checkpoint(bogus)


def test_digest_tracks_content(tmp_path):
    a = save_checkpoint(tmp_path / "a", 0, {"w": np.zeros(4)})
    b = save_checkpoint(tmp_path / "b", 0, {"w": np.zeros(4)})
    c = save_checkpoint(tmp_path / "c", 0, {"w": np.ones(4)})
    assert checkpoint_digest(a) == checkpoint_digest(b)
    assert checkpoint_digest(a) != checkpoint_digest(c)


def test_float32_payload(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = save_checkpoint(tmp_path, 1, {"w": arr})
    ck = load_checkpoint(path)
    assert ck.arrays["w"].dtype == np.float32
    assert np.array_equal(ck.arrays["w"], arr)
