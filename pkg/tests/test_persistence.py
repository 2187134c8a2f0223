"""Checkpoint container format: bit-exact round-trips and error contracts."""

import numpy as np
import pytest

from facedyn.engine.checkpoint import load_state, save_state
from facedyn.engine.nn import Linear, Module


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    state = {
        "a.weight": rng.normal(size=(4, 3)).astype(np.float32),
        "a.bias": rng.normal(size=4).astype(np.float32),
        "deep.nested.scale": np.array([1.5], dtype=np.float32),
    }
    path = tmp_path / "model.fct"
    save_state(path, state)
    loaded = load_state(path)
    assert set(loaded) == set(state)
    for name in state:
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], state[name])
        assert loaded[name].tobytes() == state[name].tobytes()


def test_save_load_save_identical_bytes(tmp_path):
    rng = np.random.default_rng(1)
    state = {"w": rng.normal(size=(7, 2)).astype(np.float32)}
    p1, p2 = tmp_path / "one.fct", tmp_path / "two.fct"
    save_state(p1, state)
    save_state(p2, load_state(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.fct"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_state(path)


def test_truncated_file_rejected(tmp_path):
    state = {"w": np.ones((3, 3), dtype=np.float32)}
    path = tmp_path / "trunc.fct"
    save_state(path, state)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(ValueError, match="truncat"):
        load_state(path)


def test_trailing_bytes_rejected(tmp_path):
    state = {"w": np.ones(2, dtype=np.float32)}
    path = tmp_path / "extra.fct"
    save_state(path, state)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(ValueError, match="trailing"):
        load_state(path)


class TwoLayer(Module):
    def __init__(self):
        super().__init__()
        self.fc1 = Linear(4, 6)
        self.fc2 = Linear(6, 2)

    def forward(self, x):
        return self.fc2(self.fc1(x))


def test_module_state_dict_round_trip(tmp_path):
    m = TwoLayer()
    m.initialize(seed=11)
    path = tmp_path / "two_layer.fct"
    save_state(path, m.state_dict())

    fresh = TwoLayer()
    fresh.initialize(seed=99)  # different init, fully replaced by load
    fresh.load_state_dict(load_state(path))
    for (name, p), (_, q) in zip(m.named_parameters(), fresh.named_parameters()):
        assert np.array_equal(p.data, q.data), name


def test_load_state_dict_shape_mismatch():
    m = TwoLayer()
    m.initialize(seed=0)
    state = m.state_dict()
    state["fc1.weight"] = np.zeros((3, 3), dtype=np.float32)
    fresh = TwoLayer()
    fresh.initialize(seed=0)
    with pytest.raises(ValueError, match="shape"):
        fresh.load_state_dict(state)


def test_load_state_dict_missing_key():
    m = TwoLayer()
    m.initialize(seed=0)
    state = m.state_dict()
    del state["fc2.bias"]
    fresh = TwoLayer()
    fresh.initialize(seed=0)
    with pytest.raises(ValueError, match="missing"):
        fresh.load_state_dict(state)


def test_parameter_names_unique_and_pathlike():
    m = TwoLayer()
    m.initialize(seed=3)
    names = [name for name, _ in m.named_parameters()]
    assert len(names) == len(set(names))
    assert "fc1.weight" in names and "fc2.bias" in names
