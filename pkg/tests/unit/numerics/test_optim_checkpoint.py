import struct

import numpy as np
import pytest

from bunca.autograd import ParameterSet, ShapeError, Tensor
from bunca.checkpoint import (
    CheckpointError,
    dumps,
    load_checkpoint,
    loads,
    read_checkpoint,
    save_checkpoint,
)
from bunca.optim import AdamState, OptimizerError, adam_step, xavier_init


def test_xavier_bounds_and_determinism():
    a = xavier_init(30, 20, seed=3)
    b = xavier_init(30, 20, seed=3)
    bound = np.sqrt(6.0 / 50)
    assert a.shape == (30, 20)
    assert np.all(np.abs(a.values) <= bound)
    assert np.array_equal(a.values, b.values)
    assert a.requires_grad


def test_xavier_rejects_empty():
    with pytest.raises(ShapeError):
        xavier_init(0, 4, seed=0)


def test_adam_first_step_moves_by_lr():
    params = ParameterSet()
    t = params.register("t", Tensor([[1.0, -1.0]]))
    t.grad = np.array([[2.0, -0.5]])
    state = AdamState()
    adam_step(params, state, lr=1e-3)
    # bias-corrected first step is lr * sign(g) up to eps
    assert np.allclose(t.values, [[1.0 - 1e-3, -1.0 + 1e-3]], atol=1e-9)
    assert state.t == 1
    assert t.grad is None


def test_adam_needs_gradients():
    params = ParameterSet()
    params.register("t", Tensor([[1.0]]))
    with pytest.raises(OptimizerError):
        adam_step(params, AdamState(), lr=1e-3)


def _params(rng, d=3):
    params = ParameterSet()
    params.register("T_U", Tensor(rng.normal(size=(4, d))))
    params.register("up.phi", Tensor(rng.normal(size=(1, d))))
    return params


def test_adam_zero_gradients_leave_parameters(rng):
    params = _params(rng)
    before = params.snapshot()
    state = AdamState()
    for _ in range(5):
        for _, t in params.items():
            t.grad = np.zeros_like(t.values)
        adam_step(params, state, lr=1e-1)
    for name, t in params.items():
        assert np.array_equal(t.values, before[name])
    assert state.t == 5


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    params = _params(rng)
    path = save_checkpoint(params, tmp_path / "m.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.names() == ["T_U", "up.phi"]
    for name, t in params.items():
        assert loaded[name].values.tobytes() == t.values.tobytes()


def test_checkpoint_layout():
    blob = dumps({"ab": np.array([[1.0, 2.0]])})
    assert blob[0] == 1
    assert struct.unpack("<I", blob[1:5]) == (1,)
    assert struct.unpack("<H", blob[5:7]) == (2,)
    assert blob[7:9] == b"ab"
    assert struct.unpack("<II", blob[9:17]) == (1, 2)
    assert struct.unpack("<2d", blob[17:]) == (1.0, 2.0)


@pytest.mark.parametrize(
    "mangle, message",
    [
        (lambda b: b"\x07" + b[1:], "version"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b + b"\x00", "trailing"),
    ],
)
def test_corrupt_checkpoint(mangle, message):
    blob = dumps({"x": np.ones((2, 2))})
    with pytest.raises(CheckpointError) as ie:
        loads(mangle(blob))
    assert message in str(ie.value)


def test_load_into_mismatched_shape_names_tensor(tmp_path, rng):
    path = save_checkpoint(_params(rng, d=3), tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError) as ie:
        load_checkpoint(path, _params(rng, d=5))
    assert "T_U" in str(ie.value)


def test_load_rejects_unknown_name(tmp_path, rng):
    path = save_checkpoint(_params(rng), tmp_path / "m.ckpt")
    other = ParameterSet()
    other.register("T_U", Tensor(np.zeros((4, 3))))
    with pytest.raises(CheckpointError) as ie:
        load_checkpoint(path, other)
    assert "up.phi" in str(ie.value)


def test_load_fills_in_place(tmp_path, rng):
    source = _params(rng)
    path = save_checkpoint(source, tmp_path / "m.ckpt")
    target = _params(np.random.default_rng(99))
    load_checkpoint(path, target)
    assert np.array_equal(target["T_U"].values, source["T_U"].values)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "absent.ckpt")
