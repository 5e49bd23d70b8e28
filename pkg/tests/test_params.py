import numpy as np
import pytest

from retinervenet import checkpoint
from retinervenet.errors import DataError, TrainingError
from retinervenet.params import Adam, AdamState, ParameterStore, adam_step


def test_zero_gradient_leaves_parameters():
    p = ParameterStore({"w": np.array([1.0, -2.0])})
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    assert p["w"].tolist() == [1.0, -2.0]


def test_first_step_magnitude():
    p = ParameterStore({"p": np.array([0.0])})
    state = AdamState()
    adam_step(p, {"p": np.array([1.0])}, state, lr=0.1)
    assert state.step == 1
    assert abs(p["p"][0] - (-0.1 / (1 + 1e-8))) < 1e-15


def test_identical_parameters_get_identical_updates():
    p = ParameterStore({"a": np.array([0.3]), "b": np.array([0.3])})
    opt = Adam(lr=0.05)
    for g in (0.7, -0.2, 1.3):
        opt.step(p, {"a": np.array([g]), "b": np.array([g])})
    assert p["a"][0] == p["b"][0]


def test_non_finite_gradient_names_parameter():
    p = ParameterStore({"good": np.zeros(2), "bad": np.zeros(3)})
    with pytest.raises(TrainingError, match="bad"):
        adam_step(p, {"good": np.zeros(2), "bad": np.array([0.0, np.nan, 1.0])}, AdamState())
    # nothing was applied
    assert p["good"].tolist() == [0.0, 0.0]


def test_adam_matches_hand_recurrence():
    rng = np.random.default_rng(2)
    gs = rng.normal(size=5)
    p = ParameterStore({"x": np.array([0.5])})
    state = AdamState()
    x, m, v = 0.5, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        adam_step(p, {"x": np.array([g])}, state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert abs(p["x"][0] - x) < 1e-15


def test_store_counts_and_flat_roundtrip():
    p = ParameterStore()
    p.add("a", np.ones((2, 3)))
    p.add("b", np.arange(4.0))
    assert p.total_count == 10
    flat = p.flat()
    q = p.copy()
    q.load_flat(flat * 2)
    assert np.array_equal(q["b"], np.arange(4.0) * 2)
    assert np.array_equal(p["b"], np.arange(4.0))
    with pytest.raises(Exception):
        p["a"] = np.ones(3)


def test_checkpoint_roundtrip(tmp_path):
    p = ParameterStore({"w": np.random.default_rng(0).normal(size=(3, 2, 5)), "b": np.array([1e-300, -0.0])})
    header = {"kind": "test", "hyper": {"alpha": 0.0}}
    path = tmp_path / "m.ckpt"
    digest = checkpoint.save(path, header, p)
    assert digest == checkpoint.file_sha256(path)
    h2, q = checkpoint.load(path)
    assert h2["kind"] == "test"
    assert list(q.keys()) == ["w", "b"]
    for k in p.keys():
        assert np.array_equal(p[k], q[k])
    # bytes are a pure function of header + values
    assert checkpoint.encode(header, p) == path.read_bytes()


def test_checkpoint_detects_corruption(tmp_path):
    p = ParameterStore({"w": np.arange(6.0)})
    blob = bytearray(checkpoint.encode({"kind": "t"}, p))
    blob[-3] ^= 0xFF
    with pytest.raises(DataError):
        checkpoint.decode(bytes(blob))
    with pytest.raises(DataError):
        checkpoint.decode(b"not a checkpoint")
