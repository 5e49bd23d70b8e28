import numpy as np
import pytest

from retinervenet import autodiff as ad
from retinervenet.errors import ConfigError, UsageError

from helpers import FD_TOL, analytic, check_all_entries, store


def test_linear_gradient():
    p = store(p=[2.0])
    loss, g = analytic(lambda t: ad.scale(ad.reshape(t.param("p"), ()), 3.0), p)
    assert loss == 6.0
    assert g["p"].tolist() == [3.0]


def test_inactive_relu_has_zero_gradient():
    for v in (-1.0, 0.0):
        p = store(p=[v])
        _, g = analytic(lambda t: ad.reshape(ad.relu(t.param("p")), ()), p)
        assert g["p"].tolist() == [0.0]


def test_non_scalar_terminal_rejected():
    tape = ad.Tape(store(p=[1.0, 2.0]))
    with pytest.raises(UsageError):
        ad.backward(tape, ad.relu(tape.param("p")))


def test_foreign_tape_rejected():
    p = store(p=[1.0])
    t1, t2 = ad.Tape(p), ad.Tape(p)
    loss = ad.reshape(t1.param("p"), ())
    with pytest.raises(UsageError):
        ad.backward(t2, loss)


def test_untouched_parameter_gets_zero():
    p = store(a=[1.0, 2.0], b=np.ones((2, 3)))
    _, g = analytic(lambda t: ad.weighted_sse(t.param("a"), np.zeros(2), np.ones(2)), p)
    assert np.array_equal(g["b"], np.zeros((2, 3)))
    assert np.array_equal(g["a"], [2.0, 4.0])


def test_replay_visits_ops_in_reverse():
    rng = np.random.default_rng(0)
    p = store(w=rng.normal(size=(2, 1, 3)), b=np.zeros(2))
    tape = ad.Tape(p)
    x = tape.constant(rng.normal(size=(1, 1, 8)))
    h = ad.conv1d(x, tape.param("w"), tape.param("b"), 1, 1, "relu")
    h = ad.maxpool1d(h, 2)
    h = ad.reshape(h, (1, 8))
    loss = ad.weighted_sse(h, np.zeros((1, 8)), np.ones(1))
    seen = []
    ad.backward(tape, loss, on_visit=seen.append)
    assert seen == tape.recorded_order()[::-1]
    assert len(seen) == 4


def test_shared_parameter_gradients_add():
    # the same Var used twice: d/dp (p*2 + p*3) = 5
    p = store(p=[1.5])
    def f(t):
        v = t.param("p")
        return ad.reshape(ad.add(ad.scale(v, 2.0), ad.scale(v, 3.0)), ())
    _, g = analytic(f, p)
    assert g["p"].tolist() == [5.0]


def test_conv_shape_errors():
    tape = ad.Tape(store(w=np.ones((2, 3, 3)), b=np.zeros(2)))
    x = tape.constant(np.ones((1, 2, 8)))
    with pytest.raises(ConfigError, match="channels"):
        ad.conv1d(x, tape.param("w"), tape.param("b"))
    x = tape.constant(np.ones((1, 3, 2)))
    with pytest.raises(ConfigError):
        ad.conv1d(x, tape.param("w"), tape.param("b"))


def test_maxpool_requires_divisible_length():
    tape = ad.Tape()
    with pytest.raises(ConfigError):
        ad.maxpool1d(tape.constant(np.ones((1, 1, 5))), 2)


def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(3)
    p = store(w=rng.normal(size=(4, 2, 5)), b=rng.normal(size=4))
    x = rng.normal(size=(3, 2, 20))

    def f(t):
        h = ad.conv1d(t.constant(x), t.param("w"), t.param("b"), 2, 2, "relu")
        return ad.weighted_sse(ad.reshape(h, (3, -1)), np.zeros((3, 40)), np.ones(3))

    a = analytic(f, p)
    b = analytic(f, p)
    assert a[0] == b[0]
    assert all(np.array_equal(a[1][k], b[1][k]) for k in p.keys())


def test_dense_and_take_gradients():
    rng = np.random.default_rng(4)
    p = store(w=rng.normal(size=(5, 6)), b=rng.normal(size=5))
    x = rng.normal(size=(3, 6))
    idx = np.array([4, 0, 0, 2])

    def f(t):
        h = ad.dense(t.constant(x), t.param("w"), t.param("b"), "relu")
        h = ad.take(h, idx)
        return ad.weighted_sse(h, np.ones((3, 4)), np.arange(1.0, 4.0), np.arange(1.0, 5.0))

    assert check_all_entries(f, p) <= FD_TOL


def test_split_concat_transpose_gradients():
    rng = np.random.default_rng(5)
    p = store(a=rng.normal(size=(2, 6)))

    def f(t):
        left, right = ad.split(t.param("a"), 2, axis=1)
        j = ad.concat([right, ad.scale(left, 2.0)], axis=0)          # (4, 3)
        j = ad.transpose(ad.reshape(j, (2, 2, 3)), (1, 0, 2))
        return ad.weighted_sse(ad.reshape(j, (4, 3)), np.zeros((4, 3)), np.ones(4))

    assert check_all_entries(f, p) <= FD_TOL
