import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retinervenet import autodiff as ad
from retinervenet import objective as obj
from retinervenet.errors import ConfigError
from retinervenet.locations import default_table

# one MD value per interval, interval k at index k-1
MD_BY_INTERVAL = (-1.0, -10.0, -20.0, -30.0)


def md_for(counts):
    return np.repeat(MD_BY_INTERVAL, counts)


def test_alpha_zero_is_uniform():
    lam = obj.sample_weights(md_for((5, 1, 0, 3)), 0.0)
    assert np.array_equal(lam, np.full(9, 1 / 9))


def test_alpha_one_uses_interval_term_only():
    lam = obj.sample_weights(md_for((4, 2, 1, 1)), 1.0)
    assert lam.tolist() == [1 / 16] * 4 + [1 / 8] * 2 + [1 / 4, 1 / 4]


def test_alpha_half_hand_value():
    lam = obj.sample_weights(md_for((4, 2, 1, 1)), 0.5)
    assert lam[0] == pytest.approx(0.09375, abs=1e-15)
    assert lam.sum() == pytest.approx(1.0, abs=1e-15)


def test_empty_interval_with_alpha_rejected():
    with pytest.raises(ConfigError):
        obj.sample_weights(md_for((4, 0, 1, 1)), 0.1)
    with pytest.raises(ConfigError):
        obj.sample_weights(md_for((4, 1, 1, 1)), 1.5)


def test_explicit_counts():
    lam = obj.sample_weights([-1.0, -30.0], 1.0, counts=(10, 5, 5, 2))
    assert lam.tolist() == [1 / 40, 1 / 8]


def test_location_weights_limits_and_symmetry():
    t = default_table()
    rho = obj.location_weights(t.distances, 1e6)
    assert np.allclose(rho, 1 / 52, rtol=0, atol=1e-9)
    rho = obj.location_weights(t.distances, 5.0)
    d = np.round(t.distances, 9)
    for v in np.unique(d):
        assert np.ptp(rho[d == v]) < 1e-15
    with pytest.raises(ConfigError):
        obj.location_weights(t.distances, 0.0)


def test_location_weight_ratio_hand_value():
    t = default_table()
    rho = obj.location_weights(t.distances, 5.0)
    i = int(np.argmin(t.distances))
    j = int(np.argmax(t.distances))
    assert t.distances[i] == pytest.approx(np.sqrt(0.5))
    assert t.distances[j] == pytest.approx(np.hypot(4.5, 0.5))
    want = np.exp((t.distances[j] ** 2 - t.distances[i] ** 2) / 50.0)
    assert rho[i] / rho[j] == pytest.approx(want, rel=1e-12)
    assert rho[i] / rho[j] == pytest.approx(1.49, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 100.0), st.integers(0, 2**31 - 1))
def test_rho_sums_to_one_and_decreases(gamma, seed):
    d = np.random.default_rng(seed).uniform(0, 6, size=52)
    rho = obj.location_weights(d, gamma)
    assert abs(rho.sum() - 1.0) < 1e-12
    order = np.argsort(d)
    assert np.all(np.diff(rho[order]) <= 0)


def test_loss_examples():
    y = np.zeros((1, 52))
    assert obj.vf_loss(y, y, [1.0], np.full(52, 1 / 52)) == 0.0
    p = y.copy()
    p[0, 7] = 3.0
    rho = obj.location_weights(default_table().distances, 5.0)
    assert obj.vf_loss(p, y, [0.5], rho) == pytest.approx(0.5 * rho[7] * 9.0, rel=1e-15)
    assert obj.md_loss([1.0], [1.0], [1.0]) == 0.0
    assert obj.md_loss([-2.0], [1.0], [0.25]) == pytest.approx(2.25)
    assert obj.total_loss(4.0, 2.0, 0.0) == 4.0
    assert obj.total_loss(4.0, 2.0, 1.0) == 2.0
    assert obj.total_loss(4.0, 2.0, 0.5) == 3.0
    with pytest.raises(ConfigError):
        obj.total_loss(1.0, 1.0, 1.01)


def test_losses_match_loops():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.integers(1, 9)
        p, y = rng.normal(size=(n, 52)), rng.normal(size=(n, 52))
        lam, rho = rng.random(n), rng.random(52)
        want = sum(lam[i] * sum(rho[j] * (y[i, j] - p[i, j]) ** 2 for j in range(52)) for i in range(n))
        assert abs(obj.vf_loss(p, y, lam, rho) - want) <= 1e-12 * max(1.0, want)
        z, m = rng.normal(size=n), rng.normal(size=n)
        want = sum(lam[i] * (z[i] - m[i]) ** 2 for i in range(n))
        assert abs(obj.md_loss(m, z, lam) - want) <= 1e-12 * max(1.0, want)


def test_loss_zero_iff_residuals_zero():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(3, 52))
    lam, rho = np.full(3, 1 / 3), np.full(52, 1 / 52)
    assert obj.vf_loss(y, y, lam, rho) == 0.0
    p = y.copy()
    p[2, 51] += 1e-6
    assert obj.vf_loss(p, y, lam, rho) > 0.0


def test_tape_loss_gradient_is_affine_in_beta():
    rng = np.random.default_rng(2)
    vf0, md0 = rng.normal(size=(4, 52)), rng.normal(size=4)
    y, z = rng.normal(size=(4, 52)), rng.normal(size=4)
    lam, rho = np.full(4, 0.25), obj.location_weights(default_table().distances, 5.0)
    params = {"vf": vf0, "md": md0}

    def grads(beta):
        tape = ad.Tape(params)
        loss = obj.composite_loss_tape(tape.param("vf"), tape.param("md"), y, z, lam, rho, beta)
        assert float(loss.value) == pytest.approx(
            obj.total_loss(obj.vf_loss(vf0, y, lam, rho), obj.md_loss(md0, z, lam), beta), rel=1e-14)
        return ad.backward(tape, loss)

    g0, g1, gh = grads(0.0), grads(1.0), grads(0.3)
    for k in params:
        assert np.allclose(gh[k], 0.7 * g0[k] + 0.3 * g1[k], rtol=1e-13, atol=1e-15)
