import copy

import numpy as np
import pytest

from retinervenet import ensemble as ens
from retinervenet import models
from retinervenet.errors import ConfigError, InferenceError, UsageError

from helpers import TINY


def metrics(md=(1.0, 1.0, 1.0), mae=(1.0, 1.0, 1.0)):
    return {"md_mae": dict(zip(("early", "moderate", "advanced"), md)),
            "mae": dict(zip(("early", "moderate", "advanced"), mae))}


def test_router_hand_mean():
    reg = {"A": (0.25, 0.25), "B": (0.5, 0.5)}
    vm = {"A": metrics(md=(1, 1, 1)), "B": metrics(md=(0.5, 0.5, 4))}
    vid, scores = ens.pick_router(reg, vm)
    assert vid == "A" and scores["B"] == pytest.approx(5 / 3)


def test_router_single_and_tie():
    assert ens.pick_router({"A": (0.5, 0.5)}, {"A": metrics()})[0] == "A"
    reg = {"X": (0.75, 0.01), "Y": (0.25, 0.99), "Z": (0.25, 0.5)}
    vm = {k: metrics(md=(2, 2, 2)) for k in reg}
    assert ens.pick_router(reg, vm)[0] == "Z"


def test_basic_variant_excluded():
    reg = {"basic": (0.0, 0.0), "other": (0.5, 0.5)}
    vm = {"basic": metrics(md=(0, 0, 0), mae=(0, 0, 0)), "other": metrics(md=(9, 9, 9), mae=(9, 9, 9))}
    assert ens.pick_router(reg, vm)[0] == "other"
    assert set(ens.pick_group_experts(reg, vm)[0].values()) == {"other"}
    with pytest.raises(UsageError):
        ens.pick_router({"basic": (0.0, 0.0)}, vm)
    with pytest.raises(UsageError):
        ens.pick_router({}, {})


def test_group_experts_hand_argmin():
    reg = {"A": (0.01, 0.25), "B": (0.99, 0.25), "C": (0.5, 0.5)}
    vm = {"A": metrics(mae=(1.0, 5.0, 9.0)), "B": metrics(mae=(2.0, 4.0, 6.0)),
          "C": metrics(mae=(1.0, 4.0, 7.0))}
    experts, _ = ens.pick_group_experts(reg, vm)
    assert experts == {"early": "A", "moderate": "C", "advanced": "B"}


def test_group_without_metrics_is_usage_error():
    reg = {"A": (0.5, 0.5)}
    vm = {"A": metrics(mae=(1.0, None, 2.0))}
    with pytest.raises(UsageError):
        ens.pick_group_experts(reg, vm)


def test_spec_is_pure_and_permutation_free():
    reg = {"A": (0.01, 0.25), "B": (0.99, 0.25), "C": (0.5, 0.5)}
    vm = {"A": metrics((1, 2, 3), (1, 5, 9)), "B": metrics((2, 2, 2), (2, 4, 6)), "C": metrics((3, 1, 2), (1, 4, 7))}
    a = ens.build_spec(reg, vm).to_json()
    rev = dict(reversed(list(reg.items())))
    assert ens.build_spec(rev, vm).to_json() == a


def constant_model(md_value, offset, seed):
    m = models.build_retinervenet(copy.deepcopy(TINY), seed=seed)
    for k in m.params.keys():
        m.params[k] = np.zeros_like(m.params[k])
    m.params["sup.b4.b"] = np.array([md_value + offset])
    m.params["inf.b4.b"] = np.array([md_value + offset])
    return m


def test_route_uses_predicted_md():
    x = np.zeros((1, 768))
    for md, group in ((-2.0, "early"), (-8.0, "moderate"), (-15.0, "advanced")):
        assert ens.route(constant_model(md, 0.0, 0), x).tolist() == [group]


def test_routed_predictions_equal_selected_variant():
    x = np.linspace(-3, 3, 25)[:, None] * np.ones((25, 768))
    router = models.build_retinervenet(copy.deepcopy(TINY), seed=1)
    # scale the output layer so the router's MD spans all three groups
    for k in ("sup.b4.w", "inf.b4.w"):
        router.params[k] = router.params[k] * -30
    variants = {"R": router}
    for g, s in (("E", 2), ("M", 3), ("A", 4)):
        variants[g] = models.build_retinervenet(copy.deepcopy(TINY), seed=s)
    spec = ens.EnsembleSpec("R", {"early": "E", "moderate": "M", "advanced": "A"})
    vf, md, groups = ens.ensemble_predict(spec, variants, x)
    assert set(groups) == {"early", "moderate", "advanced"}
    for i in range(25):
        want = variants[{"early": "E", "moderate": "M", "advanced": "A"}[groups[i]]]
        wvf, wmd = models.predict(want, x[i:i + 1])
        # batched BLAS sums may differ from a single-row call in the last bit
        assert np.allclose(vf[i], wvf[0], rtol=0, atol=1e-12) and abs(md[i] - wmd[0]) <= 1e-12
    again = ens.ensemble_predict(spec, variants, x)
    assert np.array_equal(again[0], vf)


def test_identical_experts_reduce_to_that_variant():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 768))
    m = models.build_retinervenet(copy.deepcopy(TINY), seed=5)
    spec = ens.EnsembleSpec("V", {"early": "V", "moderate": "V", "advanced": "V"})
    vf, md, _ = ens.ensemble_predict(spec, {"V": m}, x)
    want = models.predict(m, x)
    assert np.array_equal(vf, want[0]) and np.array_equal(md, want[1])


def test_non_finite_router_md_is_inference_error():
    m = constant_model(-3.0, 0.0, 0)
    m.params["sup.b4.b"] = np.array([np.nan])
    with pytest.raises(InferenceError):
        ens.route(m, np.zeros((1, 768)))


def test_spec_json_roundtrip_and_validation():
    spec = ens.EnsembleSpec("a", {"early": "b", "moderate": "b", "advanced": "c"}, {}, {"a": "1"})
    back = ens.EnsembleSpec.from_dict(spec.to_dict())
    assert back == spec
    with pytest.raises(ConfigError):
        ens.EnsembleSpec.from_dict(dict(spec.to_dict(), experts={"early": "b"}))
    with pytest.raises(ConfigError):
        ens.ensemble_predict(spec, {"a": None}, np.zeros((1, 768)))
