import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from vtformer import VTFormerRegressor, check_scenes
from vtformer.datahub import generate_synthetic

SMALL = dict(T_OH=4, T_PH=5, d_model=8, n_layers=1, n_heads=2, d_ff=16, epochs=2, batch_size=4)


def test_get_params_and_clone():
    est = VTFormerRegressor(**SMALL)
    params = est.get_params()
    assert params["d_model"] == 8 and params["lr"] == 0.01 and params["random_state"] == 0
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(epochs=5)
    assert est.epochs == 5


def test_canonical_defaults():
    p = VTFormerRegressor().get_params()
    assert (p["epochs"], p["lr"], p["weight_decay"], p["dropout"], p["batch_size"]) == (80, 0.01, 0.0005, 0.2, 16)
    assert (p["n_layers"], p["n_heads"], p["d_ff"], p["T_PH"]) == (8, 4, 256, 25)


def test_fit_predict_score():
    scenes = generate_synthetic("constant_velocity", 6, 2, seed=0, T_OH=4, T_PH=5)
    est = VTFormerRegressor(**SMALL).fit(scenes[:4], eval_set=scenes[4:])
    pred = est.predict(scenes[4:])
    assert pred.shape == (4, 5, 2) and np.all(np.isfinite(pred))
    assert est.score(scenes[4:]) == pytest.approx(-est.evaluate(scenes[4:]).ade)
    assert est.n_params_ == est.model_.count_params()
    assert len(est.record_.losses) == 2
    assert VTFormerRegressor.from_model(est.model_).predict(scenes[4]).shape == (2, 5, 2)


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        VTFormerRegressor(**SMALL).predict(generate_synthetic("curve", 1, 1, T_OH=4, T_PH=5))


def test_check_scenes_validation():
    good = generate_synthetic("curve", 2, 1, T_OH=4, T_PH=5)
    assert len(check_scenes(good[0])) == 1
    with pytest.raises(ValueError):
        check_scenes([])
    with pytest.raises(TypeError):
        check_scenes([np.zeros((1, 4, 2))])
    with pytest.raises(TypeError):
        check_scenes(3)
    with pytest.raises(ValueError, match="T_OH"):
        check_scenes(good, T_OH=5)
    with pytest.raises(ValueError, match="T_PH"):
        check_scenes(good, T_PH=6)
    assert check_scenes(good, T_PH=6, require_future=False) == good
    bad = generate_synthetic("curve", 1, 1, T_OH=4, T_PH=5)[0]
    bad.observed[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        check_scenes([bad])
