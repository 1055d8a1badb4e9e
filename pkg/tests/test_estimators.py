import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from insyn.estimators import InSynPredictor, InteractionScaler
from insyn.preprocess import window_scene
from insyn.synth import mixed_scenes

from test_model import SMALL

SMALL_EST = {k: v for k, v in SMALL.items() if not k.startswith("cvae_") or k == "cvae_hidden"}


@pytest.fixture(scope="module")
def raw_windows():
    return [w for ls in mixed_scenes(3, seed=8) for w in window_scene(ls.scene)]


def test_scaler_bounds(raw_windows):
    sc = InteractionScaler().fit(raw_windows)
    out = sc.transform(raw_windows)
    feats = np.concatenate([w.features for w in out])
    assert feats.min() >= 0 and feats.max() <= 1
    with pytest.raises(NotFittedError):
        InteractionScaler().transform(raw_windows)
    with pytest.raises(ValueError):
        InteractionScaler().fit([])
    with pytest.raises(TypeError):
        InteractionScaler().fit(raw_windows[0])


def test_params_and_clone():
    est = InSynPredictor(epochs=3, ablation="wo-is", **SMALL_EST)
    params = est.get_params()
    assert params["epochs"] == 3 and params["ablation"] == "wo-is"
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "model_")


def test_fit_predict_sample(raw_windows):
    est = InSynPredictor(epochs=1, batch_size=16, k=4, **SMALL_EST).fit(raw_windows)
    pred = est.predict(raw_windows[:5])
    assert pred.shape == (5, 12, 2) and np.isfinite(pred).all()
    sets = est.sample(raw_windows[:2], seed=1)
    assert len(sets) == 2 and sets[0].trajectories.shape == (4, 12, 2)
    report = est.evaluate(raw_windows[:4])
    assert est.score(raw_windows[:4]) == pytest.approx(-report.ade)
    assert {r.term for r in est.curve_} >= {"pred", "kl"}


def test_reuse_trained_sampler(raw_windows):
    first = InSynPredictor(epochs=1, batch_size=16, **SMALL_EST).fit(raw_windows)
    second = InSynPredictor(epochs=1, batch_size=16, ablation="sos", **SMALL_EST).fit(
        raw_windows, scaler=first.scaler_, cvae=first.model_)
    assert second.stats_ is first.stats_
    for a, b in zip(first.model_.cvae.parameters(), second.model_.cvae.parameters()):
        assert np.array_equal(a.detach().numpy(), b.detach().numpy())


def test_predict_before_fit(raw_windows):
    with pytest.raises(NotFittedError):
        InSynPredictor().predict(raw_windows)
