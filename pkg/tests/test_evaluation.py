import io
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from insyn.evaluation import (
    PredictionSet,
    ade,
    best_of_k,
    evaluate_split,
    fde,
    ide,
    predict_windows,
    write_plot_dump,
    write_report,
)
from insyn.model import Ablation, InSyn, ModelConfig

from test_model import SMALL

coords = st.floats(-50, 50, allow_nan=False)
traj = arrays(np.float64, (12, 2), elements=coords)


def test_metric_hand_cases():
    truth = np.zeros((12, 2))
    assert ade(truth, truth) == 0
    assert ade(truth + [0.3, 0.4], truth) == pytest.approx(0.5)
    assert fde([0, 0], [1, 1]) == pytest.approx(math.sqrt(2))
    assert ide([0.06, 0.08], [0, 0]) == pytest.approx(0.1)
    tail = np.array([[2.0, 1.0]])
    assert ade(tail, tail * 0) == pytest.approx(fde(tail[0], tail[0] * 0))
    with pytest.raises(ValueError):
        ade(np.zeros((12, 2)), np.zeros((11, 2)))


def test_ide_ignores_later_steps():
    truth = np.zeros((12, 2))
    pred = truth.copy()
    pred[0] = [0.06, 0.08]
    pred[1:] = 99.0
    (row,) = [best_of_k(pred[None], truth)]
    assert row.ide == pytest.approx(0.1)


@settings(max_examples=60, deadline=None)
@given(traj, traj, arrays(np.float64, (2,), elements=coords))
def test_symmetry_and_translation(a, b, shift):
    assert ade(a, b) == pytest.approx(ade(b, a))
    assert ade(a + shift, b + shift) == pytest.approx(ade(a, b), abs=1e-9)
    assert fde(a[-1] + shift, b[-1] + shift) == pytest.approx(fde(a[-1], b[-1]), abs=1e-9)
    assert ide(a[0] + shift, b[0] + shift) == pytest.approx(ide(a[0], b[0]), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.just(12), st.just(2)), elements=coords), traj)
def test_best_of_k_properties(samples, truth):
    best = best_of_k(samples, truth)
    ades = [ade(s, truth) for s in samples]
    assert all(best.ade <= a for a in ades)
    assert best.ide >= best.min_ide and best.fde >= best.min_fde
    more = best_of_k(np.concatenate([samples, samples[:1] + 0.5]), truth)
    assert more.ade <= best.ade
    if len(samples) == 1:
        assert (best.ade, best.fde, best.ide) == (ades[0], fde(samples[0, -1], truth[-1]),
                                                 ide(samples[0, 0], truth[0]))


def test_perfect_sample_wins():
    truth = np.cumsum(np.ones((12, 2)), axis=0)
    samples = np.stack([truth + 1, truth, truth - 0.2])
    best = best_of_k(samples, truth)
    assert best.index == 1 and best.ade == 0
    with pytest.raises(ValueError):
        best_of_k(np.zeros((0, 12, 2)), truth)


def test_prediction_set_counts_match():
    with pytest.raises(ValueError):
        PredictionSet("s", 1, 0, np.zeros((3, 2)), np.zeros((2, 12, 2)))


@pytest.fixture(scope="module")
def small_model():
    return InSyn(ModelConfig(seed=5, **SMALL))


def test_trajectories_end_at_their_goals(small_model, mixed_windows):
    psets = predict_windows(small_model, mixed_windows[:5], k=4, seed=1)
    for p in psets:
        assert p.k == 4 and p.trajectories.shape == (4, 12, 2)
        np.testing.assert_array_equal(p.trajectories[:, -1], p.goals)


def test_oracle_mode_gives_zero(small_model, mixed_windows):
    report, _ = evaluate_split(small_model, mixed_windows[:6], k=3, oracle=True)
    assert report.ade == 0 and report.fde == 0 and report.ide == 0


def test_fixed_seed_identical_report(small_model, mixed_windows):
    def text(seed):
        report, _ = evaluate_split(small_model, mixed_windows[:6], k=3, seed=seed)
        buf = io.StringIO()
        write_report(report, buf, "abc")
        return buf.getvalue()

    assert text(2) == text(2)
    assert text(2) != text(3)
    lines = text(2).splitlines()
    assert lines[0] == "# config abc"
    assert lines[-7] == "scene,agent,start,ade,fde,ide,min_fde,min_ide"


def test_latents_independent_of_batch(small_model, mixed_windows):
    whole = predict_windows(small_model, mixed_windows[:4], k=2, seed=0)
    part = predict_windows(small_model, mixed_windows[:2], k=2, seed=0)
    np.testing.assert_allclose(whole[1].goals, part[1].goals, atol=1e-6)


def test_given_goals_bypass_sampler(small_model, mixed_windows):
    w = mixed_windows[:2]
    goals = np.stack([np.stack([x.goal, x.goal + 1.0]) for x in w])
    report, psets = evaluate_split(small_model, w, k=2, goals=goals)
    np.testing.assert_allclose(psets[0].goals, goals[0], atol=1e-6)
    assert report.fde == pytest.approx(0, abs=1e-6)
    with pytest.raises(ValueError):
        predict_windows(small_model, w, k=3, goals=goals)
    with pytest.raises(ValueError):
        predict_windows(small_model, w, k=0)


def test_sos_ablation_changes_rollout(small_model, mixed_windows):
    w = mixed_windows[:3]
    full = predict_windows(small_model, w, k=2)
    sos = predict_windows(small_model, w, k=2, ablation=Ablation(use_ssos=False))
    assert not np.allclose(full[0].trajectories, sos[0].trajectories)


def test_plot_dump(small_model, mixed_windows):
    psets = predict_windows(small_model, mixed_windows[:2], k=3)
    buf = io.StringIO()
    write_plot_dump(psets, buf, origins=[(10.0, 0.0), (0.0, 0.0)])
    rows = buf.getvalue().splitlines()
    assert len(rows) == 1 + 6 and len(rows[0].split(",")) == 6 + 24
    first = rows[1].split(",")
    assert float(first[4]) == pytest.approx(psets[0].goals[0, 0] + 10.0, abs=1e-5)
