import math

import numpy as np
import pytest

from mmitf import baseline as bl
from mmitf.datagen import DEFAULT_DIMS, Sample, generate_corpus, synth_hand
from mmitf.features import INDEX_FINGER_TIP, WRIST, GeometryError, HandPose, build_object_sequence


def hand_on_line(wrist, tip):
    lm = np.zeros((21, 2))
    lm[:] = wrist
    lm[WRIST] = wrist
    lm[INDEX_FINGER_TIP] = tip
    return HandPose(lm)


def test_point_line_distance_examples():
    line = bl.pointing_line(hand_on_line((0.0, 0.0), (1.0, 0.0)))
    assert bl.point_line_distance((5.0, 3.0), line) == pytest.approx(3.0, abs=1e-15)
    assert bl.point_line_distance((-4.0, -2.0), line) == pytest.approx(2.0, abs=1e-15)
    assert bl.point_line_distance((7.0, 0.0), line) == 0.0
    line = bl.pointing_line(hand_on_line((0.0, 0.0), (1.0, 1.0)))
    # cross-product oracle |x1*y2 - x2*y1| / |v|
    assert bl.point_line_distance((0.0, 2.0), line) == pytest.approx(abs(1 * 2 - 1 * 0) / math.sqrt(2), abs=1e-14)


def test_ray_mode_measures_to_anchor_behind():
    line = bl.pointing_line(hand_on_line((0.0, 0.0), (1.0, 0.0)))
    assert bl.point_line_distance((-3.0, 4.0), line, ray=True) == pytest.approx(5.0)
    assert bl.point_line_distance((3.0, 4.0), line, ray=True) == pytest.approx(4.0)
    h = hand_on_line((0.0, 0.0), (1.0, 0.0))
    d = bl.line_distances(h, np.array([[-3.0, 4.0], [3.0, 4.0]]), ray=True)
    assert np.allclose(d, [5.0, 4.0])


def test_degenerate_line():
    with pytest.raises(GeometryError):
        bl.pointing_line(hand_on_line((5.0, 5.0), (5.0, 5.0)))


def test_line_distances_vectorised(rng):
    h = hand_on_line(tuple(rng.uniform(0, 100, 2)), tuple(rng.uniform(0, 100, 2)))
    cents = rng.uniform(0, 100, (30, 2))
    line = bl.pointing_line(h)
    assert np.allclose(bl.line_distances(h, cents), [bl.point_line_distance(c, line) for c in cents], atol=1e-12)
    assert bl.line_distances(h, np.zeros((0, 2))).shape == (0,)


def test_rank_orders():
    p = bl._rank(np.array([3.0, 1.0, 2.0]), pointing=True)
    assert list(p.ranked) == [1, 2, 0, 3] and p.top == 1
    p = bl._rank(np.array([3.0, 1.0, 2.0]), pointing=False)
    assert list(p.ranked) == [3, 1, 2, 0] and p.top == 3
    assert bl._rank(np.array([]), pointing=True).top == 0


class Always:
    def __init__(self, p):
        self.p = p

    def probabilities(self, hands, wh):
        return np.full(len(hands), self.p)


def test_predict_with_fixed_gate():
    target = np.array([600.0, 500.0])
    hand = synth_hand(True, target, 0.0, np.random.default_rng(0))
    s = Sample(DEFAULT_DIMS, hand, build_object_sequence([[100.0, 700.0], target, [1200.0, 400.0]]), (1,))
    assert bl.baseline_predict(s, Always(0.9)).top == 1
    assert bl.baseline_predict(s, Always(0.1)).top == 3
    assert [p.top for p in bl.baseline_predict_many([s, s], Always(0.9))] == [1, 1]
    assert bl.baseline_predict_many([], Always(0.9)) == []


@pytest.fixture(scope="module")
def trained():
    data = generate_corpus(n_scenes=10, n_objects=5, seed=2)
    return data, bl.train_classifier(data)


def test_classifier_separates_resting(trained):
    data, clf = trained
    test = generate_corpus(n_scenes=5, n_objects=5, seed=99)
    acc = np.mean([(bl.mlp_classify(s.hand, s.dims, clf) >= 0.5) == (not s.resting) for s in test])
    assert acc >= 0.95


def test_classifier_shapes_and_range(trained):
    _, clf = trained
    assert clf.n_layers == 3
    assert clf.params["mlp.0.w"].shape == (42, 64) and clf.params["mlp.2.w"].shape == (32, 1)
    p = clf.probabilities(np.random.default_rng(0).uniform(0, 700, (5, 21, 2)), np.array([[[1280.0, 720.0]]]))
    assert p.shape == (5,) and np.all((p > 0) & (p < 1))


def test_classifier_round_trip(trained, tmp_path):
    data, clf = trained
    bl.save_classifier(tmp_path / "c.ckpt", clf, bl.ClassifierTrainConfig())
    back = bl.load_classifier(tmp_path / "c.ckpt")
    assert [p.top for p in bl.baseline_predict_many(data, back)] == [p.top for p in bl.baseline_predict_many(data, clf)]


def test_classifier_training_deterministic():
    data = generate_corpus(n_scenes=1, n_objects=3, seed=0)
    cfg = bl.ClassifierTrainConfig(epochs=3)
    a, b = bl.train_classifier(data, cfg).state_dict(), bl.train_classifier(data, cfg).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    with pytest.raises(ValueError):
        bl.train_classifier([])
