import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmitf import datagen as dg
from mmitf.features import INDEX_FINGER_DIP, INDEX_FINGER_TIP, WRIST, GeometryError, ImageDims


@pytest.fixture(scope="module")
def corpus():
    return dg.generate_corpus(n_scenes=3, n_objects=6, seed=7)


def test_corpus_composition(corpus):
    assert len(corpus) == 3 * (7 + 2 * 2 + 8)
    assert sum(s.resting for s in corpus) == 3 * 8
    tasks = [s.meta["task"] for s in corpus]
    assert tasks.count("bimanual") == 3 * 4 and tasks.count("single") == 3 * 7
    for s in corpus:
        assert s.dims.contains(s.hand.landmarks) and s.dims.contains(s.objects.centroids)
        assert s.n_objects == 6


def test_default_corpus_size():
    assert dg.MULTIPLICITY == 4096
    assert len(dg.generate_corpus(n_scenes=2)) == 2 * 19


def test_generation_is_seeded():
    a = dg.generate_corpus(n_scenes=2, n_objects=4, seed=1)
    b = dg.generate_corpus(n_scenes=2, n_objects=4, seed=1)
    c = dg.generate_corpus(n_scenes=2, n_objects=4, seed=2)
    assert a == b and a != c


def test_scene_layout(rng):
    dims = dg.DEFAULT_DIMS
    c = dg.generate_scene(10, dims, rng)
    assert c.shape == (10, 2)
    assert np.all(c[:, 1] >= dg.TABLE_TOP * dims.H)
    d = np.hypot(*(c[:, None] - c[None]).transpose(2, 0, 1))
    assert d[~np.eye(10, dtype=bool)].min() >= dg.MIN_SEPARATION * dims.W
    with pytest.raises(GeometryError):
        dg.generate_scene(500, dims, rng)
    with pytest.raises(ValueError):
        dg.generate_scene(0, dims, rng)


def test_jitter_free_hand_aims_exactly(rng):
    for _ in range(50):
        target = rng.uniform([100, 300], [1180, 700])
        h = dg.synth_hand(True, target, 0.0, rng, left=bool(rng.integers(2)))
        fv = h.landmarks[INDEX_FINGER_TIP] - h.landmarks[INDEX_FINGER_DIP]
        to = target - h.landmarks[INDEX_FINGER_TIP]
        assert abs(math.atan2(fv[0] * to[1] - fv[1] * to[0], fv @ to)) < 1e-9
        wv = h.landmarks[INDEX_FINGER_TIP] - h.landmarks[WRIST]
        assert abs(wv[0] * fv[1] - wv[1] * fv[0]) < 1e-6 * np.linalg.norm(wv) * np.linalg.norm(fv)


def test_jitter_bounds(rng):
    for _ in range(50):
        target = rng.uniform([100, 300], [1180, 700])
        h = dg.synth_hand(True, target, 5.0, rng)
        fv = h.landmarks[INDEX_FINGER_TIP] - h.landmarks[INDEX_FINGER_DIP]
        to = target - h.landmarks[INDEX_FINGER_TIP]
        assert math.degrees(abs(math.atan2(fv[0] * to[1] - fv[1] * to[0], fv @ to))) <= 5.0 + 1e-9


def test_resting_hand_in_zone(rng):
    dims = dg.DEFAULT_DIMS
    x0, y0, x1, y1 = dg.REST_ZONE
    for _ in range(20):
        lm = dg.synth_hand(False, rng=rng).landmarks
        assert np.all(lm[:, 0] >= x0 * dims.W - 1e-9) and np.all(lm[:, 0] <= x1 * dims.W + 1e-9)
        assert np.all(lm[:, 1] >= y0 * dims.H - 1e-9) and np.all(lm[:, 1] <= y1 * dims.H + 1e-9)


def test_sample_validation(corpus):
    s = corpus[0]
    with pytest.raises(ValueError):
        dg.Sample(s.dims, s.hand, s.objects, ())
    with pytest.raises(ValueError):
        dg.Sample(s.dims, s.hand, s.objects, (99,))
    with pytest.raises(ValueError):
        dg.Sample(s.dims, s.hand, s.objects, (0, s.n_objects))
    assert dg.Sample(s.dims, s.hand, s.objects, (2, 1, 2)).targets == (1, 2)


def test_all_specs():
    specs = dg.all_augment_specs()
    assert len(specs) == len(set(specs)) == 4096
    assert specs[0].as_list() == [0, 0, 0, 0, 0] and specs[-1].as_list() == [1, 7, 7, 7, 3]


def test_augment_batch_multiplicity_and_labels(corpus):
    for s in (corpus[0], next(x for x in corpus if x.resting)):
        b = dg.augment_batch(s, np.random.default_rng(0))
        assert len(b) == 4096
        assert b.landmarks.shape == (4096, 21, 2) and b.angles.shape == (4096, s.n_objects + 1)
        assert np.all(b.angles[:, -1] == -1.0)
        assert s.dims.contains(b.landmarks) and s.dims.contains(b.centroids)
        assert len({tuple(r) for r in b.specs}) == 4096
        one = b.sample(1234)
        assert one.targets == s.targets and one.meta["aug"] == list(b.specs[1234])
        assert np.allclose(one.relations.angles, b.angles[1234], atol=1e-12)


def test_geometric_variants_preserve_angles(corpus):
    s = corpus[1]
    b = dg.augment_batch(s, np.random.default_rng(5), noise_scale=0.0)
    assert np.abs(b.angles - s.relations.angles).max() < 1e-9
    # only noise level differs between groups of 4 consecutive variants
    assert np.array_equal(b.landmarks[0], b.landmarks[3])


def test_mirror_flag_flips_handedness(corpus):
    s = corpus[0]
    b = dg.augment_batch(s, np.random.default_rng(0), noise_scale=0.0)
    lm = b.landmarks

    def orient(p):
        a, c = p[5] - p[0], p[17] - p[0]
        return np.sign(a[0] * c[1] - a[1] * c[0])

    assert orient(lm[0]) == orient(s.hand.landmarks)
    assert orient(lm[2048]) == -orient(s.hand.landmarks)


def test_noise_touches_thirty_percent(rng):
    pts = np.full((50, 31, 2), 300.0)
    out = dg._noise(pts, np.full(50, 2.0), rng, dg.DEFAULT_DIMS)
    moved = np.any(out != pts, axis=2).sum(axis=1)
    assert np.all(moved == math.ceil(0.3 * 31))


def test_add_noise(corpus, rng):
    s = corpus[0]
    n = dg.add_noise(s, 3, rng)
    assert n.targets == s.targets
    k = 21 + s.n_objects
    moved = np.any(np.vstack([n.hand.landmarks, n.objects.centroids]) != np.vstack([s.hand.landmarks, s.objects.centroids]), axis=1)
    assert moved.sum() == math.ceil(0.3 * k)
    with pytest.raises(ValueError):
        dg.add_noise(s, 4, rng)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_transforms_preserve_labels_and_angles(seed):
    r = np.random.default_rng(seed)
    pool = dg.generate_corpus(n_scenes=1, n_objects=int(r.integers(1, 8)), seed=int(r.integers(1000)))
    s = pool[int(r.integers(len(pool)))]
    th = r.uniform(-math.pi, math.pi)
    sc = r.uniform(0.3, 3.0)
    m = np.zeros((2, 3))
    m[:, :2] = sc * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    if r.random() < 0.5:
        m[:, 0] *= -1
    m[:, 2] = r.uniform(-100, 100, 2)
    big = ImageDims(1e5, 1e5)
    t = dg.transform_sample(s, m + np.array([[0, 0, 5e4], [0, 0, 5e4]]), big)
    assert t.targets == s.targets
    assert np.abs(t.relations.angles - s.relations.angles).max() < 1e-9
    mi = dg.mirror_sample(s)
    assert np.abs(mi.relations.angles - s.relations.angles).max() < 1e-9


def test_light_augment(corpus):
    out = dg.light_augment(corpus[:4], per_sample=5, seed=0, max_noise_level=2)
    assert len(out) == 4 * 6
    assert all(o.meta["aug"][4] <= 2 for o in out if "aug" in o.meta)
    assert [o.meta.get("aug") for o in out] == [o.meta.get("aug") for o in dg.light_augment(corpus[:4], 5, 0, 2)]


def test_iter_augmented_is_seeded(corpus):
    a = next(dg.iter_augmented(corpus[:1], seed=3))
    b = next(dg.iter_augmented(corpus[:1], seed=3))
    assert np.array_equal(a.landmarks, b.landmarks)


def test_jsonl_round_trip(corpus, tmp_path):
    p = tmp_path / "d.jsonl"
    assert dg.save_jsonl(corpus, p) == len(corpus)
    back = dg.load_jsonl(p)
    assert back == corpus
    rest = json.loads(p.read_text().splitlines()[-1])
    assert rest["resting"] is True and rest["targets"] == []


def test_augmented_jsonl_matches_samples(corpus, tmp_path):
    b = dg.augment_batch(corpus[0], np.random.default_rng(0), indices=[0, 17, 4095])
    p = tmp_path / "a.jsonl"
    assert dg.write_augmented_jsonl([b], p) == 3
    assert dg.load_jsonl(p) == b.samples()


def test_bimanual_record_splits():
    lm = (np.zeros((21, 2)) + 50).tolist()
    rec = {"dims": [100, 100], "objects": [[10, 10], [90, 90]], "hands": [lm, lm], "targets": [[0], []], "resting": [False, True]}
    a, b = dg.samples_from_json(rec)
    assert a.targets == (0,) and b.resting and b.meta["hand_index"] == 1


@pytest.mark.parametrize(
    "line,msg",
    [
        ("{not json", "malformed JSON"),
        ('{"dims":[100,100],"objects":[],"hand":[[1,1]],"targets":[],"resting":true}', "expected 21"),
        ('{"dims":[100,100],"objects":[[500,5]],"hand":[],"targets":[],"resting":true}', "outside"),
        ('{"dims":[100,100],"objects":[[5,5]],"targets":[0],"resting":false}', "hand: missing"),
    ],
)
def test_load_errors_carry_line_numbers(tmp_path, line, msg):
    p = tmp_path / "bad.jsonl"
    p.write_text("\n" + line + "\n")
    with pytest.raises(dg.DatasetFormatError, match=f"bad.jsonl:2: .*{msg}"):
        dg.load_jsonl(p)


def test_targets_validated(tmp_path):
    lm = (np.zeros((21, 2)) + 50).tolist()
    base = {"dims": [100, 100], "objects": [[10, 10]], "hand": lm}
    for targets, resting in (([5], False), ([], False), ([0], True), (["a"], False)):
        with pytest.raises(dg.DatasetFormatError):
            dg.samples_from_json({**base, "targets": targets, "resting": resting})


def test_split_by_scene(corpus):
    groups = dg.split_by_scene(corpus)
    assert sorted(groups) == dg.scene_ids(corpus) == [0, 1, 2]
    assert sum(map(len, groups.values())) == len(corpus)
