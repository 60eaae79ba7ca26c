import math

import numpy as np
import pytest

from mmitf import encoding as enc
from mmitf import numerics as nx
from mmitf.features import HandPose, ImageDims, build_object_sequence, build_relation_sequence

DIMS = ImageDims(1280, 720)


def test_normalize_point():
    assert np.array_equal(enc.normalize_point((1280, 720), DIMS), [1, 1])
    assert np.array_equal(enc.normalize_point((0, 0), DIMS), [0, 0])
    assert np.array_equal(enc.normalize_point((640, 180), DIMS), [0.5, 0.25])
    with pytest.raises(ValueError):
        enc.normalize_point((-1, -1), DIMS)
    with pytest.raises(ValueError):
        enc.normalize_point((1281, 3), DIMS)


def test_embed_point_zero_projection():
    z = nx.Tensor(np.zeros(4))
    assert np.array_equal(enc.embed_point((0.3, 0.8), (z, z)).data, np.zeros(8))


def test_embed_point_separable(rng):
    p = enc.EncodingParams.init(64, rng)
    a = enc.embed_point((0.3, 0.2), (p.W_h_x, p.W_h_y)).data
    b = enc.embed_point((0.3, 0.9), (p.W_h_x, p.W_h_y)).data
    c = enc.embed_point((0.7, 0.2), (p.W_h_x, p.W_h_y)).data
    assert a.shape == (64,)
    assert np.array_equal(a[:32], b[:32]) and not np.array_equal(a[32:], b[32:])
    assert np.array_equal(a[32:], c[32:]) and not np.array_equal(a[:32], c[:32])


def test_positional_encoding_values():
    pe = enc.positional_encode((0.0, 0.0), 16)
    assert np.array_equal(pe, [0, 1] * 8)
    pe = enc.positional_encode((1.0, 0.0), 16)
    assert pe[0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert pe[0] == pytest.approx(0.84147, abs=1e-5)
    assert pe[1] == pytest.approx(math.cos(1.0), abs=1e-15)
    # slot 2i uses 10000^(2i/d_T)
    assert pe[2] == pytest.approx(math.sin(1.0 / 10000 ** (2 / 16)), abs=1e-15)


def test_positional_encoding_is_concat_of_axes(rng):
    for _ in range(20):
        x, y = rng.random(2)
        pe = enc.positional_encode((x, y), 32)
        assert np.all(np.abs(pe) <= 1)
        assert np.array_equal(pe[:16], enc.positional_encode((x, 0.0), 32)[:16])
        assert np.array_equal(pe[16:], enc.positional_encode((y, 0.0), 32)[:16])


def test_embed_angle(rng):
    W = nx.Tensor(rng.normal(size=8))
    assert np.array_equal(enc.embed_angle(0.0, W).data, np.zeros(8))
    assert np.allclose(enc.embed_angle(math.pi, W).data, W.data * 2 * math.pi)
    sent = enc.embed_angle(-1.0, W).data
    assert np.array_equal(sent, -W.data)
    for t in np.linspace(0, math.pi, 50):
        assert not np.allclose(enc.embed_angle(t, W).data, sent)
    with pytest.raises(ValueError):
        enc.embed_angle(3.5, W)
    with pytest.raises(ValueError):
        enc.embed_angle(-0.5, W)


def _scene(rng, n):
    lm = rng.uniform(100, 600, (21, 2))
    return HandPose(lm), build_object_sequence(rng.uniform(50, 700, (n, 2)))


def test_assemble_shapes(rng):
    p = enc.EncodingParams.init(64, rng)
    h, o = _scene(rng, 10)
    P, O, R = enc.assemble(h, o, build_relation_sequence(h, o), p, DIMS)
    assert P.shape == (21, 64) and O.shape == (11, 64) and R.shape == (11, 64)


def test_assemble_empty_scene(rng):
    p = enc.EncodingParams.init(16, rng)
    h, o = _scene(rng, 0)
    P, O, R = enc.assemble(h, o, build_relation_sequence(h, o), p, DIMS)
    assert O.shape == (1, 16) and R.shape == (1, 16)
    # sentinel: raw (-1, -1), no positional encoding
    assert np.array_equal(O.data[0], np.concatenate([-p.W_o_x.data, -p.W_o_y.data]))
    assert np.array_equal(R.data[0], -p.W_r.data)


def test_assemble_pose_rows_are_embedding_plus_pe(rng):
    p = enc.EncodingParams.init(16, rng)
    h, o = _scene(rng, 3)
    P, O, _ = enc.assemble(h, o, build_relation_sequence(h, o), p, DIMS)
    q = enc.normalize_point(h.landmarks[4], DIMS)
    expect = enc.embed_point(q, (p.W_h_x, p.W_h_y)).data + enc.positional_encode(q, 16)
    assert np.allclose(P.data[4], expect, atol=1e-15)
    c = enc.normalize_point(o.centroids[1], DIMS)
    expect = enc.embed_point(c, (p.W_o_x, p.W_o_y)).data + enc.positional_encode(c, 16)
    assert np.allclose(O.data[1], expect, atol=1e-15)


def test_assemble_permutation_equivariant(rng):
    p = enc.EncodingParams.init(16, rng)
    h, o = _scene(rng, 6)
    perm = rng.permutation(6)
    o2 = build_object_sequence(o.centroids[perm])
    _, O1, R1 = enc.assemble(h, o, build_relation_sequence(h, o), p, DIMS)
    _, O2, R2 = enc.assemble(h, o2, build_relation_sequence(h, o2), p, DIMS)
    full = np.append(perm, 6)
    assert np.array_equal(O1.data[full], O2.data)
    assert np.array_equal(R1.data[full], R2.data)


def test_assemble_length_mismatch(rng):
    p = enc.EncodingParams.init(16, rng)
    h, o = _scene(rng, 3)
    h2, o2 = _scene(rng, 4)
    with pytest.raises(ValueError, match="length"):
        enc.assemble(h, o, build_relation_sequence(h2, o2), p, DIMS)


def test_params_init_bounds(rng):
    p = enc.EncodingParams.init(32, rng)
    for t in p.named().values():
        assert np.all(np.abs(t.data) <= 1.0)
    with pytest.raises(ValueError):
        enc.EncodingParams.init(15, rng)
