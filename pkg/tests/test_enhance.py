"""Attention-based enhancement: weights, shapes, equivariance, composition.

The compositional oracle recomputes every stage with bare numkernel calls:
project, score, column-sum, normalize, row-scale. Tests compare module
outputs against that recomputation rather than against stored numbers.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from forgeloc import numkernel as nk
from forgeloc.core_data import FeatureSequence
from forgeloc.enhance import (
    EnhanceParams,
    TppaParams,
    enhance_all,
    inter_enhance,
    intra_enhance,
    tppa_weights,
)
from forgeloc.errors import AlignmentError


def _triple(rng, d_in, d_out):
    return TppaParams(
        w_qry=rng.standard_normal((d_in, d_out)),
        w_key=rng.standard_normal((d_in, d_out)),
        w_vle=rng.standard_normal((d_in, d_out)),
    )


def _oracle_weights(q_src: np.ndarray, k_src: np.ndarray, p: TppaParams) -> np.ndarray:
    q = nk.matmul(q_src, p.w_qry)
    k = nk.matmul(k_src, p.w_key)
    rel = nk.matmul(q, k.T) / math.sqrt(p.w_qry.shape[1])
    c = nk.column_sum(rel)
    return q_src.shape[0] * nk.softmax_vector(c)


def test_weights_single_frame():
    p = _triple(np.random.default_rng(60), 3, 4)
    w = tppa_weights(np.ones((1, 3)), np.ones((1, 3)), p)
    assert np.array_equal(w, [1.0])


def test_weights_identical_rows_uniform():
    rng = np.random.default_rng(61)
    p = _triple(rng, 3, 4)
    f = np.tile(rng.standard_normal(3), (5, 1))
    assert np.array_equal(tppa_weights(f, f, p), np.ones(5))


def test_weights_two_frame_hand_case():
    p = TppaParams(w_qry=np.eye(2), w_key=np.eye(2), w_vle=np.eye(2))
    f = np.array([[1.0, 0.0], [0.0, 1.0]])
    # Scores are equal across frames, so normalization gives exactly 1 each.
    assert np.array_equal(tppa_weights(f, f, p), [1.0, 1.0])


def test_weights_sum_to_frame_count_and_positive():
    rng = np.random.default_rng(62)
    for _ in range(100):
        frames = int(rng.integers(1, 12))
        d_in = int(rng.integers(1, 6))
        d_out = int(rng.integers(1, 6))
        p = _triple(rng, d_in, d_out)
        a = rng.standard_normal((frames, d_in)) * rng.uniform(0.1, 5.0)
        b = rng.standard_normal((frames, d_in))
        w = tppa_weights(a, b, p)
        assert w.shape == (frames,)
        assert abs(float(np.sum(w)) - frames) <= 1e-9
        assert np.all(w > 0.0)


def test_weights_match_oracle():
    rng = np.random.default_rng(63)
    for _ in range(30):
        p = _triple(rng, 4, 3)
        a = rng.standard_normal((6, 4))
        b = rng.standard_normal((6, 4))
        assert np.allclose(tppa_weights(a, b, p), _oracle_weights(a, b, p), atol=1e-12)


def test_intra_identical_rows_output_is_projected_row():
    rng = np.random.default_rng(64)
    p = _triple(rng, 3, 5)
    row = rng.standard_normal(3)
    f = FeatureSequence(np.tile(row, (4, 1)), fps=2.0)
    out = intra_enhance(f, p)
    assert out.frames == 4 and out.dim == 5
    assert np.allclose(out.values, np.tile(row @ p.w_vle, (4, 1)), atol=1e-12)


def test_intra_single_frame():
    rng = np.random.default_rng(65)
    p = _triple(rng, 3, 2)
    f = FeatureSequence(rng.standard_normal((1, 3)), fps=1.0)
    out = intra_enhance(f, p)
    assert np.allclose(out.values, f.values @ p.w_vle, atol=1e-12)


def test_intra_matches_compositional_oracle():
    rng = np.random.default_rng(66)
    p = _triple(rng, 2, 4)
    f = FeatureSequence(rng.standard_normal((3, 2)), fps=1.0)
    out = intra_enhance(f, p)
    expected = nk.row_scale(f.values @ p.w_vle, _oracle_weights(f.values, f.values, p))
    assert np.allclose(out.values, expected, atol=1e-12)
    assert out.fps == f.fps


def test_intra_permutation_equivariance():
    rng = np.random.default_rng(67)
    for _ in range(100):
        frames = int(rng.integers(2, 9))
        p = _triple(rng, 3, 4)
        f = rng.standard_normal((frames, 3))
        perm = rng.permutation(frames)
        direct = intra_enhance(FeatureSequence(f[perm], 1.0), p).values
        permuted = intra_enhance(FeatureSequence(f, 1.0), p).values[perm]
        assert np.max(np.abs(direct - permuted)) <= 1e-9


def test_inter_identical_source_rows_structure():
    rng = np.random.default_rng(68)
    p = _triple(rng, 3, 4)
    target = FeatureSequence(rng.standard_normal((5, 3)), fps=2.0)
    source = FeatureSequence(np.tile(rng.standard_normal(3), (5, 1)), fps=2.0)
    out = inter_enhance(target, source, p)
    shared = source.values[0] @ p.w_vle
    # Every output row is the shared projected source row times that
    # frame's weight.
    w = out.values @ shared / float(shared @ shared)
    assert np.allclose(out.values, np.outer(w, shared), atol=1e-9)
    assert abs(float(np.sum(w)) - 5.0) <= 1e-6


def test_inter_degenerates_to_intra_when_streams_match():
    rng = np.random.default_rng(69)
    p = _triple(rng, 3, 4)
    f = FeatureSequence(rng.standard_normal((6, 3)), fps=1.5)
    assert np.array_equal(inter_enhance(f, f, p).values, intra_enhance(f, p).values)


def test_inter_matches_compositional_oracle():
    rng = np.random.default_rng(70)
    p = _triple(rng, 3, 4)
    target = FeatureSequence(rng.standard_normal((4, 3)), fps=1.0)
    source = FeatureSequence(rng.standard_normal((4, 3)), fps=1.0)
    out = inter_enhance(target, source, p)
    # Values come from the source; the per-frame weight tracks the target,
    # so the source side supplies the queries that the column sum folds away.
    weights = _oracle_weights(source.values, target.values, p)
    expected = nk.row_scale(source.values @ p.w_vle, weights)
    assert np.allclose(out.values, expected, atol=1e-12)


def test_inter_rejects_frame_mismatch():
    rng = np.random.default_rng(71)
    p = _triple(rng, 3, 4)
    a = FeatureSequence(rng.standard_normal((4, 3)), 1.0)
    b = FeatureSequence(rng.standard_normal((5, 3)), 1.0)
    with pytest.raises(AlignmentError):
        inter_enhance(a, b, p)


def _full_params(rng, dim_v, dim_a, k1, k2):
    return EnhanceParams(
        intra_visual=_triple(rng, dim_v, k1),
        intra_audio=_triple(rng, dim_a, k1),
        inter_visual=_triple(rng, k1, k2),
        inter_audio=_triple(rng, k1, k2),
    )


def test_enhance_all_shapes():
    rng = np.random.default_rng(72)
    params = _full_params(rng, 3, 4, 5, 6)
    v = FeatureSequence(rng.standard_normal((7, 3)), 2.0)
    a = FeatureSequence(rng.standard_normal((7, 4)), 2.0)
    f_v2, f_a2, f_m = enhance_all(v, a, params)
    assert f_v2.frames == f_a2.frames == f_m.frames == 7
    assert f_v2.dim == 6 and f_a2.dim == 6
    assert f_m.dim == 12


def test_enhance_all_matches_compositional_oracle():
    rng = np.random.default_rng(73)
    params = _full_params(rng, 2, 3, 4, 4)
    v = FeatureSequence(rng.standard_normal((5, 2)), 1.0)
    a = FeatureSequence(rng.standard_normal((5, 3)), 1.0)
    f_v2, f_a2, f_m = enhance_all(v, a, params)
    f_v1 = intra_enhance(v, params.intra_visual)
    f_a1 = intra_enhance(a, params.intra_audio)
    expect_v2 = inter_enhance(f_v1, f_a1, params.inter_visual)
    expect_a2 = inter_enhance(f_a1, f_v1, params.inter_audio)
    assert np.array_equal(f_v2.values, expect_v2.values)
    assert np.array_equal(f_a2.values, expect_a2.values)
    assert np.array_equal(f_m.values, np.hstack([expect_v2.values, expect_a2.values]))


def test_enhance_all_rejects_misaligned_streams():
    rng = np.random.default_rng(74)
    params = _full_params(rng, 3, 3, 4, 4)
    v = FeatureSequence(rng.standard_normal((6, 3)), 1.0)
    a = FeatureSequence(rng.standard_normal((5, 3)), 1.0)
    with pytest.raises(AlignmentError):
        enhance_all(v, a, params)


def test_uniform_weights_preserve_scale_exactly():
    rng = np.random.default_rng(75)
    for _ in range(100):
        p = _triple(rng, 3, 4)
        row = rng.standard_normal(3)
        frames = int(rng.integers(2, 10))
        f = FeatureSequence(np.tile(row, (frames, 1)), fps=1.0)
        out = intra_enhance(f, p)
        v = f.values @ p.w_vle
        # Identical rows force weights of exactly 1, so output == V.
        assert np.array_equal(out.values, v)
        assert np.mean(np.linalg.norm(out.values, axis=1)) == np.mean(
            np.linalg.norm(v, axis=1)
        )


def test_temporal_shape_preserved_on_random_instances():
    rng = np.random.default_rng(76)
    for _ in range(100):
        frames = int(rng.integers(1, 16))
        p = _triple(rng, 3, 5)
        f = FeatureSequence(rng.standard_normal((frames, 3)), fps=1.0)
        assert intra_enhance(f, p).frames == frames
