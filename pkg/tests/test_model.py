from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from forgeloc import numkernel as nk
from forgeloc.core_data import FeatureSequence, ForgeryLabel, SegmentAnnotation, VideoSample
from forgeloc.enhance import enhance_all
from forgeloc.errors import AlignmentError, ShapeError
from forgeloc.model import (
    HeadParams,
    aggregate,
    forward,
    infer,
    localize,
    select_expert,
)
from forgeloc.train import TrainConfig, init_params


def _sample(rng, frames=6, dim_v=3, dim_a=3, label=1, fps=2.0):
    gt = ()
    if label != 0:
        gt = (SegmentAnnotation(0.0, frames / fps / 2, kind=label),)
    return VideoSample(
        id="s0",
        visual=FeatureSequence(rng.standard_normal((frames, dim_v)), fps),
        audio=FeatureSequence(rng.standard_normal((frames, dim_a)), fps),
        label=ForgeryLabel(label),
        gt_segments=gt,
    )


def _params(seed=0, dim_v=3, dim_a=3, d_out=4):
    return init_params(dim_v, dim_a, TrainConfig(seed=seed, d_out=d_out))


# ------------------------------------------------------------------ localize


def test_localize_zero_weights_gives_bias_rows():
    head = HeadParams(weight=np.zeros((3, 2)), bias=np.array([0.5, -1.0]))
    fas = localize(np.random.default_rng(80).standard_normal((4, 3)), head)
    assert np.array_equal(fas, np.tile([0.5, -1.0], (4, 1)))


def test_localize_single_frame():
    head = HeadParams(weight=np.eye(2), bias=np.zeros(2))
    fas = localize(np.array([[3.0, -1.0]]), head)
    assert fas.shape == (1, 2)
    assert np.array_equal(fas, [[3.0, -1.0]])


def test_localize_matches_per_row_affine():
    rng = np.random.default_rng(81)
    head = HeadParams(weight=rng.standard_normal((3, 4)), bias=rng.standard_normal(4))
    f = rng.standard_normal((3, 3))
    fas = localize(f, head)
    for t in range(3):
        assert np.allclose(fas[t], f[t] @ head.weight + head.bias, atol=1e-12)


def test_localize_rejects_dim_mismatch():
    head = HeadParams(weight=np.zeros((3, 2)), bias=np.zeros(2))
    with pytest.raises(ShapeError):
        localize(np.zeros((4, 5)), head)


# ----------------------------------------------------------------- aggregate


def test_aggregate_zero_logits_uniform():
    assert np.allclose(aggregate(np.zeros((5, 2))), [0.5, 0.5])


def test_aggregate_constant_rows_is_row_softmax():
    row = np.array([0.2, -1.0, 3.0, 0.0])
    fas = np.tile(row, (6, 1))
    assert np.allclose(aggregate(fas), nk.softmax_vector(row), atol=1e-15)


def test_aggregate_closed_form():
    fas = np.array([[0.0, math.log(3.0)], [0.0, math.log(3.0)]])
    assert np.allclose(aggregate(fas), [0.25, 0.75], atol=1e-15)


def test_aggregate_frame_order_invariant():
    rng = np.random.default_rng(82)
    fas = rng.standard_normal((7, 4))
    perm = rng.permutation(7)
    assert np.allclose(aggregate(fas), aggregate(fas[perm]), atol=1e-15)


# ------------------------------------------------------------------- forward


def test_forward_shapes_and_distributions():
    rng = np.random.default_rng(83)
    sample = _sample(rng)
    out = forward(sample, _params())
    frames = sample.visual.frames
    assert out.fas_v.shape == (frames, 2)
    assert out.fas_a.shape == (frames, 2)
    assert out.fas_m.shape == (frames, 4)
    for vec in (out.y_hat_v, out.y_hat_a, out.y_hat_m):
        assert abs(float(np.sum(vec)) - 1.0) <= 1e-9
        assert np.all(vec >= 0.0)


def test_forward_matches_stage_composition():
    rng = np.random.default_rng(84)
    sample = _sample(rng)
    params = _params(seed=3)
    out = forward(sample, params)
    f_v2, f_a2, f_m = enhance_all(sample.visual, sample.audio, params.enhance)
    assert np.allclose(out.f_v2, f_v2.values, atol=1e-12)
    assert np.allclose(out.f_a2, f_a2.values, atol=1e-12)
    assert np.allclose(out.f_m, f_m.values, atol=1e-12)
    assert np.allclose(out.fas_v, localize(f_v2.values, params.head_visual), atol=1e-12)
    assert np.allclose(out.fas_a, localize(f_a2.values, params.head_audio), atol=1e-12)
    assert np.allclose(out.fas_m, localize(f_m.values, params.head_multimodal), atol=1e-12)
    assert np.allclose(out.y_hat_m, aggregate(localize(f_m.values, params.head_multimodal)), atol=1e-12)


def test_forward_rejects_unaligned_sample():
    rng = np.random.default_rng(85)
    sample = VideoSample(
        id="u",
        visual=FeatureSequence(rng.standard_normal((4, 3)), 1.0),
        audio=FeatureSequence(rng.standard_normal((8, 3)), 2.0),
        label=ForgeryLabel(0),
    )
    with pytest.raises(AlignmentError):
        forward(sample, _params())


# -------------------------------------------------------------------- gating


def test_select_expert_class_names():
    assert select_expert(np.array([0.7, 0.1, 0.1, 0.1])) == "none"
    assert select_expert(np.array([0.1, 0.7, 0.1, 0.1])) == "multimodal"
    assert select_expert(np.array([0.1, 0.1, 0.7, 0.1])) == "visual"
    assert select_expert(np.array([0.1, 0.1, 0.1, 0.7])) == "audio"


def test_select_expert_tie_goes_to_lower_class():
    assert select_expert(np.array([0.25, 0.25, 0.25, 0.25])) == "none"
    # Exhaustive two-way ties: lower index always wins.
    gates = ["none", "multimodal", "visual", "audio"]
    for i in range(4):
        for j in range(i + 1, 4):
            v = np.full(4, 0.1)
            v[i] = v[j] = 0.35
            assert select_expert(v) == gates[i]


def test_select_expert_shift_invariance_of_logit_argmax():
    rng = np.random.default_rng(86)
    for _ in range(50):
        logits = rng.standard_normal(4)
        a = select_expert(nk.softmax_vector(logits))
        b = select_expert(nk.softmax_vector(logits + 11.3))
        assert a == b


def test_select_expert_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        select_expert(np.array([0.5, 0.5]))


# --------------------------------------------------------------------- infer


def _force_gate(params, class_id):
    # A huge bias on one fused class pins the gate no matter the features.
    bias = np.zeros(4)
    bias[class_id] = 50.0
    head = HeadParams(weight=params.head_multimodal.weight, bias=bias)
    return replace(params, head_multimodal=head)


def test_infer_gate_none_emits_no_proposals():
    rng = np.random.default_rng(87)
    sample = _sample(rng, label=0)
    params = _force_gate(_params(seed=5), 0)
    result = infer(sample, params)
    assert result.gate == "none"
    assert result.proposals == ()
    assert result.pred_label is ForgeryLabel.BOTH_GENUINE


def test_infer_pred_label_matches_gate_class():
    rng = np.random.default_rng(88)
    sample = _sample(rng, label=2)
    for class_id, gate in ((1, "multimodal"), (2, "visual"), (3, "audio")):
        result = infer(sample, _force_gate(_params(seed=6), class_id))
        assert result.gate == gate
        assert int(result.pred_label) == class_id


def test_infer_proposals_stay_inside_clip():
    rng = np.random.default_rng(89)
    sample = _sample(rng, frames=12, fps=3.0, label=1)
    result = infer(sample, _force_gate(_params(seed=7), 1))
    duration = sample.visual.frames / sample.visual.fps
    for p in result.proposals:
        assert 0.0 <= p.start_s < p.end_s <= duration + 1e-12


def test_infer_visual_gate_ignores_other_heads():
    rng = np.random.default_rng(90)
    sample = _sample(rng, label=2)
    params = _force_gate(_params(seed=8), 2)
    base = infer(sample, params)
    assert base.gate == "visual"

    # Sentinel audio head and a scaled fused head that keeps the argmax.
    stubbed = replace(
        params,
        head_audio=HeadParams(
            weight=np.full_like(params.head_audio.weight, 123.0),
            bias=np.full_like(params.head_audio.bias, -9.0),
        ),
        head_multimodal=HeadParams(
            weight=np.zeros_like(params.head_multimodal.weight),
            bias=np.array([0.0, 0.0, 99.0, 0.0]),
        ),
    )
    out = infer(sample, stubbed)
    assert out.gate == "visual"
    assert out.proposals == base.proposals


def test_infer_audio_gate_ignores_other_heads():
    rng = np.random.default_rng(91)
    sample = _sample(rng, label=3)
    params = _force_gate(_params(seed=9), 3)
    base = infer(sample, params)
    assert base.gate == "audio"

    stubbed = replace(
        params,
        head_visual=HeadParams(
            weight=np.full_like(params.head_visual.weight, -77.0),
            bias=np.full_like(params.head_visual.bias, 4.0),
        ),
        head_multimodal=HeadParams(
            weight=np.zeros_like(params.head_multimodal.weight),
            bias=np.array([0.0, 0.0, 0.0, 99.0]),
        ),
    )
    out = infer(sample, stubbed)
    assert out.gate == "audio"
    assert out.proposals == base.proposals
