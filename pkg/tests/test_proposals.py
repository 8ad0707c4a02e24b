import numpy as np
import pytest

from forgeloc.errors import DomainError, ShapeError
from forgeloc.proposals import (
    MAX_PROPOSALS,
    THRESHOLDS,
    SegmentProposal,
    fas_to_proposals,
    forged_curve,
    nms,
    runs_at_threshold,
    temporal_iou,
)


def _logits_for(q):
    # Rows [0, logit(q_t)] so the binary forged probability is ~q_t.
    q = np.asarray(q, dtype=np.float64)
    return np.stack([np.zeros_like(q), np.log(q / (1.0 - q))], axis=1)


# ------------------------------------------------------------------ proposal


def test_proposal_validation_and_duration():
    p = SegmentProposal(1.0, 3.5, 0.4)
    assert p.duration == 2.5
    assert p.kind is None
    with pytest.raises(DomainError):
        SegmentProposal(-0.1, 1.0, 0.5)
    with pytest.raises(DomainError):
        SegmentProposal(2.0, 2.0, 0.5)
    with pytest.raises(DomainError):
        SegmentProposal(0.0, 1.0, 1.5)


# -------------------------------------------------------------- forged curve


def test_forged_curve_binary_values():
    q = forged_curve(np.array([[0.0, 0.0]]))
    assert q == pytest.approx([0.5], abs=1e-12)
    assert forged_curve(np.array([[40.0, -40.0]]))[0] < 1e-30
    saturated = forged_curve(np.array([[-40.0, 40.0]]))[0]
    assert saturated == pytest.approx(1.0, abs=1e-15)
    assert saturated <= 1.0


def test_forged_curve_fused_is_one_minus_genuine():
    q = forged_curve(np.zeros((3, 4)))
    assert q == pytest.approx([0.75, 0.75, 0.75], abs=1e-12)
    one_hot_genuine = np.array([[40.0, 0.0, 0.0, 0.0]])
    assert forged_curve(one_hot_genuine)[0] < 1e-15


def test_forged_curve_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        forged_curve(np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        forged_curve(np.zeros(4))


# --------------------------------------------------------------------- runs


def test_runs_basic():
    assert runs_at_threshold(np.array([0.2, 0.9, 0.9, 0.2]), 0.5) == [(1, 3)]
    assert runs_at_threshold(np.array([0.2, 0.9, 0.9, 0.2]), 0.1) == [(0, 4)]
    assert runs_at_threshold(np.array([0.2, 0.2]), 0.5) == []


def test_runs_boundary_is_inclusive():
    assert runs_at_threshold(np.array([0.5]), 0.5) == [(0, 1)]


def test_runs_trailing_run_closed():
    assert runs_at_threshold(np.array([0.1, 0.9]), 0.5) == [(1, 2)]
    assert runs_at_threshold(np.array([0.9, 0.1, 0.9]), 0.5) == [(0, 1), (2, 3)]


def test_runs_cover_exactly_the_frames_above():
    rng = np.random.default_rng(70)
    for _ in range(50):
        q = rng.uniform(size=20)
        for threshold in THRESHOLDS:
            runs = runs_at_threshold(q, threshold)
            covered = np.zeros(20, dtype=bool)
            for a, b in runs:
                assert a < b
                covered[a:b] = True
            assert np.array_equal(covered, q >= threshold)


# ---------------------------------------------------------------------- iou


def test_temporal_iou_hand_values():
    assert temporal_iou((0.0, 2.0), (0.0, 2.0)) == 1.0
    assert temporal_iou((0.0, 1.0), (2.0, 3.0)) == 0.0
    assert temporal_iou((0.0, 1.0), (1.0, 2.0)) == 0.0
    assert temporal_iou((0.0, 2.0), (1.0, 3.0)) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert temporal_iou((0.0, 4.0), (1.0, 2.0)) == pytest.approx(0.25, abs=1e-12)


def test_temporal_iou_symmetric():
    rng = np.random.default_rng(71)
    for _ in range(50):
        a0, b0 = np.sort(rng.uniform(0, 10, size=2))
        a1, b1 = np.sort(rng.uniform(0, 10, size=2))
        if b0 - a0 < 1e-6 or b1 - a1 < 1e-6:
            continue
        assert temporal_iou((a0, b0), (a1, b1)) == pytest.approx(
            temporal_iou((a1, b1), (a0, b0)), abs=1e-15
        )


# ---------------------------------------------------------------------- nms


def test_nms_keeps_single():
    p = SegmentProposal(0.0, 1.0, 0.5)
    assert nms([p], 0.5) == [p]


def test_nms_drops_duplicate_of_best():
    a = SegmentProposal(0.0, 2.0, 0.9)
    b = SegmentProposal(0.0, 2.0, 0.8)
    assert nms([b, a], 0.5) == [a]


def test_nms_chain_hand_case():
    a = SegmentProposal(0.0, 2.0, 0.9)
    b = SegmentProposal(1.0, 3.0, 0.8)  # IoU with a = 1/3, survives
    c = SegmentProposal(0.5, 2.5, 0.7)  # IoU with a = 0.6, dropped
    assert nms([c, b, a], 0.5) == [a, b]


def test_nms_boundary_iou_survives():
    # IoU exactly at the threshold is kept; only strictly above is dropped.
    a = SegmentProposal(0.0, 4.0, 0.9)
    b = SegmentProposal(0.0, 2.0, 0.8)  # IoU 0.5
    assert nms([a, b], 0.5) == [a, b]


def test_nms_kept_pairs_within_threshold():
    rng = np.random.default_rng(72)
    for _ in range(20):
        cands = []
        for _ in range(15):
            s = float(rng.uniform(0, 8))
            d = float(rng.uniform(0.2, 3))
            cands.append(SegmentProposal(s, s + d, float(rng.uniform(0, 1))))
        kept = nms(cands, 0.5)
        assert set(kept) <= set(cands)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                pi, pj = kept[i], kept[j]
                assert (
                    temporal_iou((pi.start_s, pi.end_s), (pj.start_s, pj.end_s)) <= 0.5
                )
        # Output is sorted best first.
        scores = [p.score for p in kept]
        assert scores == sorted(scores, reverse=True)


# ------------------------------------------------------------------- decode


def test_decode_all_genuine_yields_nothing():
    fas = np.tile([40.0, -40.0], (6, 1))
    assert fas_to_proposals(fas, 2.0) == []


def test_decode_all_forged_yields_full_clip():
    fas = np.tile([-40.0, 40.0], (4, 1))
    props = fas_to_proposals(fas, 2.0)
    assert len(props) == 1
    p = props[0]
    assert p.start_s == 0.0
    assert p.end_s == pytest.approx(2.0, abs=1e-12)
    assert p.score == pytest.approx(1.0, abs=1e-12)
    assert p.kind is None


def test_decode_hand_curve():
    fas = _logits_for([0.25, 0.85, 0.85, 0.25])
    props = fas_to_proposals(fas, 1.0)
    assert len(props) == 2
    top, second = props
    assert (top.start_s, top.end_s) == (1.0, 3.0)
    assert top.score == pytest.approx(0.85, abs=1e-9)
    assert (second.start_s, second.end_s) == (0.0, 4.0)
    assert second.score == pytest.approx(0.55, abs=1e-9)


def test_decode_caps_at_limit_with_stable_ties():
    q = np.tile([0.95, 0.03], 120)
    props = fas_to_proposals(_logits_for(q), 4.0)
    assert len(props) == MAX_PROPOSALS
    starts = [p.start_s for p in props]
    # Equal scores: earlier starts win, in order.
    assert starts == sorted(starts)
    assert starts[0] == 0.0
    for p in props:
        assert p.end_s - p.start_s == pytest.approx(0.25, abs=1e-12)


def test_decode_bounds_and_grid():
    rng = np.random.default_rng(73)
    for _ in range(20):
        fas = rng.standard_normal((16, 2))
        fps = float(rng.uniform(0.5, 10.0))
        for p in fas_to_proposals(fas, fps):
            assert 0.0 <= p.start_s < p.end_s <= 16 / fps + 1e-12
            assert 0.0 <= p.score <= 1.0
            # Frame-grid alignment.
            assert (p.start_s * fps) == pytest.approx(round(p.start_s * fps), abs=1e-9)
            assert (p.end_s * fps) == pytest.approx(round(p.end_s * fps), abs=1e-9)


def test_decode_fused_kind_majority():
    fas = np.array(
        [
            [-40.0, 0.0, 9.0, 0.0],
            [-40.0, 0.0, 9.0, 0.0],
            [-40.0, 0.0, 0.0, 9.0],
        ]
    )
    props = fas_to_proposals(fas, 1.0)
    assert props
    full = max(props, key=lambda p: p.duration)
    assert (full.start_s, full.end_s) == (0.0, 3.0)
    assert full.kind == 2


def test_decode_rejects_bad_fps():
    with pytest.raises(DomainError):
        fas_to_proposals(np.zeros((4, 2)), 0.0)
    with pytest.raises(DomainError):
        fas_to_proposals(np.zeros((4, 2)), -1.0)
