"""Turn framewise activation sequences into scored time segments.

A forged-probability curve is thresholded at 0.1 .. 0.9; every maximal
run of frames above a threshold becomes a candidate segment scored by its
mean probability. Candidates are pooled over thresholds, deduplicated,
pruned with temporal NMS and returned best first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import DomainError, ShapeError

THRESHOLDS = tuple(i / 10.0 for i in range(1, 10))
NMS_IOU = 0.5
MAX_PROPOSALS = 100


@dataclass(frozen=True)
class SegmentProposal:
    """A scored candidate forged span in seconds."""

    start_s: float
    end_s: float
    score: float
    kind: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.start_s < self.end_s):
            raise DomainError(f"bad proposal bounds [{self.start_s}, {self.end_s})")
        if not (0.0 <= self.score <= 1.0):
            raise DomainError(f"proposal score {self.score} outside [0, 1]")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


def forged_curve(fas: np.ndarray) -> np.ndarray:
    """Per-frame forged probability from a logit matrix.

    Binary heads (2 classes) give the softmax probability of class 1.
    The fused head (4 classes) gives 1 minus the probability of class 0,
    i.e. the probability that anything is forged.
    """
    fas = np.asarray(fas, dtype=np.float64)
    if fas.ndim != 2 or fas.shape[1] not in (2, 4):
        raise ShapeError(f"fas must be Tx2 or Tx4, got {fas.shape}")
    probs = np.stack([nk.softmax_vector(row) for row in fas])
    if fas.shape[1] == 2:
        return probs[:, 1]
    return 1.0 - probs[:, 0]


def runs_at_threshold(q: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Maximal runs of frames with q[t] >= threshold, as [start, stop) pairs."""
    runs: list[tuple[int, int]] = []
    start = None
    for t, value in enumerate(q):
        if value >= threshold:
            if start is None:
                start = t
        elif start is not None:
            runs.append((start, t))
            start = None
    if start is not None:
        runs.append((start, len(q)))
    return runs


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two [start, end) intervals in seconds."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _order_key(p: SegmentProposal):
    # Best score first; ties broken by earlier start, then longer duration.
    return (-p.score, p.start_s, -(p.end_s - p.start_s))


def nms(candidates: list[SegmentProposal], iou_threshold: float) -> list[SegmentProposal]:
    """Greedy temporal non-maximum suppression.

    Repeatedly keeps the best remaining proposal and drops every remaining
    one whose IoU with it is strictly above the threshold.
    """
    remaining = sorted(candidates, key=_order_key)
    kept: list[SegmentProposal] = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [
            p
            for p in remaining
            if temporal_iou((best.start_s, best.end_s), (p.start_s, p.end_s)) <= iou_threshold
        ]
    return kept


def fas_to_proposals(fas: np.ndarray, fps: float) -> list[SegmentProposal]:
    """Decode a logit matrix into at most 100 scored segment proposals.

    Frame run [a, b) at any threshold maps to seconds [a/fps, b/fps) and is
    scored by the mean forged probability over its frames. Identical
    candidates produced at several thresholds collapse to one. For the
    4-class fused head each proposal also carries the majority forged kind
    over its frames (metadata only, never serialized or scored).
    """
    if not fps > 0.0:
        raise DomainError(f"fps must be positive, got {fps}")
    fas = np.asarray(fas, dtype=np.float64)
    q = forged_curve(fas)
    kinds = None
    if fas.shape[1] == 4:
        # Majority vote among the three forged classes, per frame.
        frame_kind = 1 + np.argmax(fas[:, 1:], axis=1)
        kinds = frame_kind
    seen: set[tuple[float, float, float]] = set()
    candidates: list[SegmentProposal] = []
    for threshold in THRESHOLDS:
        for a, b in runs_at_threshold(q, threshold):
            start_s = a / fps
            end_s = b / fps
            score = float(np.mean(q[a:b]))
            key = (start_s, end_s, score)
            if key in seen:
                continue
            seen.add(key)
            kind = None
            if kinds is not None:
                counts = np.bincount(kinds[a:b], minlength=4)
                kind = int(np.argmax(counts[1:]) + 1)
            candidates.append(
                SegmentProposal(start_s=start_s, end_s=end_s, score=score, kind=kind)
            )
    kept = nms(candidates, NMS_IOU)
    kept.sort(key=_order_key)
    return kept[:MAX_PROPOSALS]
