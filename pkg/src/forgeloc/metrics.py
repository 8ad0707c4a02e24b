"""Detection metrics: average precision over IoU grids and average recall.

Proposals are pooled across videos, sorted best first (score, then video
id, then start, then end), and greedily matched against unmatched ground
truths of their own video. AP integrates the precision envelope over
recall (all-point interpolation); as every true positive raises recall by
exactly 1/n_gt, the area is the sum of envelope precisions at true
positive ranks divided by n_gt.

oracle_eval recomputes everything with independently written enumeration
code (plus optimal bipartite matching for recall) and must agree with the
fast path bit for bit. Both paths therefore share the same float-level
definitions: one IoU formula, precision as tp/rank, summation via
math.fsum. Only the algorithms around those definitions differ.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import fsum
from typing import Mapping, Sequence

from .errors import ConfigError, OracleScopeError
from .proposals import SegmentProposal, temporal_iou

ORACLE_MAX_PROPOSALS = 32

Interval = tuple[float, float]


@dataclass(frozen=True)
class EvalConfig:
    map_iou_grid: tuple[float, ...] = tuple(i / 10.0 for i in range(1, 8))
    ar_proposal_counts: tuple[int, ...] = (20, 10, 5, 2)
    ar_iou_grid: tuple[float, ...] = tuple(i / 100.0 for i in range(50, 100, 5))

    def __post_init__(self):
        object.__setattr__(self, "map_iou_grid", tuple(self.map_iou_grid))
        object.__setattr__(self, "ar_proposal_counts", tuple(int(k) for k in self.ar_proposal_counts))
        object.__setattr__(self, "ar_iou_grid", tuple(self.ar_iou_grid))
        for name in ("map_iou_grid", "ar_iou_grid"):
            grid = getattr(self, name)
            if not grid:
                raise ConfigError(f"{name} must not be empty")
            if any(not (0.0 < t <= 1.0) for t in grid):
                raise ConfigError(f"{name} values must lie in (0, 1]")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError(f"{name} must be strictly increasing")
        if not self.ar_proposal_counts:
            raise ConfigError("ar_proposal_counts must not be empty")
        if any(k < 1 for k in self.ar_proposal_counts):
            raise ConfigError("ar_proposal_counts must be positive")


def _canonical(props: Sequence[SegmentProposal]) -> list[SegmentProposal]:
    # Deterministic per-video order: score desc, earlier start, longer first.
    return sorted(props, key=lambda p: (-p.score, p.start_s, -(p.end_s - p.start_s)))


def _pooled(predictions: Mapping[str, Sequence[SegmentProposal]]):
    flat = [
        (vid, p)
        for vid, props in predictions.items()
        for p in props
    ]
    flat.sort(key=lambda vp: (-vp[1].score, vp[0], vp[1].start_s, vp[1].end_s))
    return flat


def _greedy_tp_flags(
    pooled: list[tuple[str, SegmentProposal]],
    ground_truths: Mapping[str, Sequence[Interval]],
    iou_threshold: float,
) -> list[bool]:
    taken: dict[str, set[int]] = {vid: set() for vid in ground_truths}
    flags: list[bool] = []
    for vid, prop in pooled:
        gts = ground_truths.get(vid, ())
        used = taken.setdefault(vid, set())
        best = None
        for idx, gt in enumerate(gts):
            if idx in used:
                continue
            iou = temporal_iou((prop.start_s, prop.end_s), gt)
            if iou < iou_threshold:
                continue
            # Highest IoU wins; ties to the earlier, then first-listed gt.
            cand = (iou, -gt[0], -idx)
            if best is None or cand > best[0]:
                best = (cand, idx)
        if best is None:
            flags.append(False)
        else:
            used.add(best[1])
            flags.append(True)
    return flags


def average_precision(
    predictions: Mapping[str, Sequence[SegmentProposal]],
    ground_truths: Mapping[str, Sequence[Interval]],
    iou_threshold: float,
) -> float:
    """All-point interpolated AP at one IoU threshold."""
    n_gt = sum(len(v) for v in ground_truths.values())
    n_props = sum(len(v) for v in predictions.values())
    if n_gt == 0:
        return 0.0 if n_props > 0 else 1.0
    pooled = _pooled(predictions)
    flags = _greedy_tp_flags(pooled, ground_truths, iou_threshold)
    tp = 0
    precisions: list[float] = []
    for rank, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
        precisions.append(tp / rank)
    # Right-to-left running max gives the precision envelope.
    envelope = precisions[:]
    for i in range(len(envelope) - 2, -1, -1):
        if envelope[i + 1] > envelope[i]:
            envelope[i] = envelope[i + 1]
    inv_n = 1.0 / n_gt
    return fsum(envelope[i] * inv_n for i, flag in enumerate(flags) if flag)


def map_grid(
    predictions: Mapping[str, Sequence[SegmentProposal]],
    ground_truths: Mapping[str, Sequence[Interval]],
    cfg: EvalConfig,
) -> dict:
    """AP at every threshold of the grid plus their arithmetic mean."""
    per_iou = {
        thr: average_precision(predictions, ground_truths, thr)
        for thr in cfg.map_iou_grid
    }
    aps = [per_iou[thr] for thr in cfg.map_iou_grid]
    return {"per_iou": per_iou, "avg": fsum(aps) / len(aps)}


def _greedy_matched_count(
    props: list[SegmentProposal], gts: Sequence[Interval], iou_threshold: float
) -> int:
    used: set[int] = set()
    for prop in props:
        best = None
        for idx, gt in enumerate(gts):
            if idx in used:
                continue
            iou = temporal_iou((prop.start_s, prop.end_s), gt)
            if iou < iou_threshold:
                continue
            cand = (iou, -gt[0], -idx)
            if best is None or cand > best[0]:
                best = (cand, idx)
        if best is not None:
            used.add(best[1])
    return len(used)


def average_recall(
    predictions: Mapping[str, Sequence[SegmentProposal]],
    ground_truths: Mapping[str, Sequence[Interval]],
    k: int,
    cfg: EvalConfig,
) -> float:
    """Mean recall over the IoU grid with at most k proposals per video."""
    if k < 1:
        raise ConfigError(f"proposal budget must be >= 1, got {k}")
    total_gts = sum(len(v) for v in ground_truths.values())
    if total_gts == 0:
        return 1.0
    truncated = {vid: _canonical(props)[:k] for vid, props in predictions.items()}
    recalls: list[float] = []
    for thr in cfg.ar_iou_grid:
        matched = 0
        for vid, gts in ground_truths.items():
            if not gts:
                continue
            matched += _greedy_matched_count(truncated.get(vid, []), gts, thr)
        recalls.append(matched / total_gts)
    return fsum(recalls) / len(recalls)


def accuracy(pred_labels: Mapping[str, int], true_labels: Mapping[str, int]) -> float:
    """Fraction of videos whose predicted class equals the true class."""
    if not true_labels:
        raise ConfigError("accuracy needs at least one labeled video")
    correct = sum(
        1 for vid, label in true_labels.items() if pred_labels.get(vid) == label
    )
    return correct / len(true_labels)


# ------------------------------------------------------------------- oracle


def _oracle_ap(predictions, ground_truths, iou_threshold: float) -> float:
    """AP by explicit enumeration of the precision-recall point set."""
    gts_per_video = {vid: list(v) for vid, v in ground_truths.items()}
    n_gt = 0
    for v in gts_per_video.values():
        n_gt += len(v)
    every_proposal = []
    for vid, props in predictions.items():
        for p in props:
            every_proposal.append((vid, p))
    if n_gt == 0:
        return 0.0 if every_proposal else 1.0
    every_proposal.sort(key=lambda vp: (-vp[1].score, vp[0], vp[1].start_s, vp[1].end_s))

    matched: dict[str, list[bool]] = {vid: [False] * len(v) for vid, v in gts_per_video.items()}
    outcomes: list[bool] = []
    for vid, prop in every_proposal:
        gts = gts_per_video.get(vid, [])
        flags = matched.get(vid, [])
        chosen = -1
        chosen_iou = -1.0
        chosen_start = 0.0
        for idx in range(len(gts)):
            if flags[idx]:
                continue
            iou = temporal_iou((prop.start_s, prop.end_s), gts[idx])
            if iou < iou_threshold:
                continue
            better = False
            if iou > chosen_iou:
                better = True
            elif iou == chosen_iou and gts[idx][0] < chosen_start:
                better = True
            if better:
                chosen, chosen_iou, chosen_start = idx, iou, gts[idx][0]
        if chosen >= 0:
            flags[chosen] = True
            outcomes.append(True)
        else:
            outcomes.append(False)

    # PR point at each rank; envelope precision looked up by suffix max.
    precisions = []
    tp = 0
    for rank in range(1, len(outcomes) + 1):
        if outcomes[rank - 1]:
            tp += 1
        precisions.append(tp / rank)
    inv_n = 1.0 / n_gt
    terms = []
    for i, hit in enumerate(outcomes):
        if hit:
            terms.append(max(precisions[i:]) * inv_n)
    return fsum(terms)


def _oracle_greedy_recall(props, gts, iou_threshold: float) -> int:
    remaining = list(range(len(gts)))
    count = 0
    for prop in props:
        pick = -1
        pick_key = None
        for idx in remaining:
            iou = temporal_iou((prop.start_s, prop.end_s), gts[idx])
            if iou < iou_threshold:
                continue
            key = (iou, -gts[idx][0], -idx)
            if pick_key is None or key > pick_key:
                pick, pick_key = idx, key
        if pick >= 0:
            remaining.remove(pick)
            count += 1
    return count


def _optimal_matched_count(props, gts, iou_threshold: float) -> int:
    """Maximum bipartite matching size via augmenting paths."""
    edges = [
        [
            temporal_iou((p.start_s, p.end_s), gt) >= iou_threshold
            for gt in gts
        ]
        for p in props
    ]
    owner = [-1] * len(gts)

    def augment(i: int, seen: list[bool]) -> bool:
        for j in range(len(gts)):
            if edges[i][j] and not seen[j]:
                seen[j] = True
                if owner[j] < 0 or augment(owner[j], seen):
                    owner[j] = i
                    return True
        return False

    size = 0
    for i in range(len(props)):
        if augment(i, [False] * len(gts)):
            size += 1
    return size


def oracle_eval(
    predictions: Mapping[str, Sequence[SegmentProposal]],
    ground_truths: Mapping[str, Sequence[Interval]],
    cfg: EvalConfig,
) -> dict:
    """Slow reference evaluation for small datasets.

    Returns the same mAP and (greedy) AR numbers as the fast path, plus
    optimal-matching AR and a list of any greedy-vs-optimal divergences.
    """
    for vid, props in predictions.items():
        if len(props) > ORACLE_MAX_PROPOSALS:
            raise OracleScopeError(
                f"video {vid!r} has {len(props)} proposals, oracle supports "
                f"at most {ORACLE_MAX_PROPOSALS}"
            )
    per_iou = {thr: _oracle_ap(predictions, ground_truths, thr) for thr in cfg.map_iou_grid}
    aps = [per_iou[thr] for thr in cfg.map_iou_grid]

    total_gts = sum(len(v) for v in ground_truths.values())
    ar: dict[int, float] = {}
    ar_optimal: dict[int, float] = {}
    divergences: list[dict] = []
    for k in cfg.ar_proposal_counts:
        if total_gts == 0:
            ar[k] = 1.0
            ar_optimal[k] = 1.0
            continue
        greedy_recalls = []
        optimal_recalls = []
        for thr in cfg.ar_iou_grid:
            greedy_total = 0
            optimal_total = 0
            for vid, gts in ground_truths.items():
                if not gts:
                    continue
                props = _canonical(predictions.get(vid, []))[:k]
                g = _oracle_greedy_recall(props, list(gts), thr)
                o = _optimal_matched_count(props, list(gts), thr)
                greedy_total += g
                optimal_total += o
                if g != o:
                    divergences.append(
                        {"video": vid, "k": k, "iou": thr, "greedy": g, "optimal": o}
                    )
            greedy_recalls.append(greedy_total / total_gts)
            optimal_recalls.append(optimal_total / total_gts)
        ar[k] = fsum(greedy_recalls) / len(greedy_recalls)
        ar_optimal[k] = fsum(optimal_recalls) / len(optimal_recalls)

    return {
        "map": {"per_iou": per_iou, "avg": fsum(aps) / len(aps)},
        "ar": ar,
        "ar_optimal": ar_optimal,
        "divergences": divergences,
    }
