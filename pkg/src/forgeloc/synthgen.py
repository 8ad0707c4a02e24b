"""Synthetic two-stream corpora with controllable temporal deviation.

Genuine content is a smoothed Gaussian walk plus small per-frame noise.
Forged spans get two extra effects, both scaled by the severity knob
delta: the per-frame noise grows by a factor (1 + delta), which raises
adjacent-frame deviation, and the frames are shifted by delta along a
fixed unit direction, which gives classifiers a learnable trace. With
delta = 0 both effects vanish and forged frames are distributed exactly
like genuine ones.

Every video is generated from its own subseed (splitmix of the corpus
seed and the video index), so generation order and threading cannot
change the output. All random draws for a video happen in a fixed order
that does not depend on delta: the base walk and noise tables are drawn
whether or not they end up rescaled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .core_data import (
    FeatureSequence,
    ForgeryLabel,
    ManifestEntry,
    SegmentAnnotation,
    VideoSample,
    atomic_write,
    load_manifest,
    load_sample,
    save_feature_file,
    save_manifest,
)
from .errors import ConfigError, DomainError
from .losses import MEASURES, temporal_deviation

S_BASE = 1.0

# Stream index for the corpus-level label shuffle; far above any video count.
_LABEL_STREAM = 1 << 48


def splitmix64(seed: int, index: int) -> int:
    """Decorrelated 64-bit subseed for stream `index` of a master seed."""
    mask = (1 << 64) - 1
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return (z ^ (z >> 31)) & mask


@dataclass(frozen=True)
class SynthConfig:
    num_videos: int = 100
    frames: int = 64
    dim_v: int = 16
    dim_a: int = 16
    fps: float = 8.0
    class_mix: tuple[float, float, float, float] = (0.4, 0.2, 0.2, 0.2)
    forgery_ratio_range: tuple[float, float] = (0.2, 0.5)
    max_segments: int = 2
    deviation_amplitude: float = 3.0
    smoothness: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_mix", tuple(float(w) for w in self.class_mix))
        object.__setattr__(
            self, "forgery_ratio_range", tuple(float(r) for r in self.forgery_ratio_range)
        )
        if self.num_videos < 1:
            raise ConfigError(f"num_videos must be >= 1, got {self.num_videos}")
        if self.frames < 8:
            raise ConfigError(f"frames must be >= 8, got {self.frames}")
        if self.dim_v < 1 or self.dim_a < 1:
            raise ConfigError(f"dims must be >= 1, got ({self.dim_v}, {self.dim_a})")
        if not self.fps > 0.0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if len(self.class_mix) != 4:
            raise ConfigError(f"class_mix needs 4 weights, got {len(self.class_mix)}")
        if any(w < 0.0 for w in self.class_mix):
            raise ConfigError("class_mix weights must be nonnegative")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ConfigError(f"class_mix must sum to 1, got {sum(self.class_mix)}")
        if len(self.forgery_ratio_range) != 2:
            raise ConfigError("forgery_ratio_range must be (lo, hi)")
        lo, hi = self.forgery_ratio_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"need 0 < lo <= hi < 1, got ({lo}, {hi})")
        if self.max_segments < 1:
            raise ConfigError(f"max_segments must be >= 1, got {self.max_segments}")
        if self.deviation_amplitude < 0.0:
            raise ConfigError(
                f"deviation_amplitude must be >= 0, got {self.deviation_amplitude}"
            )
        if not (0.0 < self.smoothness <= 1.0):
            raise ConfigError(f"smoothness must be in (0, 1], got {self.smoothness}")
        # Worst case packing: longest total span plus one-frame gaps between
        # the maximum number of segments must fit in the clip.
        longest = max(1, int(round(hi * self.frames)))
        if longest + (self.max_segments - 1) > self.frames:
            raise ConfigError(
                f"forgery_ratio_range hi={hi} with max_segments={self.max_segments} "
                f"cannot be packed into {self.frames} frames"
            )


def _class_counts(mix: tuple[float, ...], n: int) -> list[int]:
    """Largest-remainder apportionment of n videos over the class weights."""
    raw = [w * n for w in mix]
    counts = [int(x) for x in raw]
    short = n - sum(counts)
    order = sorted(range(len(mix)), key=lambda j: (-(raw[j] - counts[j]), j))
    for j in order[:short]:
        counts[j] += 1
    return counts


def _assign_labels(cfg: SynthConfig) -> list[ForgeryLabel]:
    counts = _class_counts(cfg.class_mix, cfg.num_videos)
    labels = [ForgeryLabel(c) for c in range(4) for _ in range(counts[c])]
    rng = np.random.default_rng(splitmix64(cfg.seed, _LABEL_STREAM))
    perm = rng.permutation(cfg.num_videos)
    return [labels[i] for i in perm]


def _place_segments(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple[int, int]]:
    """Non-overlapping forged frame runs [a, b) with >= 1 genuine frame between."""
    t = cfg.frames
    lo, hi = cfg.forgery_ratio_range
    ratio = rng.uniform(lo, hi)
    total = max(1, int(round(ratio * t)))
    k = int(rng.integers(1, min(cfg.max_segments, total) + 1))
    # Split `total` into k parts of >= 1 frame via distinct cut positions.
    if k > 1:
        cuts = np.sort(rng.choice(total - 1, size=k - 1, replace=False)) + 1
        lengths = np.diff(np.concatenate([[0], cuts, [total]])).tolist()
    else:
        lengths = [total]
    # Distribute the leftover frames over k+1 gap slots (ends may be empty,
    # interior gaps get a mandatory extra frame).
    slack = t - total - (k - 1)
    picks = np.sort(rng.choice(slack + k, size=k, replace=False))
    gaps = [int(picks[0])]
    gaps += [int(picks[j] - picks[j - 1] - 1) for j in range(1, k)]
    segments = []
    cursor = gaps[0]
    for j, length in enumerate(lengths):
        start = cursor
        stop = start + int(length)
        segments.append((start, stop))
        cursor = stop + 1 + (gaps[j + 1] if j + 1 < len(gaps) else 0)
    return segments


def _masks_for_label(
    label: ForgeryLabel, segments: list[tuple[int, int]], frames: int
) -> tuple[np.ndarray, np.ndarray]:
    visual = np.zeros(frames, dtype=bool)
    audio = np.zeros(frames, dtype=bool)
    for a, b in segments:
        if label.visual_forged:
            visual[a:b] = True
        if label.audio_forged:
            audio[a:b] = True
    return visual, audio


def _stream(
    rng: np.random.Generator, frames: int, dim: int, mask: np.ndarray, cfg: SynthConfig
) -> np.ndarray:
    alpha = cfg.smoothness
    delta = cfg.deviation_amplitude
    steps = rng.standard_normal((frames, dim))
    noise = rng.standard_normal((frames, dim))
    walk = np.empty((frames, dim))
    walk[0] = alpha * S_BASE * steps[0]
    for t in range(1, frames):
        walk[t] = (1.0 - alpha) * walk[t - 1] + alpha * S_BASE * steps[t]
    forged = mask.astype(np.float64)
    noise_scale = S_BASE * (1.0 + delta * forged)
    shift_dir = np.ones(dim) / np.sqrt(dim)
    return walk + noise * noise_scale[:, None] + (delta * S_BASE * forged)[:, None] * shift_dir


def generate_video(cfg: SynthConfig, index: int, label: ForgeryLabel) -> VideoSample:
    """Generate one video deterministically from (cfg.seed, index)."""
    rng = np.random.default_rng(splitmix64(cfg.seed, index))
    if label is ForgeryLabel.BOTH_GENUINE:
        segments: list[tuple[int, int]] = []
    else:
        segments = _place_segments(rng, cfg)
    visual_mask, audio_mask = _masks_for_label(label, segments, cfg.frames)
    visual = _stream(rng, cfg.frames, cfg.dim_v, visual_mask, cfg)
    audio = _stream(rng, cfg.frames, cfg.dim_a, audio_mask, cfg)
    kind = {
        ForgeryLabel.BOTH_FORGED: 1,
        ForgeryLabel.VISUAL_ONLY: 2,
        ForgeryLabel.AUDIO_ONLY: 3,
    }.get(label)
    gt = tuple(
        SegmentAnnotation(start_s=a / cfg.fps, end_s=b / cfg.fps, kind=kind)
        for a, b in segments
    )
    return VideoSample(
        id=f"v{index:05d}",
        visual=FeatureSequence(visual, cfg.fps),
        audio=FeatureSequence(audio, cfg.fps),
        label=label,
        gt_segments=gt,
    )


def generate_samples(cfg: SynthConfig) -> list[VideoSample]:
    """The whole corpus in memory, in video-index order."""
    labels = _assign_labels(cfg)
    return [generate_video(cfg, i, labels[i]) for i in range(cfg.num_videos)]


def write_corpus(
    samples: list[VideoSample], cfg: SynthConfig, out_dir: str | Path
) -> list[ManifestEntry]:
    out = Path(out_dir)
    entries = []
    for s in samples:
        visual_path = f"{s.id}_visual.ftr"
        audio_path = f"{s.id}_audio.ftr"
        save_feature_file(s.visual, out / visual_path)
        save_feature_file(s.audio, out / audio_path)
        entries.append(
            ManifestEntry(
                id=s.id,
                visual_path=visual_path,
                audio_path=audio_path,
                fps=cfg.fps,
                label=s.label,
                gt_segments=s.gt_segments,
            )
        )
    save_manifest(entries, out / "manifest.jsonl")
    with atomic_write(out / "manifest.meta.json", "w") as fh:
        json.dump({"seed": cfg.seed, "config": asdict(cfg)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return entries


def generate_corpus(cfg: SynthConfig, out_dir: str | Path) -> list[ManifestEntry]:
    """Generate and persist a corpus; returns the manifest entries."""
    return write_corpus(generate_samples(cfg), cfg, out_dir)


def corpus_deviation_report(manifest_path: str | Path, measure: str) -> dict:
    """Per-class, per-stream temporal deviation statistics for a corpus.

    Audio is pooled to the visual frame count first, so the numbers match
    what the model pipeline would see.
    """
    if measure not in MEASURES:
        raise ConfigError(f"unknown deviation measure {measure!r}")
    entries = load_manifest(manifest_path)
    if not entries:
        raise DomainError(f"manifest {manifest_path} lists no videos")
    base = Path(manifest_path).parent
    per_class: dict[int, dict[str, list[float]]] = {}
    for entry in entries:
        sample = load_sample(entry, base).align()
        bucket = per_class.setdefault(int(entry.label), {"visual": [], "audio": []})
        bucket["visual"].append(temporal_deviation(sample.visual.values, measure))
        bucket["audio"].append(temporal_deviation(sample.audio.values, measure))
    report: dict = {"measure": measure, "classes": {}}
    for label in sorted(per_class):
        streams = {}
        for stream in ("visual", "audio"):
            vals = np.asarray(per_class[label][stream])
            streams[stream] = {
                "mean": float(vals.mean()),
                "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "count": int(vals.size),
            }
        report["classes"][str(label)] = streams
    return report
