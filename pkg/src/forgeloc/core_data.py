"""Data types and file formats for audio-visual forgery localization.

Feature file layout (little-endian, extension .ftr):

    magic   4 bytes  b"FTR1"
    frames  uint32   T >= 1
    dim     uint32   d >= 1
    fps     float32  > 0
    payload T * d float32, row-major

Manifest: JSON lines, one object per video with keys
    id, visual_path, audio_path, fps, label, segments
where segments is a list of {start_s, end_s, kind} and label follows the
four-class scheme below. Paths are resolved relative to the manifest.

Predictions: JSON lines, one object per video with keys
    id, pred_label, proposals
where proposals is a list of {start_s, end_s, score}.
"""

from __future__ import annotations

import enum
import json
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError, UpsampleError

FEATURE_MAGIC = b"FTR1"
_HEADER = struct.Struct("<4sIIf")


class ForgeryLabel(enum.IntEnum):
    """Video-level class: which streams contain forged content."""

    BOTH_GENUINE = 0
    BOTH_FORGED = 1
    VISUAL_ONLY = 2
    AUDIO_ONLY = 3

    @property
    def visual_forged(self) -> int:
        return 1 if self in (ForgeryLabel.BOTH_FORGED, ForgeryLabel.VISUAL_ONLY) else 0

    @property
    def audio_forged(self) -> int:
        return 1 if self in (ForgeryLabel.BOTH_FORGED, ForgeryLabel.AUDIO_ONLY) else 0

    @property
    def any_forged(self) -> int:
        return 0 if self is ForgeryLabel.BOTH_GENUINE else 1


def derive_binary_labels(label: ForgeryLabel) -> tuple[int, int]:
    """Per-stream binary targets (visual, audio) from the 4-class label."""
    label = ForgeryLabel(label)
    return label.visual_forged, label.audio_forged


@dataclass(frozen=True)
class FeatureSequence:
    """A frames x dim feature matrix with its sampling rate."""

    values: np.ndarray
    fps: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"feature values must be 2-D, got ndim={values.ndim}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"feature values must be nonempty, got shape {values.shape}")
        if not float(self.fps) > 0.0:
            raise DomainError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(values)):
            raise DomainError("feature values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.frames / self.fps


@dataclass(frozen=True)
class SegmentAnnotation:
    """A forged time span [start_s, end_s) tagged with its forgery class."""

    start_s: float
    end_s: float
    kind: int

    def __post_init__(self):
        if not (0.0 <= self.start_s < self.end_s):
            raise DomainError(f"bad segment bounds [{self.start_s}, {self.end_s})")
        if self.kind not in (1, 2, 3):
            raise DomainError(f"segment kind must be 1, 2 or 3, got {self.kind}")


@dataclass(frozen=True)
class VideoSample:
    """One video's feature streams plus its weak (video-level) annotation."""

    id: str
    visual: FeatureSequence
    audio: FeatureSequence
    label: ForgeryLabel
    gt_segments: tuple[SegmentAnnotation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "label", ForgeryLabel(self.label))
        object.__setattr__(self, "gt_segments", tuple(self.gt_segments))
        if (self.label is ForgeryLabel.BOTH_GENUINE) != (len(self.gt_segments) == 0):
            raise DomainError(
                f"video {self.id}: label {int(self.label)} inconsistent with "
                f"{len(self.gt_segments)} ground-truth segments"
            )

    @property
    def aligned(self) -> bool:
        return self.visual.frames == self.audio.frames

    def align(self) -> "VideoSample":
        """Pool the audio stream down to the visual frame count."""
        if self.aligned:
            return self
        return VideoSample(
            id=self.id,
            visual=self.visual,
            audio=align_audio(self.audio, self.visual.frames),
            label=self.label,
            gt_segments=self.gt_segments,
        )


def align_audio(audio: FeatureSequence, target_frames: int) -> FeatureSequence:
    """Mean-pool audio frames into target_frames even contiguous buckets.

    The remainder frames go to the earliest buckets. fps is rescaled so the
    sequence covers the same duration. Upsampling is not supported.
    """
    if target_frames < 1:
        raise DomainError(f"target_frames must be >= 1, got {target_frames}")
    if target_frames > audio.frames:
        raise UpsampleError(
            f"cannot pool {audio.frames} audio frames up to {target_frames}"
        )
    if target_frames == audio.frames:
        return audio
    base, extra = divmod(audio.frames, target_frames)
    pooled = np.empty((target_frames, audio.dim), dtype=np.float64)
    start = 0
    for i in range(target_frames):
        size = base + (1 if i < extra else 0)
        pooled[i] = audio.values[start : start + size].mean(axis=0)
        start += size
    new_fps = audio.fps * target_frames / audio.frames
    return FeatureSequence(pooled, new_fps)


# ------------------------------------------------------------------ file I/O


@contextmanager
def atomic_write(path: str | Path, mode: str = "wb"):
    """Write to a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Write a FeatureSequence as an FTR1 file (values stored as float32)."""
    payload = seq.values.astype(np.float32).tobytes(order="C")
    with atomic_write(path) as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, seq.frames, seq.dim, seq.fps))
        fh.write(payload)


def load_feature_file(path: str | Path) -> FeatureSequence:
    """Read an FTR1 file, widening values to float64."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, frames, dim, fps = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} in field 'magic'")
    if frames < 1:
        raise FormatError(f"{path}: nonpositive value in field 'frames'")
    if dim < 1:
        raise FormatError(f"{path}: nonpositive value in field 'dim'")
    if not fps > 0.0:
        raise FormatError(f"{path}: nonpositive value in field 'fps'")
    expected = frames * dim * 4
    body = raw[_HEADER.size :]
    if len(body) != expected:
        raise FormatError(
            f"{path}: payload holds {len(body)} bytes, expected {expected}"
        )
    values = np.frombuffer(body, dtype="<f4").reshape(frames, dim).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite value in field 'payload'")
    return FeatureSequence(values, float(fps))


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    visual_path: str
    audio_path: str
    fps: float
    label: ForgeryLabel
    gt_segments: tuple[SegmentAnnotation, ...]


def _parse_segments(raw, where: str) -> tuple[SegmentAnnotation, ...]:
    if not isinstance(raw, list):
        raise FormatError(f"{where}: 'segments' must be a list")
    out = []
    for item in raw:
        try:
            out.append(
                SegmentAnnotation(
                    start_s=float(item["start_s"]),
                    end_s=float(item["end_s"]),
                    kind=int(item["kind"]),
                )
            )
        except (KeyError, TypeError, ValueError, DomainError) as exc:
            raise FormatError(f"{where}: bad segment entry: {exc}") from exc
    return tuple(out)


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest; optionally verify referenced files exist."""
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{where}: manifest line must be an object")
            missing = {"id", "visual_path", "audio_path", "fps", "label", "segments"} - set(obj)
            if missing:
                raise FormatError(f"{where}: missing keys {sorted(missing)}")
            vid = str(obj["id"])
            if vid in seen_ids:
                raise FormatError(f"{where}: duplicate id {vid!r}")
            seen_ids.add(vid)
            try:
                label = ForgeryLabel(int(obj["label"]))
            except ValueError as exc:
                raise FormatError(f"{where}: bad label {obj['label']!r}") from exc
            entry = ManifestEntry(
                id=vid,
                visual_path=str(obj["visual_path"]),
                audio_path=str(obj["audio_path"]),
                fps=float(obj["fps"]),
                label=label,
                gt_segments=_parse_segments(obj["segments"], where),
            )
            if check_files:
                for p in (entry.visual_path, entry.audio_path):
                    if not (base / p).is_file():
                        raise FormatError(f"{where}: referenced file missing: {p}")
            entries.append(entry)
    return entries


def save_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    with atomic_write(path, "w") as fh:
        for e in entries:
            fh.write(
                json.dumps(
                    {
                        "id": e.id,
                        "visual_path": e.visual_path,
                        "audio_path": e.audio_path,
                        "fps": e.fps,
                        "label": int(e.label),
                        "segments": [
                            {"start_s": s.start_s, "end_s": s.end_s, "kind": s.kind}
                            for s in e.gt_segments
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_sample(entry: ManifestEntry, base_dir: str | Path) -> VideoSample:
    """Load the feature files behind a manifest entry."""
    base = Path(base_dir)
    return VideoSample(
        id=entry.id,
        visual=load_feature_file(base / entry.visual_path),
        audio=load_feature_file(base / entry.audio_path),
        label=entry.label,
        gt_segments=entry.gt_segments,
    )


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    pred_label: ForgeryLabel
    proposals: tuple  # of proposals.SegmentProposal


def save_predictions(records: list[PredictionRecord], path: str | Path) -> None:
    with atomic_write(path, "w") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "pred_label": int(r.pred_label),
                        "proposals": [
                            {"start_s": p.start_s, "end_s": p.end_s, "score": p.score}
                            for p in r.proposals
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    from .proposals import SegmentProposal

    path = Path(path)
    records: list[PredictionRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: invalid JSON: {exc}") from exc
            missing = {"id", "pred_label", "proposals"} - set(obj)
            if missing:
                raise FormatError(f"{where}: missing keys {sorted(missing)}")
            vid = str(obj["id"])
            if vid in seen:
                raise FormatError(f"{where}: duplicate id {vid!r}")
            seen.add(vid)
            try:
                label = ForgeryLabel(int(obj["pred_label"]))
                props = tuple(
                    SegmentProposal(
                        start_s=float(p["start_s"]),
                        end_s=float(p["end_s"]),
                        score=float(p["score"]),
                    )
                    for p in obj["proposals"]
                )
            except (KeyError, TypeError, ValueError, DomainError) as exc:
                raise FormatError(f"{where}: bad prediction entry: {exc}") from exc
            records.append(PredictionRecord(id=vid, pred_label=label, proposals=props))
    return records
