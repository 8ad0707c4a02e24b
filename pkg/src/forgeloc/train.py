"""Training: Adam over the full enhancement + head parameter set.

Gradients come from the reverse-mode graph in autodiff; gradcheck
verifies them coordinate by coordinate against central finite
differences computed purely from forward evaluations.

Checkpoint container (little-endian):

    magic    4 bytes  b"WMMT"
    version  uint32   1
    nrec     uint32   number of tensor records
    record   uint32 name length | name UTF-8 | uint32 ndim |
             uint32 dims[ndim] | float64 payload, row-major
    tail     uint64 JSON length | UTF-8 JSON
             {"format_version", "epoch", "adam_step", "config"}

Tensor records hold every model parameter once by name, plus the Adam
moments as adam.m.<name> / adam.v.<name>. Payloads are float64, so a
load(save(x)) round trip is bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .core_data import FeatureSequence, ForgeryLabel, SegmentAnnotation, VideoSample, atomic_write
from .enhance import EnhanceParams, TppaParams
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .losses import DeviationConfig, LossWeights, MEASURES, sample_loss_graph
from .model import HeadParams, ModelParams, ParamNodes, forward_graph
from .synthgen import splitmix64

CHECKPOINT_MAGIC = b"WMMT"
CHECKPOINT_VERSION = 1

# Stream offset separating per-epoch shuffle seeds from other seed uses.
_SHUFFLE_STREAM = 1 << 32


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    d_out: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    deviation: DeviationConfig = field(default_factory=DeviationConfig)
    detach_cross_modal: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # learning_rate 0 is allowed: it makes the loop a measurement pass.
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.d_out < 1:
            raise ConfigError(f"d_out must be >= 1, got {self.d_out}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        if "weights" in raw:
            raw["weights"] = LossWeights(**raw["weights"])
        if "deviation" in raw:
            dev = dict(raw["deviation"])
            if "objectives" in dev:
                dev["objectives"] = tuple(dev["objectives"])
            raw["deviation"] = DeviationConfig(**dev)
        return cls(**raw)


def init_params(dim_v: int, dim_a: int, cfg: TrainConfig) -> ModelParams:
    """Seeded uniform(-1/sqrt(d_in), 1/sqrt(d_in)) projections, zero biases.

    Matrices are drawn in checkpoint name order so the init stream is
    stable across runs.
    """
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d_out

    def mat(d_in: int, d_out: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(d_in)
        return rng.uniform(-bound, bound, size=(d_in, d_out))

    def triple(d_in: int) -> TppaParams:
        return TppaParams(w_qry=mat(d_in, d), w_key=mat(d_in, d), w_vle=mat(d_in, d))

    enhance = EnhanceParams(
        intra_visual=triple(dim_v),
        intra_audio=triple(dim_a),
        inter_visual=triple(d),
        inter_audio=triple(d),
    )
    return ModelParams(
        enhance=enhance,
        head_visual=HeadParams(weight=mat(d, 2), bias=np.zeros(2)),
        head_audio=HeadParams(weight=mat(d, 2), bias=np.zeros(2)),
        head_multimodal=HeadParams(weight=mat(2 * d, 4), bias=np.zeros(4)),
    )


def batch_loss_value(samples: Sequence[VideoSample], params: ModelParams, cfg: TrainConfig) -> float:
    """Batch-mean total loss from forward evaluation only (no gradients)."""
    nodes = ParamNodes.build(params, trainable=False)
    total = 0.0
    for s in samples:
        fwd = forward_graph(
            ad.const(s.visual.values),
            ad.const(s.audio.values),
            nodes,
            detach_cross=cfg.detach_cross_modal,
        )
        total += float(sample_loss_graph(s, fwd, cfg.weights, cfg.deviation).value)
    return total * (1.0 / len(samples))


def grad_batch(
    samples: Sequence[VideoSample], params: ModelParams, cfg: TrainConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean loss and its gradient for every named parameter."""
    if not samples:
        raise ConfigError("grad_batch needs a nonempty batch")
    nodes = ParamNodes.build(params, trainable=True)
    losses = []
    for s in samples:
        fwd = forward_graph(
            ad.const(s.visual.values),
            ad.const(s.audio.values),
            nodes,
            detach_cross=cfg.detach_cross_modal,
        )
        loss = sample_loss_graph(s, fwd, cfg.weights, cfg.deviation)
        if not np.isfinite(float(loss.value)):
            raise NumericError(f"non-finite loss on sample {s.id}")
        losses.append(loss)
    total = ad.mean_of(losses)
    ad.backward(total)
    grads = {name: node.grad.copy() for name, node in nodes.named_nodes().items()}
    return float(total.value), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: ModelParams) -> "AdamState":
        named = params.named_arrays()
        return cls(
            m={k: np.zeros_like(a) for k, a in named.items()},
            v={k: np.zeros_like(a) for k, a in named.items()},
            step=0,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step,
        )


def adam_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig
) -> ModelParams:
    """One Adam update with bias correction; returns the new parameters."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_arrays: dict[str, np.ndarray] = {}
    for name, value in params.named_arrays().items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        new_arrays[name] = value - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return ModelParams.from_named(new_arrays)


@dataclass(frozen=True)
class Checkpoint:
    params: ModelParams
    adam: AdamState
    epoch: int
    config: TrainConfig


@dataclass(frozen=True)
class TrainResult:
    checkpoint: Checkpoint
    epoch_logs: list[dict]
    diverged: bool = False


def _check_dims(samples: Sequence[VideoSample]) -> tuple[int, int]:
    dim_v = samples[0].visual.dim
    dim_a = samples[0].audio.dim
    for s in samples:
        if s.visual.dim != dim_v or s.audio.dim != dim_a:
            raise ShapeError(
                f"sample {s.id} dims ({s.visual.dim}, {s.audio.dim}) differ "
                f"from corpus dims ({dim_v}, {dim_a})"
            )
    return dim_v, dim_a


def train_loop(
    samples: Sequence[VideoSample],
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Seeded mini-batch Adam training over the corpus.

    Deterministic for a fixed (samples, cfg): init and per-epoch shuffles
    are seeded, and resuming from epoch e replays exactly the shuffles an
    uninterrupted run would have used. A non-finite loss aborts the run
    and reports the state at the end of the last completed epoch.
    """
    if not samples:
        raise ConfigError("train_loop needs at least one sample")
    samples = [s.align() for s in samples]
    dim_v, dim_a = _check_dims(samples)

    if resume is not None:
        params = resume.params
        state = resume.adam.copy()
        start_epoch = resume.epoch
    else:
        params = init_params(dim_v, dim_a, cfg)
        state = AdamState.fresh(params)
        start_epoch = 0

    good = Checkpoint(params=params, adam=state.copy(), epoch=start_epoch, config=cfg)
    epoch_logs: list[dict] = []
    n = len(samples)
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng(splitmix64(cfg.seed, _SHUFFLE_STREAM + epoch)).permutation(n)
        loss_sum = 0.0
        try:
            for lo in range(0, n, cfg.batch_size):
                batch = [samples[i] for i in order[lo : lo + cfg.batch_size]]
                loss, grads = grad_batch(batch, params, cfg)
                params = adam_step(params, grads, state, cfg)
                loss_sum += loss * len(batch)
        except NumericError:
            return TrainResult(checkpoint=good, epoch_logs=epoch_logs, diverged=True)
        epoch_logs.append({"epoch": epoch + 1, "mean_loss": loss_sum / n})
        good = Checkpoint(params=params, adam=state.copy(), epoch=epoch + 1, config=cfg)
    return TrainResult(checkpoint=good, epoch_logs=epoch_logs, diverged=False)


# --------------------------------------------------------------- checkpoints


def _named_tensors(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = dict(ckpt.params.named_arrays())
    for name, arr in ckpt.adam.m.items():
        out[f"adam.m.{name}"] = arr
    for name, arr in ckpt.adam.v.items():
        out[f"adam.v.{name}"] = arr
    return out


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    tensors = _named_tensors(ckpt)
    tail = json.dumps(
        {
            "format_version": CHECKPOINT_VERSION,
            "epoch": ckpt.epoch,
            "adam_step": ckpt.adam.step,
            "config": ckpt.config.to_dict(),
        },
        sort_keys=True,
    ).encode("utf-8")
    with atomic_write(path) as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", len(tail)))
        fh.write(tail)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        piece = raw[off : off + n]
        off += n
        return piece

    if take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic in field 'magic'")
    version, nrec = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(nrec):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        payload = take(8 * count)
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    (tail_len,) = struct.unpack("<Q", take(8))
    try:
        meta = json.loads(take(tail_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad metadata JSON: {exc}") from exc
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")

    cfg = TrainConfig.from_dict(meta["config"])
    params_named = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name.startswith("adam.m."):
            adam_m[name[len("adam.m.") :]] = arr
        elif name.startswith("adam.v."):
            adam_v[name[len("adam.v.") :]] = arr
        else:
            params_named[name] = arr
    try:
        params = ModelParams.from_named(params_named)
    except KeyError as exc:
        raise FormatError(f"{path}: missing tensor {exc}") from exc
    missing = set(params_named) - set(adam_m) | set(params_named) - set(adam_v)
    if missing:
        raise FormatError(f"{path}: missing optimizer moments for {sorted(missing)}")
    state = AdamState(m=adam_m, v=adam_v, step=int(meta["adam_step"]))
    return Checkpoint(params=params, adam=state, epoch=int(meta["epoch"]), config=cfg)


# ----------------------------------------------------------------- gradcheck

FD_STEP = 1e-5
GRADCHECK_ABS_TOL = 1e-6
GRADCHECK_REL_TOL = 1e-4


def _tiny_samples(rng: np.random.Generator, frames: int, dim_v: int, dim_a: int, batch: int, fps: float = 1.0):
    samples = []
    for i in range(batch):
        label = ForgeryLabel(int(rng.integers(0, 4)))
        gt = ()
        if label is not ForgeryLabel.BOTH_GENUINE:
            gt = (SegmentAnnotation(0.0, 1.0 / fps, kind=int(label)),)
        samples.append(
            VideoSample(
                id=f"tiny{i}",
                visual=FeatureSequence(rng.standard_normal((frames, dim_v)), fps),
                audio=FeatureSequence(rng.standard_normal((frames, dim_a)), fps),
                label=label,
                gt_segments=gt,
            )
        )
    return samples


def gradcheck(
    cfg: TrainConfig,
    seed: int = 0,
    abs_tol: float = GRADCHECK_ABS_TOL,
    rel_tol: float = GRADCHECK_REL_TOL,
    frames: int = 6,
    dim_v: int = 3,
    dim_a: int = 3,
    batch: int = 2,
) -> dict:
    """Compare analytic gradients to central finite differences.

    The reference values use forward evaluation only (step FD_STEP), so
    they are independent of the backward rules being checked. A
    coordinate passes when the difference is within abs_tol or within
    rel_tol of the larger magnitude.
    """
    rng = np.random.default_rng(seed)
    samples = _tiny_samples(rng, frames, dim_v, dim_a, batch)
    params = init_params(dim_v, dim_a, replace(cfg, seed=seed))

    _, grads = grad_batch(samples, params, cfg)

    named = {k: a.copy() for k, a in params.named_arrays().items()}
    max_abs = 0.0
    max_rel = 0.0
    worst = None
    n_coords = 0
    failures = 0
    for name, arr in named.items():
        flat = arr.reshape(-1)
        g_flat = grads[name].reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + FD_STEP
            up = batch_loss_value(samples, ModelParams.from_named(named), cfg)
            flat[j] = keep - FD_STEP
            down = batch_loss_value(samples, ModelParams.from_named(named), cfg)
            flat[j] = keep
            fd = (up - down) / (2.0 * FD_STEP)
            a = float(g_flat[j])
            diff = abs(a - fd)
            ref = max(abs(a), abs(fd))
            rel = diff / ref if ref > 0.0 else 0.0
            if diff > max_abs:
                max_abs = diff
                worst = f"{name}[{j}]"
            max_rel = max(max_rel, rel)
            if not (diff <= abs_tol or diff <= rel_tol * ref):
                failures += 1
            n_coords += 1
    return {
        "passed": failures == 0,
        "failures": failures,
        "n_coords": n_coords,
        "max_abs_err": max_abs,
        "max_rel_err": max_rel,
        "worst_coord": worst,
        "abs_tol": abs_tol,
        "rel_tol": rel_tol,
        "measure": cfg.deviation.measure,
        "objectives": list(cfg.deviation.objectives),
    }


def gradcheck_all_measures(
    seed: int = 0, d_out: int = 4, phi: float = 0.1, **kwargs
) -> dict:
    """gradcheck for every deviation measure and every single objective."""
    reports = {}
    passed = True
    for measure in MEASURES:
        for objective in ("audio", "visual", "multimodal"):
            cfg = TrainConfig(
                d_out=d_out,
                seed=seed,
                weights=LossWeights(phi=phi),
                deviation=DeviationConfig(measure=measure, objectives=(objective,)),
            )
            rep = gradcheck(cfg, seed=seed, **kwargs)
            reports[f"{measure}/{objective}"] = rep
            passed = passed and rep["passed"]
    return {"passed": passed, "cases": reports}
