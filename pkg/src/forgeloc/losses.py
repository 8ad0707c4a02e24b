"""Multitask training objective with a temporal-deviation term.

The total objective combines a 4-class cross entropy on the fused
prediction, two binary cross entropies on the per-stream predictions,
and a deviation loss that pushes the adjacent-frame deviation of forged
videos up and of genuine videos down.

A stream's temporal deviation is the chosen measure averaged over the
T-1 adjacent frame pairs, squashed through a sigmoid into (0, 1). The
historical raw-sum variant (no averaging before the sigmoid) stays
available through DeviationConfig.pair_reduction="sum"; it saturates the
sigmoid for long sequences, which is why averaging is the default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import numkernel as nk
from .core_data import ForgeryLabel, VideoSample, derive_binary_labels
from .errors import ConfigError, DomainError, ShapeError
from .model import ForwardNodes, ForwardOutputs

BCE_EPS = 1e-12
NORM_EPS = 1e-12

MEASURES = ("mse", "l1", "l2", "cosine", "kl")
OBJECTIVES = ("audio", "visual", "multimodal")


@dataclass(frozen=True)
class LossWeights:
    lambda_m: float = 0.8
    lambda_v: float = 0.1
    lambda_a: float = 0.1
    phi: float = 0.1

    def __post_init__(self):
        for name in ("lambda_m", "lambda_v", "lambda_a", "phi"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class DeviationConfig:
    measure: str = "mse"
    objectives: tuple[str, ...] = ("multimodal",)
    pair_reduction: str = "mean"

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ConfigError(f"unknown deviation measure {self.measure!r}")
        object.__setattr__(self, "objectives", tuple(self.objectives))
        if not self.objectives:
            raise ConfigError("deviation objectives must not be empty")
        for obj in self.objectives:
            if obj not in OBJECTIVES:
                raise ConfigError(f"unknown deviation objective {obj!r}")
        if len(set(self.objectives)) != len(self.objectives):
            raise ConfigError("deviation objectives must be distinct")
        if self.pair_reduction not in ("mean", "sum"):
            raise ConfigError(f"pair_reduction must be 'mean' or 'sum', got {self.pair_reduction!r}")


def bce(y: int, y_hat: float) -> float:
    """Binary cross entropy with probabilities clipped to [1e-12, 1 - 1e-12]."""
    if y not in (0, 1):
        raise DomainError(f"binary target must be 0 or 1, got {y}")
    if not (0.0 <= y_hat <= 1.0):
        raise DomainError(f"probability {y_hat} outside [0, 1]")
    p = min(max(float(y_hat), BCE_EPS), 1.0 - BCE_EPS)
    if y == 1:
        return -float(np.log(p))
    return -float(np.log(1.0 - p))


def cross_entropy(y_onehot: np.ndarray, y_hat: np.ndarray) -> float:
    """Multiclass cross entropy; y must be one-hot and y_hat a distribution."""
    y_onehot = np.asarray(y_onehot, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_onehot.shape != y_hat.shape or y_onehot.ndim != 1:
        raise ShapeError(f"shape mismatch: {y_onehot.shape} vs {y_hat.shape}")
    if not (np.all((y_onehot == 0.0) | (y_onehot == 1.0)) and np.sum(y_onehot) == 1.0):
        raise DomainError("target must be one-hot")
    if np.any(y_hat < 0.0) or abs(float(np.sum(y_hat)) - 1.0) > 1e-6:
        raise DomainError("prediction must be a probability distribution")
    return -float(np.sum(y_onehot * np.log(np.maximum(y_hat, BCE_EPS))))


def deviation_measure(u: np.ndarray, v: np.ndarray, measure: str) -> float:
    """Deviation between two feature rows under one of five measures."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"shape mismatch: {u.shape} vs {v.shape}")
    if u.size == 0:
        raise ShapeError("empty vectors")
    if measure == "mse":
        diff = u - v
        return float(np.sum(diff * diff) / u.size)
    if measure == "l1":
        return float(np.sum(np.abs(u - v)))
    if measure == "l2":
        diff = u - v
        return float(np.sqrt(np.sum(diff * diff)))
    if measure == "cosine":
        nu = float(np.sqrt(np.sum(u * u)))
        nv = float(np.sqrt(np.sum(v * v)))
        if nu < NORM_EPS or nv < NORM_EPS:
            return 0.0
        return 1.0 - float(np.sum(u * v)) / (nu * nv)
    if measure == "kl":
        p = nk.softmax_vector(u)
        q = nk.softmax_vector(v)
        return float(np.sum(p * (np.log(p) - np.log(q))))
    raise ConfigError(f"unknown deviation measure {measure!r}")


def temporal_deviation(f: np.ndarray, measure: str, pair_reduction: str = "mean") -> float:
    """Sigmoid of the reduced adjacent-pair deviation of a feature matrix."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError(f"features must be 2-D, got ndim={f.ndim}")
    frames = f.shape[0]
    if frames < 2:
        raise DomainError(f"need at least 2 frames for temporal deviation, got {frames}")
    pairs = [deviation_measure(f[t], f[t + 1], measure) for t in range(frames - 1)]
    total = 0.0
    for value in pairs:
        total += value
    if pair_reduction == "mean":
        total *= 1.0 / len(pairs)
    elif pair_reduction != "sum":
        raise ConfigError(f"pair_reduction must be 'mean' or 'sum', got {pair_reduction!r}")
    return nk.sigmoid(total)


def deviation_loss(d: float, label) -> float:
    """Cross entropy between the video's forged indicator and its deviation."""
    if not (0.0 < d < 1.0):
        raise DomainError(f"deviation {d} outside (0, 1)")
    psi = ForgeryLabel(label).any_forged
    if psi == 1:
        return -float(np.log(d))
    return -float(np.log(1.0 - d))


def total_loss(
    sample: VideoSample,
    outputs: ForwardOutputs,
    weights: LossWeights,
    devcfg: DeviationConfig,
) -> float:
    """Weighted sum of the classification losses and the deviation term."""
    y_v, y_a = derive_binary_labels(sample.label)
    onehot = np.zeros(4)
    onehot[int(sample.label)] = 1.0
    total = weights.lambda_m * cross_entropy(onehot, outputs.y_hat_m)
    total = total + weights.lambda_v * bce(y_v, float(outputs.y_hat_v[1]))
    total = total + weights.lambda_a * bce(y_a, float(outputs.y_hat_a[1]))
    if weights.phi != 0.0:
        feats = {"audio": outputs.f_a2, "visual": outputs.f_v2, "multimodal": outputs.f_m}
        acc = 0.0
        for obj in devcfg.objectives:
            d = temporal_deviation(feats[obj], devcfg.measure, devcfg.pair_reduction)
            acc = acc + deviation_loss(d, sample.label)
        total = total + weights.phi * (acc * (1.0 / len(devcfg.objectives)))
    return float(total)


# ----------------------------------------------------------- graph versions


def _pair_deviations_graph(f: ad.Node, measure: str) -> ad.Node:
    """Vector of adjacent-pair deviations, one entry per frame pair."""
    frames, dim = f.value.shape
    if frames < 2:
        raise DomainError(f"need at least 2 frames for temporal deviation, got {frames}")
    a = ad.rows(f, 0, frames - 1)
    b = ad.rows(f, 1, frames)
    if measure == "mse":
        return ad.scale(ad.row_sums(ad.square(ad.sub(a, b))), 1.0 / dim)
    if measure == "l1":
        return ad.row_sums(ad.absolute(ad.sub(a, b)))
    if measure == "l2":
        return ad.sqrt_guarded(ad.row_sums(ad.square(ad.sub(a, b))))
    if measure == "cosine":
        dots = ad.row_sums(ad.mul(a, b))
        na = ad.sqrt_guarded(ad.row_sums(ad.square(a)))
        nb = ad.sqrt_guarded(ad.row_sums(ad.square(b)))
        # Pairs where either row is (near) zero contribute 0 with zero grad.
        mask = ((na.value >= NORM_EPS) & (nb.value >= NORM_EPS)).astype(np.float64)
        denom = ad.add(ad.mul(na, nb), ad.const(1.0 - mask))
        cos = ad.div(dots, denom)
        ones = ad.const(np.ones_like(mask))
        return ad.mul(ad.sub(ones, cos), ad.const(mask))
    if measure == "kl":
        p = ad.row_softmax(a)
        q = ad.row_softmax(b)
        return ad.row_sums(ad.mul(p, ad.sub(ad.log(p), ad.log(q))))
    raise ConfigError(f"unknown deviation measure {measure!r}")


def temporal_deviation_graph(f: ad.Node, measure: str, pair_reduction: str = "mean") -> ad.Node:
    pairs = _pair_deviations_graph(f, measure)
    if pair_reduction == "mean":
        reduced = ad.mean_all(pairs)
    elif pair_reduction == "sum":
        reduced = ad.sum_all(pairs)
    else:
        raise ConfigError(f"pair_reduction must be 'mean' or 'sum', got {pair_reduction!r}")
    return ad.sigmoid(reduced)


def deviation_loss_graph(d: ad.Node, label) -> ad.Node:
    psi = ForgeryLabel(label).any_forged
    if psi == 1:
        return ad.neg(ad.log(d))
    return ad.neg(ad.log(ad.sub(ad.const(1.0), d)))


def _bce_graph(y_hat: ad.Node, y: int) -> ad.Node:
    p = ad.pick(y_hat, 1)
    if y == 1:
        return ad.neg(ad.log(ad.clip_min(p, BCE_EPS)))
    one_minus = ad.sub(ad.const(1.0), p)
    return ad.neg(ad.log(ad.clip_min(one_minus, BCE_EPS)))


def _cross_entropy_graph(y_hat: ad.Node, label: int) -> ad.Node:
    return ad.neg(ad.log(ad.clip_min(ad.pick(y_hat, label), BCE_EPS)))


def sample_loss_graph(
    sample: VideoSample,
    fwd: ForwardNodes,
    weights: LossWeights,
    devcfg: DeviationConfig,
) -> ad.Node:
    """Total loss for one sample as an autodiff node (same value as total_loss)."""
    label = int(sample.label)
    y_v, y_a = derive_binary_labels(sample.label)
    total = ad.scale(_cross_entropy_graph(fwd.y_hat_m, label), weights.lambda_m)
    total = ad.add(total, ad.scale(_bce_graph(fwd.y_hat_v, y_v), weights.lambda_v))
    total = ad.add(total, ad.scale(_bce_graph(fwd.y_hat_a, y_a), weights.lambda_a))
    if weights.phi != 0.0:
        feats = {"audio": fwd.f_a2, "visual": fwd.f_v2, "multimodal": fwd.f_m}
        devs = []
        for obj in devcfg.objectives:
            d = temporal_deviation_graph(feats[obj], devcfg.measure, devcfg.pair_reduction)
            devs.append(deviation_loss_graph(d, sample.label))
        acc = devs[0]
        for node in devs[1:]:
            acc = ad.add(acc, node)
        mean_dev = ad.scale(acc, 1.0 / len(devs))
        total = ad.add(total, ad.scale(mean_dev, weights.phi))
    return total
