"""Temporal feature enhancement via column-summed attention relevance.

Each enhancement site projects its inputs to queries, keys and values,
forms the scaled relevance matrix Q K^T / sqrt(d_out), sums it over rows
to get one relevance score per frame, normalizes those scores with a
softmax rescaled by the frame count (so the mean weight is 1), and
multiplies each value row by its frame weight.

There are four independent projection triples: one per intra-modal site
(visual, audio) and one per inter-modal site (audio enhancing visual,
visual enhancing audio).

The forward math is written once, over autodiff nodes; the public
functions evaluate that graph with constant leaves. Training
differentiates the same graph with parameter leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core_data import FeatureSequence
from .errors import AlignmentError, ShapeError


@dataclass(frozen=True)
class TppaParams:
    """Projection triple for one enhancement site."""

    w_qry: np.ndarray
    w_key: np.ndarray
    w_vle: np.ndarray

    def __post_init__(self):
        for name in ("w_qry", "w_key", "w_vle"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.ndim != 2:
                raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
            object.__setattr__(self, name, m)
        if not (self.w_qry.shape[1] == self.w_key.shape[1] == self.w_vle.shape[1]):
            raise ShapeError(
                f"projection widths differ: {self.w_qry.shape[1]}, "
                f"{self.w_key.shape[1]}, {self.w_vle.shape[1]}"
            )

    @property
    def d_out(self) -> int:
        return self.w_qry.shape[1]


@dataclass(frozen=True)
class EnhanceParams:
    """All four enhancement sites of the two-stream pipeline.

    inter_visual enhances the visual stream: values and queries are
    projected from audio while the keys come from the visual stream, so
    each visual frame's weight reflects its relevance to the audio
    context. inter_audio is the mirror image.
    """

    intra_visual: TppaParams
    intra_audio: TppaParams
    inter_visual: TppaParams
    inter_audio: TppaParams


@dataclass(frozen=True)
class TppaNodes:
    """Autodiff leaves for one projection triple."""

    w_qry: ad.Node
    w_key: ad.Node
    w_vle: ad.Node

    @classmethod
    def constant(cls, p: TppaParams) -> "TppaNodes":
        return cls(ad.const(p.w_qry), ad.const(p.w_key), ad.const(p.w_vle))


def tppa_weights_graph(queries_src: ad.Node, keys_src: ad.Node, p: TppaNodes) -> ad.Node:
    """Frame weights: T * softmax over column sums of Q K^T / sqrt(d_out)."""
    q = ad.matmul(queries_src, p.w_qry)
    k = ad.matmul(keys_src, p.w_key)
    d_out = p.w_qry.value.shape[1]
    relevance = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_out))
    col = ad.column_sum(relevance)
    frames = queries_src.value.shape[0]
    return ad.scaled_softmax_vec(col, float(frames))


def enhance_graph(target: ad.Node, source: ad.Node, p: TppaNodes) -> ad.Node:
    """Scale each projected source row by a weight tracking the target frame.

    The weight for frame j measures the relevance of the j-th target frame
    to the source stream as a whole, so the source supplies the queries
    (summed out by the column sum) and the target supplies the keys. With
    target == source this reduces to the intra-stream form unchanged.
    """
    if target.value.shape[0] != source.value.shape[0]:
        raise AlignmentError(
            f"frame counts differ: {target.value.shape[0]} vs {source.value.shape[0]}"
        )
    values = ad.matmul(source, p.w_vle)
    weights = tppa_weights_graph(source, target, p)
    return ad.row_scale(values, weights)


def tppa_weights(queries_src: np.ndarray, keys_src: np.ndarray, params: TppaParams) -> np.ndarray:
    """Frame weight vector for given query and key sources.

    Entries are positive and sum to the frame count (within 1e-9).
    """
    node = tppa_weights_graph(
        ad.const(queries_src), ad.const(keys_src), TppaNodes.constant(params)
    )
    return node.value


def intra_enhance(f: FeatureSequence, params: TppaParams) -> FeatureSequence:
    """Enhance a single stream against itself."""
    out = enhance_graph(ad.const(f.values), ad.const(f.values), TppaNodes.constant(params))
    return FeatureSequence(out.value, f.fps)


def inter_enhance(
    target: FeatureSequence, source: FeatureSequence, params: TppaParams
) -> FeatureSequence:
    """Enhance target using keys and values projected from source."""
    if target.frames != source.frames:
        raise AlignmentError(
            f"frame counts differ: target {target.frames} vs source {source.frames}"
        )
    out = enhance_graph(
        ad.const(target.values), ad.const(source.values), TppaNodes.constant(params)
    )
    return FeatureSequence(out.value, target.fps)


def enhance_all_graph(
    visual: ad.Node,
    audio: ad.Node,
    intra_v: TppaNodes,
    intra_a: TppaNodes,
    inter_v: TppaNodes,
    inter_a: TppaNodes,
    detach_cross: bool = False,
) -> tuple[ad.Node, ad.Node, ad.Node, ad.Node, ad.Node]:
    """Two-stage enhancement returning (f_v2, f_a2, f_m, f_v2_own, f_a2_own).

    f_v2_own / f_a2_own carry the same values as f_v2 / f_a2 but, when
    detach_cross is set, block gradients from flowing into the opposite
    stream's parameters. They feed the single-stream heads during the
    stop-gradient ablation; the fused stream always uses the full graph.
    """
    f_v1 = enhance_graph(visual, visual, intra_v)
    f_a1 = enhance_graph(audio, audio, intra_a)
    f_v2 = enhance_graph(f_v1, f_a1, inter_v)
    f_a2 = enhance_graph(f_a1, f_v1, inter_a)
    f_m = ad.concat_cols(f_v2, f_a2)
    if detach_cross:
        f_v2_own = enhance_graph(f_v1, ad.detach(f_a1), inter_v)
        f_a2_own = enhance_graph(f_a1, ad.detach(f_v1), inter_a)
    else:
        f_v2_own, f_a2_own = f_v2, f_a2
    return f_v2, f_a2, f_m, f_v2_own, f_a2_own


def enhance_all(
    visual: FeatureSequence, audio: FeatureSequence, params: EnhanceParams
) -> tuple[FeatureSequence, FeatureSequence, FeatureSequence]:
    """Full enhancement: intra per stream, inter across streams, then fuse.

    Returns (visual enhanced, audio enhanced, fused) where the fused stream
    is the columnwise concatenation of the first two.
    """
    if visual.frames != audio.frames:
        raise AlignmentError(
            f"frame counts differ: visual {visual.frames} vs audio {audio.frames}"
        )
    f_v2, f_a2, f_m, _, _ = enhance_all_graph(
        ad.const(visual.values),
        ad.const(audio.values),
        TppaNodes.constant(params.intra_visual),
        TppaNodes.constant(params.intra_audio),
        TppaNodes.constant(params.inter_visual),
        TppaNodes.constant(params.inter_audio),
    )
    return (
        FeatureSequence(f_v2.value, visual.fps),
        FeatureSequence(f_a2.value, audio.fps),
        FeatureSequence(f_m.value, visual.fps),
    )
