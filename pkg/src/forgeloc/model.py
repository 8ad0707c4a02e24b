"""Two-stream localization model: enhancement, framewise heads, expert gate.

Each head is an affine map from enhanced features to per-frame logits
(the frame activation sequence). Video-level predictions average the
logit rows over time and softmax the result. At inference the 4-class
fused prediction routes the video to one expert stream, and only that
stream's activation sequence is turned into segment proposals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import numkernel as nk
from .core_data import ForgeryLabel, VideoSample
from .enhance import EnhanceParams, TppaNodes, TppaParams, enhance_all_graph
from .errors import AlignmentError, ShapeError
from .proposals import SegmentProposal, fas_to_proposals

GATE_NONE = "none"
GATE_MULTIMODAL = "multimodal"
GATE_VISUAL = "visual"
GATE_AUDIO = "audio"

# Gate per argmax of the fused 4-class prediction, index == class id.
_GATES = (GATE_NONE, GATE_MULTIMODAL, GATE_VISUAL, GATE_AUDIO)


@dataclass(frozen=True)
class HeadParams:
    """Affine framewise localization head."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if weight.ndim != 2 or bias.ndim != 1 or weight.shape[1] != bias.shape[0]:
            raise ShapeError(
                f"head weight {weight.shape} incompatible with bias {bias.shape}"
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def classes(self) -> int:
        return self.bias.shape[0]


@dataclass(frozen=True)
class ModelParams:
    enhance: EnhanceParams
    head_visual: HeadParams
    head_audio: HeadParams
    head_multimodal: HeadParams

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view in canonical order (checkpoint order)."""
        out: dict[str, np.ndarray] = {}
        for site in ("intra_visual", "intra_audio", "inter_visual", "inter_audio"):
            triple: TppaParams = getattr(self.enhance, site)
            for part in ("w_qry", "w_key", "w_vle"):
                out[f"{site}.{part}"] = getattr(triple, part)
        for head in ("head_visual", "head_audio", "head_multimodal"):
            hp: HeadParams = getattr(self, head)
            out[f"{head}.weight"] = hp.weight
            out[f"{head}.bias"] = hp.bias
        return out

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        def triple(site: str) -> TppaParams:
            return TppaParams(
                w_qry=arrays[f"{site}.w_qry"],
                w_key=arrays[f"{site}.w_key"],
                w_vle=arrays[f"{site}.w_vle"],
            )

        def head(name: str) -> HeadParams:
            return HeadParams(weight=arrays[f"{name}.weight"], bias=arrays[f"{name}.bias"])

        return cls(
            enhance=EnhanceParams(
                intra_visual=triple("intra_visual"),
                intra_audio=triple("intra_audio"),
                inter_visual=triple("inter_visual"),
                inter_audio=triple("inter_audio"),
            ),
            head_visual=head("head_visual"),
            head_audio=head("head_audio"),
            head_multimodal=head("head_multimodal"),
        )


@dataclass(frozen=True)
class HeadNodes:
    weight: ad.Node
    bias: ad.Node

    @classmethod
    def constant(cls, p: HeadParams) -> "HeadNodes":
        return cls(ad.const(p.weight), ad.const(p.bias))


@dataclass(frozen=True)
class ParamNodes:
    """Autodiff leaves for the whole model, one node per named array."""

    intra_visual: TppaNodes
    intra_audio: TppaNodes
    inter_visual: TppaNodes
    inter_audio: TppaNodes
    head_visual: HeadNodes
    head_audio: HeadNodes
    head_multimodal: HeadNodes

    @classmethod
    def build(cls, params: ModelParams, trainable: bool) -> "ParamNodes":
        make = ad.param if trainable else ad.const
        sites = {}
        for site in ("intra_visual", "intra_audio", "inter_visual", "inter_audio"):
            t: TppaParams = getattr(params.enhance, site)
            sites[site] = TppaNodes(make(t.w_qry), make(t.w_key), make(t.w_vle))
        heads = {}
        for name in ("head_visual", "head_audio", "head_multimodal"):
            h: HeadParams = getattr(params, name)
            heads[name] = HeadNodes(make(h.weight), make(h.bias))
        return cls(**sites, **heads)

    def named_nodes(self) -> dict[str, ad.Node]:
        out: dict[str, ad.Node] = {}
        for site in ("intra_visual", "intra_audio", "inter_visual", "inter_audio"):
            t: TppaNodes = getattr(self, site)
            out[f"{site}.w_qry"] = t.w_qry
            out[f"{site}.w_key"] = t.w_key
            out[f"{site}.w_vle"] = t.w_vle
        for name in ("head_visual", "head_audio", "head_multimodal"):
            h: HeadNodes = getattr(self, name)
            out[f"{name}.weight"] = h.weight
            out[f"{name}.bias"] = h.bias
        return out


@dataclass(frozen=True)
class ForwardNodes:
    """Graph handles for one sample's forward pass."""

    f_v2: ad.Node
    f_a2: ad.Node
    f_m: ad.Node
    fas_v: ad.Node
    fas_a: ad.Node
    fas_m: ad.Node
    y_hat_v: ad.Node
    y_hat_a: ad.Node
    y_hat_m: ad.Node


@dataclass(frozen=True)
class ForwardOutputs:
    """Plain-array forward results for one sample."""

    f_v2: np.ndarray
    f_a2: np.ndarray
    f_m: np.ndarray
    fas_v: np.ndarray
    fas_a: np.ndarray
    fas_m: np.ndarray
    y_hat_v: np.ndarray
    y_hat_a: np.ndarray
    y_hat_m: np.ndarray


def localize(features: np.ndarray, head: HeadParams) -> np.ndarray:
    """Framewise logits: features @ weight + bias, one row per frame."""
    return nk.matmul(np.asarray(features, dtype=np.float64), head.weight) + head.bias[None, :]


def aggregate(fas: np.ndarray) -> np.ndarray:
    """Video-level class probabilities: softmax of the mean logit row."""
    fas = np.asarray(fas, dtype=np.float64)
    if fas.ndim != 2:
        raise ShapeError(f"fas must be 2-D, got ndim={fas.ndim}")
    return nk.softmax_vector(fas.mean(axis=0))


def _head_graph(features: ad.Node, head: HeadNodes) -> tuple[ad.Node, ad.Node]:
    fas = ad.add_bias(ad.matmul(features, head.weight), head.bias)
    y_hat = ad.softmax_vec(ad.mean_rows(fas))
    return fas, y_hat


def forward_graph(
    visual: ad.Node, audio: ad.Node, p: ParamNodes, detach_cross: bool = False
) -> ForwardNodes:
    """Build the full forward graph for one aligned sample."""
    f_v2, f_a2, f_m, f_v2_own, f_a2_own = enhance_all_graph(
        visual,
        audio,
        p.intra_visual,
        p.intra_audio,
        p.inter_visual,
        p.inter_audio,
        detach_cross=detach_cross,
    )
    fas_v, y_hat_v = _head_graph(f_v2_own, p.head_visual)
    fas_a, y_hat_a = _head_graph(f_a2_own, p.head_audio)
    fas_m, y_hat_m = _head_graph(f_m, p.head_multimodal)
    return ForwardNodes(f_v2, f_a2, f_m, fas_v, fas_a, fas_m, y_hat_v, y_hat_a, y_hat_m)


def forward(sample: VideoSample, params: ModelParams) -> ForwardOutputs:
    """Run the model on one sample (audio must already be frame-aligned)."""
    if not sample.aligned:
        raise AlignmentError(
            f"sample {sample.id}: audio has {sample.audio.frames} frames, "
            f"visual has {sample.visual.frames}; align first"
        )
    nodes = forward_graph(
        ad.const(sample.visual.values),
        ad.const(sample.audio.values),
        ParamNodes.build(params, trainable=False),
    )
    return ForwardOutputs(
        f_v2=nodes.f_v2.value,
        f_a2=nodes.f_a2.value,
        f_m=nodes.f_m.value,
        fas_v=nodes.fas_v.value,
        fas_a=nodes.fas_a.value,
        fas_m=nodes.fas_m.value,
        y_hat_v=nodes.y_hat_v.value,
        y_hat_a=nodes.y_hat_a.value,
        y_hat_m=nodes.y_hat_m.value,
    )


def select_expert(y_hat_m: np.ndarray) -> str:
    """Route by the argmax fused class; ties go to the lower class index."""
    y_hat_m = np.asarray(y_hat_m, dtype=np.float64)
    if y_hat_m.shape != (4,):
        raise ShapeError(f"fused prediction must have 4 classes, got {y_hat_m.shape}")
    return _GATES[int(np.argmax(y_hat_m))]


@dataclass(frozen=True)
class InferenceResult:
    pred_label: ForgeryLabel
    proposals: tuple[SegmentProposal, ...]
    gate: str


def infer(sample: VideoSample, params: ModelParams) -> InferenceResult:
    """Classify the video, gate to one expert stream, extract proposals.

    A video gated to "none" yields no proposals. Otherwise only the
    selected stream's activation sequence is decoded, so for example with
    gate "visual" the proposals depend only on the enhanced visual stream
    and the visual head.
    """
    out = forward(sample, params)
    gate = select_expert(out.y_hat_m)
    pred_label = ForgeryLabel(int(np.argmax(out.y_hat_m)))
    if gate == GATE_NONE:
        props: tuple[SegmentProposal, ...] = ()
    else:
        fas = {GATE_VISUAL: out.fas_v, GATE_AUDIO: out.fas_a, GATE_MULTIMODAL: out.fas_m}[gate]
        props = tuple(fas_to_proposals(fas, sample.visual.fps))
    return InferenceResult(pred_label=pred_label, proposals=props, gate=gate)
