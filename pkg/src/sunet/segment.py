"""Classification-to-segmentation rewriting and the dilation identity check.

Conversion drops the pooled strides needed to reach a target output
stride, dilates everything downstream so receptive fields are untouched,
swaps the pooled classifier head for a 1x1 conv (optionally behind two
degridding convs) and bilinearly upsamples logits back to input size.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .analyzer import receptive_field
from .arch import SUNetConfig, build_classifier
from .graph import GraphError, NetworkGraph, config_to_meta
from .tensor import conv_out_size, no_grad
from .unet import BN_DECAY, BN_EPS, add_module, bn_relu_conv

# base dilation per block for each supported output stride
_BLOCK_RATES = {32: (1, 1, 1, 1), 16: (1, 1, 1, 2), 8: (1, 1, 2, 4)}


@dataclass(frozen=True)
class SegmentationConfig:
    num_classes: int
    output_stride: int = 16
    multigrid: bool = True
    degridding: bool = False
    upsample_to_input: bool = True

    def to_dict(self) -> dict:
        return {"num_classes": self.num_classes,
                "output_stride": self.output_stride,
                "multigrid": self.multigrid,
                "degridding": self.degridding,
                "upsample_to_input": self.upsample_to_input}

    @classmethod
    def from_dict(cls, obj: dict) -> "SegmentationConfig":
        try:
            return cls(int(obj["num_classes"]),
                       output_stride=int(obj.get("output_stride", 16)),
                       multigrid=bool(obj.get("multigrid", True)),
                       degridding=bool(obj.get("degridding", False)),
                       upsample_to_input=bool(obj.get("upsample_to_input", True)))
        except (KeyError, TypeError) as exc:
            raise GraphError(f"bad segmentation config: {exc}") from None


def to_segmentation(g: NetworkGraph, cfg: SegmentationConfig) -> NetworkGraph:
    """Rewrite a classifier graph into a segmentation graph.

    The backbone is re-emitted with identical node names wherever the
    strided structure survives, so classifier checkpoints load into the
    converted network by plain name matching.
    """
    if cfg.output_stride not in _BLOCK_RATES:
        raise GraphError(f"unsupported output stride {cfg.output_stride}")
    if g.meta.get("kind") != "classifier" or "config" not in g.meta:
        raise GraphError("conversion needs a classifier graph with config metadata")
    net_cfg = SUNetConfig.from_dict(json.loads(g.meta["config"]))
    rates = _BLOCK_RATES[cfg.output_stride]

    h, w = g.in_hw
    out = NetworkGraph(g.in_channels, (h, w))
    out.meta["kind"] = "segmentation"
    out.meta["config"] = g.meta["config"]
    out.meta["seg"] = config_to_meta(cfg.to_dict())
    out.meta["output_stride"] = str(cfg.output_stride)
    out.meta["features"] = "head.relu"

    out.add("conv1", "conv", ["input"], cin=g.in_channels,
            cout=net_cfg.stem_channels, k=(7, 7), s=(2, 2), d=(1, 1),
            p=(3, 3), bias=False, stage="conv1", level=1)
    hw = (conv_out_size(h, 7, 2, 1, 3), conv_out_size(w, 7, 2, 1, 3))
    a = bn_relu_conv(out, "res.a", "conv1", net_cfg.stem_channels,
                     net_cfg.stem_out, s=2)
    b = bn_relu_conv(out, "res.b", a, net_cfg.stem_out, net_cfg.stem_out)
    out.add("res.skip", "conv", ["conv1"], cin=net_cfg.stem_channels,
            cout=net_cfg.stem_out, k=(1, 1), s=(2, 2), d=(1, 1), p=(0, 0),
            bias=False, role="skip")
    cur = out.add("res.out", "add", [b, "res.skip"], stage="res", level=2)
    hw = (conv_out_size(hw[0], 3, 2, 1, 1), conv_out_size(hw[1], 3, 2, 1, 1))

    cin = net_cfg.stem_out
    for bi, blk in enumerate(net_cfg.blocks, start=1):
        rate = rates[bi - 1]
        if bi > 1:
            r_in = rates[bi - 2]
            if rate == r_in:
                cur = out.add(f"t{bi - 1}", "avg_pool", [cur], window=(2, 2),
                              s=(2, 2), d=(1, 1), pad=(0, 0, 0, 0),
                              stage=f"transition{bi - 1}")
                hw = ((hw[0] - 2) // 2 + 1, (hw[1] - 2) // 2 + 1)
            else:
                # dropped stride: same window on the retained dense grid,
                # dilated to keep its taps on the original sample sites;
                # tail padding preserves extent, divisor stays 1/4
                cur = out.add(f"t{bi - 1}", "avg_pool", [cur], window=(2, 2),
                              s=(1, 1), d=(r_in, r_in),
                              pad=(0, r_in, 0, r_in),
                              stage=f"transition{bi - 1}")
        for mi in range(1, blk.modules + 1):
            cur = add_module(out, f"b{bi}.m{mi}", cur, cin, blk.width,
                             blk.out_channels, hw, trimmed=blk.trimmed,
                             multigrid=cfg.multigrid and rate > 1, rate=rate)
            cin = blk.out_channels
        out.tag(cur, stage=f"block{bi}", level=2 + bi)

    out.add("head.bn", "bn", [cur], c=cin, decay=BN_DECAY, eps=BN_EPS)
    cur = out.add("head.relu", "relu", ["head.bn"])
    final_rate = rates[-1]
    if cfg.degridding:
        d1 = max(final_rate // 2, 1)
        d2 = max(final_rate // 4, 1)
        cur = out.add("deg1.conv", "conv", [cur], cin=cin, cout=512,
                      k=(3, 3), s=(1, 1), d=(d1, d1), p=(d1, d1), bias=False)
        cur = bn_relu_conv(out, "deg2", cur, 512, 512, d=d2)
        cin = 512
    out.add("cls.bn", "bn", [cur], c=cin, decay=BN_DECAY, eps=BN_EPS)
    out.add("cls.relu", "relu", ["cls.bn"])
    cur = out.add("cls.conv", "conv", ["cls.relu"], cin=cin,
                  cout=cfg.num_classes, k=(1, 1), s=(1, 1), d=(1, 1),
                  p=(0, 0), bias=True, stage="classifier", level=6)
    if cfg.upsample_to_input:
        out.add("up", "upsample", [cur], to="input")
    return out


def rebuild_for_input(graph: NetworkGraph, hw: tuple[int, int]) -> NetworkGraph:
    """Re-derive the same architecture for a different input extent.

    Transposed-conv output padding and the upsample target are functions
    of the input size, so a graph built at one extent cannot simply be
    fed another; this rebuilds it from its stored configuration.
    Returns the graph itself when the extent already matches.
    """
    hw = (int(hw[0]), int(hw[1]))
    if graph.in_hw == hw:
        return graph
    kind = graph.meta.get("kind")
    if kind not in ("classifier", "segmentation") or "config" not in graph.meta:
        raise GraphError(f"cannot rebuild graph of kind {kind!r} for a new input size")
    cfg = SUNetConfig.from_dict(json.loads(graph.meta["config"]))
    base = build_classifier(cfg, input_hw=hw)
    if kind == "classifier":
        return base
    seg = SegmentationConfig.from_dict(json.loads(graph.meta["seg"]))
    return to_segmentation(base, seg)


def copy_shared(src, dst) -> list[str]:
    """Copy parameters and BN statistics shared by name between networks.

    Shapes must match; anything missing on either side is left alone.
    Returns the copied names, parameters first.
    """
    copied = []
    for name, t in dst.params.items():
        s = src.params.get(name)
        if s is not None and s.data.shape == t.data.shape:
            t.data = s.data.astype(dst.dtype, copy=True)
            t.grad = None
            copied.append(name)
    for name, arr in dst.stats.items():
        s = src.stats.get(name)
        if s is not None and s.shape == arr.shape:
            dst.stats[name] = s.copy()
            copied.append(name)
    return copied


def default_margin(graph: NetworkGraph, hw: tuple[int, int],
                   feature_hw: tuple[int, int]) -> int:
    """Interior margin for the equivalence check, in feature positions.

    Enough to keep every compared receptive field inside the input, but
    never so much that fewer than 2x2 positions survive.
    """
    node = graph.meta.get("features")
    if node is None:
        raise GraphError("graph has no feature marker")
    st = receptive_field(graph, hw)[node]
    need = 0
    for ax in (0, 1):
        half = (st[ax].rf - 1) / 2
        need = max(need, int(-(-half // st[ax].jump)))
    feasible = (min(feature_hw) - 2) // 2
    return max(0, min(need, feasible))


def atrous_equivalence_check(ref_net, dil_net, x, margin: int | None = None) -> float:
    """Max abs difference between two output strides of the same weights.

    ref_net must be the coarser network. The finer network's feature map
    is subsampled at phase 0 by the stride ratio, both maps are cropped
    to their common extent, a margin of border positions is trimmed, and
    the largest absolute difference over the remaining grid is returned.
    BN runs in eval mode; weights are expected to be shared already.
    """
    try:
        os_ref = int(ref_net.graph.meta["output_stride"])
        os_dil = int(dil_net.graph.meta["output_stride"])
    except KeyError:
        raise GraphError("both graphs need output_stride metadata") from None
    if os_dil >= os_ref or os_ref % os_dil:
        raise GraphError(f"ref must be coarser: got {os_ref} vs {os_dil}")
    factor = os_ref // os_dil
    feat_ref = ref_net.graph.meta.get("features")
    feat_dil = dil_net.graph.meta.get("features")
    if feat_ref is None or feat_dil is None:
        raise GraphError("both graphs need feature markers")
    with no_grad():
        a = ref_net.forward(x, training=False, upto=feat_ref).data
        b = dil_net.forward(x, training=False, upto=feat_dil).data
    b = b[:, :, ::factor, ::factor]
    if a.shape[:2] != b.shape[:2]:
        raise GraphError(f"feature shapes diverge: {a.shape} vs {b.shape}")
    h = min(a.shape[2], b.shape[2])
    w = min(a.shape[3], b.shape[3])
    if h < 1 or w < 1:
        raise GraphError("no overlapping positions after subsampling")
    a, b = a[:, :, :h, :w], b[:, :, :h, :w]
    if margin is None:
        margin = default_margin(ref_net.graph, x.shape[2:], (h, w))
    if margin:
        a = a[:, :, margin:h - margin, margin:w - margin]
        b = b[:, :, margin:h - margin, margin:w - margin]
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))
