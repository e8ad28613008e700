"""Compact encoder-decoder segmentation network with boundary and two semantic heads."""
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import DualAttention, RegionalAttention

MODES = ("danet_like", "fanet_like")
RATES = (4, 8, 16)


def conv_gn_relu(cin, cout, stride=1, groups=4):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(groups, cout),
        nn.ReLU(inplace=True),
    )


def upsample_logits(logits, size):
    """Bilinear upsampling (half-pixel centers) to a size no smaller than the input."""
    size = tuple(int(s) for s in size)
    if size[0] < logits.shape[-2] or size[1] < logits.shape[-1]:
        raise ValueError(f"upsample_logits cannot downscale {tuple(logits.shape[-2:])} to {size}")
    if tuple(logits.shape[-2:]) == size:
        return logits
    return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)


def _resize_to(x, ref):
    if x.shape[-2:] == ref.shape[-2:]:
        return x
    return F.interpolate(x, size=ref.shape[-2:], mode="bilinear", align_corners=False)


@dataclass
class BackboneOutput:
    features: dict          # rate -> N x C_r x H/r x W/r


@dataclass
class HeadOutputs:
    b1: torch.Tensor        # N x 1 x H x W
    c1: torch.Tensor        # N x K x H x W
    c2: torch.Tensor
    b1_low: Optional[torch.Tensor] = None
    c1_low: Optional[torch.Tensor] = None
    c2_low: Optional[torch.Tensor] = None
    head_feat: Optional[torch.Tensor] = None    # classifier input before attention
    dual_feat: Optional[torch.Tensor] = None    # fused dual-attended feature
    pos_attn: Optional[torch.Tensor] = None
    chan_attn: Optional[torch.Tensor] = None


def fanet_multilevel_wiring(b, mode="fanet_like"):
    """(b1 input, c1 input): concat(up(F16), F4) and concat(up(F16), F8)."""
    if mode != "fanet_like":
        raise ValueError(f"multi-level wiring only applies to fanet_like mode, got {mode!r}")
    feats = b.features
    missing = [r for r in (4, 8, 16) if r not in feats]
    if missing:
        raise KeyError(f"backbone output lacks rates {missing}")
    b1_in = torch.cat([_resize_to(feats[16], feats[4]), feats[4]], dim=1)
    c1_in = torch.cat([_resize_to(feats[16], feats[8]), feats[8]], dim=1)
    return b1_in, c1_in


class Backbone(nn.Module):
    """4-stage strided encoder with a top-down decoder; emits features at rates 4, 8, 16."""

    def __init__(self, channels=(16, 32, 48, 64), in_channels=3):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.stage1 = nn.Sequential(conv_gn_relu(in_channels, c1, 2), conv_gn_relu(c1, c1))
        self.stage2 = nn.Sequential(conv_gn_relu(c1, c2, 2), conv_gn_relu(c2, c2))
        self.stage3 = nn.Sequential(conv_gn_relu(c2, c3, 2), conv_gn_relu(c3, c3))
        self.stage4 = nn.Sequential(conv_gn_relu(c3, c4, 2), conv_gn_relu(c4, c4))
        self.lat16 = nn.Conv2d(c4, c3, 1)
        self.lat8 = nn.Conv2d(c3, c2, 1)
        self.channels = {4: c2, 8: c3, 16: c4}

    def forward(self, x):
        e2 = self.stage1(x)
        e4 = self.stage2(e2)
        e8 = self.stage3(e4)
        e16 = self.stage4(e8)
        d8 = e8 + _resize_to(self.lat16(e16), e8)
        d4 = e4 + _resize_to(self.lat8(d8), e4)
        return BackboneOutput({4: d4, 8: d8, 16: e16})


def _classifier(cin, cout, mid):
    return nn.Sequential(
        nn.Conv2d(cin, mid, 3, padding=1, bias=False),
        nn.GroupNorm(4, mid),
        nn.ReLU(inplace=True),
        nn.Conv2d(mid, cout, 1),
    )


class SegNet(nn.Module):
    """Shared backbone, boundary head B1 and semantic heads C1 (position path) / C2 (channel path)."""

    def __init__(self, num_classes=19, mode="fanet_like", channels=(16, 32, 48, 64),
                 head_channels=64, zero_init_heads=False):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.num_classes = num_classes
        self.channels = tuple(channels)
        self.head_channels = head_channels
        self.backbone = Backbone(channels)
        ch = self.backbone.channels
        if mode == "fanet_like":
            b1_cin, c_cin = ch[16] + ch[4], ch[16] + ch[8]
        else:
            b1_cin, c_cin = ch[16], ch[16]
        self.reduce = nn.Sequential(nn.Conv2d(c_cin, head_channels, 1, bias=False),
                                    nn.GroupNorm(4, head_channels), nn.ReLU(inplace=True))
        self.attention = DualAttention(head_channels)
        self.head_b1 = _classifier(b1_cin, 1, 32)
        self.head_c1 = _classifier(head_channels, num_classes, head_channels)
        self.head_c2 = _classifier(head_channels, num_classes, head_channels)
        self.regional = RegionalAttention(head_channels, num_classes)
        if zero_init_heads:
            for head in (self.head_b1, self.head_c1, self.head_c2):
                nn.init.zeros_(head[-1].weight)
                nn.init.zeros_(head[-1].bias)

    def head_parameters(self, name):
        return list(getattr(self, f"head_{name}").parameters())

    def forward(self, x):
        n, _, h, w = x.shape
        if h % 16 or w % 16:
            raise ValueError(f"input size {h}x{w} must be divisible by 16")
        b = self.backbone(x)
        if self.mode == "fanet_like":
            b1_in, c_in = fanet_multilevel_wiring(b, self.mode)
        else:
            b1_in = c_in = b.features[16]
        feat = self.reduce(c_in)
        fused, pos_out, chan_out, pos_attn, chan_attn = self.attention(feat)
        b1_low = self.head_b1(b1_in)
        c1_low = self.head_c1(pos_out)
        c2_low = self.head_c2(chan_out)
        heads = HeadOutputs(
            upsample_logits(b1_low, (h, w)), upsample_logits(c1_low, (h, w)), upsample_logits(c2_low, (h, w)),
            b1_low, c1_low, c2_low, feat, fused, pos_attn, chan_attn,
        )
        return b, heads

    def regional_forward(self, heads, enabled=True):
        """Second-stage (RCB + RIB) prediction at full resolution, plus the region maps."""
        logits, rdms = self.regional(heads.head_feat, heads.b1_low, heads.c1_low, enabled)
        return upsample_logits(logits, heads.c1.shape[-2:]), rdms

    def config(self):
        return {"mode": self.mode, "num_classes": self.num_classes, "channels": list(self.channels),
                "head_channels": self.head_channels}


def forward_segnet(model, images, mode=None):
    if mode is not None and mode != model.mode:
        raise ValueError(f"model built for {model.mode!r}, asked for {mode!r}")
    return model(images)


def boundary_targets(labels, ignore_index=255):
    """1 where any 4-neighbour has a different class id, 0 elsewhere, 255 on ignore pixels."""
    lab = labels
    edge = torch.zeros_like(lab, dtype=torch.bool)
    valid = lab != ignore_index
    diff_v = (lab[:, 1:, :] != lab[:, :-1, :]) & valid[:, 1:, :] & valid[:, :-1, :]
    diff_h = (lab[:, :, 1:] != lab[:, :, :-1]) & valid[:, :, 1:] & valid[:, :, :-1]
    edge[:, 1:, :] |= diff_v
    edge[:, :-1, :] |= diff_v
    edge[:, :, 1:] |= diff_h
    edge[:, :, :-1] |= diff_h
    target = edge.to(torch.long)
    return torch.where(lab == ignore_index, torch.full_like(target, ignore_index), target)


def boundary_loss(b1_logits, labels, ignore_index=255):
    """Class-balanced BCE for the boundary head; ignore pixels masked out."""
    target = boundary_targets(labels, ignore_index)
    valid = target != ignore_index
    if not valid.any():
        return b1_logits.sum() * 0.0
    logits = b1_logits[:, 0][valid]
    t = target[valid].to(logits.dtype)
    pos = t.sum()
    neg = t.numel() - pos
    pos_weight = (neg / pos.clamp_min(1.0)).clamp(1.0, 50.0)
    return F.binary_cross_entropy_with_logits(logits, t, pos_weight=pos_weight)
