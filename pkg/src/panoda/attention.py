"""Dual (position / channel) attention and regional attention blocks."""
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import ndimage


def position_attention(feat, gamma=None):
    """Pixel-to-pixel attention.

    Returns (out, attn) where attn is N x hw x hw with rows indexed by query pixel
    and out = feat + gamma * attended (or the bare attended map if gamma is None).
    """
    n, c, h, w = feat.shape
    flat = feat.reshape(n, c, h * w)                      # N x c x hw
    energy = torch.bmm(flat.transpose(1, 2), flat)        # N x hw x hw
    attn = torch.softmax(energy, dim=-1)
    attended = torch.bmm(flat, attn.transpose(1, 2)).reshape(n, c, h, w)
    if gamma is None:
        return attended, attn
    return feat + gamma * attended, attn


def channel_attention(feat, gamma=None):
    n, c, h, w = feat.shape
    flat = feat.reshape(n, c, h * w)
    energy = torch.bmm(flat, flat.transpose(1, 2))        # N x c x c
    attn = torch.softmax(energy, dim=-1)
    attended = torch.bmm(attn, flat).reshape(n, c, h, w)
    if gamma is None:
        return attended, attn
    return feat + gamma * attended, attn


class PositionAttention(nn.Module):
    def __init__(self):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return position_attention(x, self.gamma)


class ChannelAttention(nn.Module):
    def __init__(self):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return channel_attention(x, self.gamma)


class DualAttention(nn.Module):
    """Position and channel branches, concatenated and fused back to c channels.

    The fusion conv starts as the average of the two branches, so with both
    gammas at zero the module is the identity.
    """

    def __init__(self, channels):
        super().__init__()
        self.pos = PositionAttention()
        self.chan = ChannelAttention()
        self.fuse = nn.Conv2d(2 * channels, channels, 1, bias=False)
        with torch.no_grad():
            eye = torch.eye(channels).reshape(channels, channels, 1, 1)
            self.fuse.weight.copy_(torch.cat([eye, eye], dim=1) * 0.5)

    def forward(self, x):
        pos_out, pos_attn = self.pos(x)
        chan_out, chan_attn = self.chan(x)
        fused = self.fuse(torch.cat([pos_out, chan_out], dim=1))
        return fused, pos_out, chan_out, pos_attn, chan_attn


def dual_attention(x, module):
    return module(x)[0]


def query_attention_map(attn, pixel, size):
    """Attention row of one query pixel, reshaped to the h x w grid.

    attn: hw x hw (one batch item) tensor or array; pixel: (y, x); size: (h, w).
    """
    h, w = size
    y, x = pixel
    if not (0 <= y < h and 0 <= x < w):
        raise IndexError(f"query pixel {pixel} outside {h}x{w}")
    row = attn[y * w + x]
    if isinstance(row, torch.Tensor):
        row = row.detach().cpu().numpy()
    return np.asarray(row, dtype=np.float64).reshape(h, w)


@dataclass
class RegionDecisionMap:
    regions: np.ndarray                     # h x w int64, ids 0..K-1
    region_class: np.ndarray                # K, semantic class per region
    prototypes: Optional[np.ndarray] = None  # K x C
    representatives: Optional[list] = None   # K (y, x) pixels closest to the prototype

    @property
    def num_regions(self):
        return int(self.region_class.shape[0])


def _absorb_boundary(regions, boundary):
    """Multi-source BFS from labelled pixels into boundary pixels; ties go to the lowest id."""
    h, w = regions.shape
    out = regions.copy()
    dist = np.where(boundary, -1, 0)
    frontier = deque((y, x) for y, x in zip(*np.nonzero(~boundary)))
    while frontier:
        # process one BFS layer at a time so equal-distance claims can pick the lowest id
        claims = {}
        for _ in range(len(frontier)):
            y, x = frontier.popleft()
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and dist[ny, nx] == -1:
                    rid = out[y, x]
                    if (ny, nx) not in claims or rid < claims[(ny, nx)]:
                        claims[(ny, nx)] = rid
        for (ny, nx), rid in sorted(claims.items()):
            out[ny, nx] = rid
            dist[ny, nx] = 1
            frontier.append((ny, nx))
    return out


def construct_regions(boundary, semantic):
    """Region ids from a boolean boundary mask and a semantic class map (2-D numpy)."""
    semantic = np.asarray(semantic)
    boundary = np.asarray(boundary, dtype=bool)
    if boundary.all():
        return np.zeros(semantic.shape, dtype=np.int64), np.array([np.bincount(semantic.ravel()).argmax()])
    regions = np.full(semantic.shape, -1, dtype=np.int64)
    n_regions = 0
    four = ndimage.generate_binary_structure(2, 1)
    for cls in np.unique(semantic[~boundary]):
        comp, n = ndimage.label((semantic == cls) & ~boundary, structure=four)
        regions[comp > 0] = comp[comp > 0] - 1 + n_regions
        n_regions += n
    # renumber in raster order of first appearance so ids do not depend on class order
    order = {}
    for rid in regions[regions >= 0]:
        if rid not in order:
            order[rid] = len(order)
    lut = np.full(n_regions, -1, dtype=np.int64)
    for old, new in order.items():
        lut[old] = new
    regions = np.where(regions >= 0, lut[np.maximum(regions, 0)], -1)
    region_class = np.zeros(n_regions, dtype=np.int64)
    for y, x in zip(*np.nonzero(regions >= 0)):
        region_class[regions[y, x]] = semantic[y, x]
    regions = _absorb_boundary(regions, boundary)
    return regions, region_class


def region_prototypes(feat, regions, num_regions):
    """Mean feature per region. feat: C x h x w tensor; regions: h x w long tensor."""
    c = feat.shape[0]
    flat = feat.reshape(c, -1)
    idx = regions.reshape(-1)
    sums = feat.new_zeros(num_regions, c).index_add_(0, idx, flat.t())
    counts = torch.bincount(idx, minlength=num_regions).to(feat.dtype).clamp_min(1)
    return sums / counts[:, None]


def region_construction(b1, c1, feat=None):
    """Build one RegionDecisionMap per batch item from boundary / semantic logits.

    b1: N x 1 x h x w, c1: N x K x h x w, optional feat: N x C x h x w at the same size.
    """
    if b1.shape[-2:] != c1.shape[-2:]:
        raise ValueError(f"b1 {tuple(b1.shape)} and c1 {tuple(c1.shape)} differ in size")
    boundary = (torch.sigmoid(b1[:, 0]) > 0.5).cpu().numpy()
    semantic = c1.argmax(1).cpu().numpy()
    maps = []
    for i in range(semantic.shape[0]):
        regions, region_class = construct_regions(boundary[i], semantic[i])
        rdm = RegionDecisionMap(regions, region_class)
        if feat is not None:
            with torch.no_grad():
                f = feat[i].detach()
                reg = torch.from_numpy(regions).to(f.device)
                protos = region_prototypes(f, reg, rdm.num_regions)
                dists = ((f.reshape(f.shape[0], -1).t() - protos[reg.reshape(-1)]) ** 2).sum(1)
                reps = []
                for k in range(rdm.num_regions):
                    masked = torch.where(reg.reshape(-1) == k, dists, torch.full_like(dists, float("inf")))
                    j = int(masked.argmin())
                    reps.append((j // regions.shape[1], j % regions.shape[1]))
            rdm.prototypes = protos.cpu().numpy()
            rdm.representatives = reps
        maps.append(rdm)
    return maps


def region_interaction(feat, rdms):
    """Intra-region prototype broadcast followed by inter-region prototype attention.

    out = feat + P[region] + (softmax(P P^T) P)[region], per batch item.
    """
    outs = []
    for i, rdm in enumerate(rdms):
        f = feat[i]
        c, h, w = f.shape
        if rdm.regions.shape != (h, w):
            raise ValueError(f"region map {rdm.regions.shape} does not cover feature {h}x{w}")
        reg = torch.from_numpy(np.ascontiguousarray(rdm.regions)).to(f.device).reshape(-1)
        protos = region_prototypes(f, reg, rdm.num_regions)          # K x C
        mixed = torch.softmax(protos @ protos.t(), dim=-1) @ protos   # K x C
        update = (protos[reg] + mixed[reg]).t().reshape(c, h, w)
        outs.append(f + update)
    return torch.stack(outs)


class RegionalAttention(nn.Module):
    """RCB + RIB over a feature map, followed by a classifier for the regional prediction."""

    def __init__(self, channels, num_classes=19):
        super().__init__()
        self.classifier = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, num_classes, 1),
        )

    def forward(self, feat, b1_low, c1_low, enabled=True):
        if b1_low.shape[-2:] != feat.shape[-2:]:
            b1_low = F.interpolate(b1_low, size=feat.shape[-2:], mode="bilinear", align_corners=False)
            c1_low = F.interpolate(c1_low, size=feat.shape[-2:], mode="bilinear", align_corners=False)
        if enabled:
            rdms = region_construction(b1_low.detach(), c1_low.detach())
            feat = region_interaction(feat, rdms)
        else:
            rdms = None
        return self.classifier(feat), rdms
