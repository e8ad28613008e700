"""SDAM / ADAM / RCDAM / FCDAM: discriminators and the adversarial loss algebra."""
import copy
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .trainer.losses import weighted_cross_entropy

MODULES = ("S", "A", "R", "F")
SOURCE_LABEL, TARGET_LABEL = 0, 1
PLACEMENTS = ("output", "feature", "both")       # both: S / A aligned in output and feature space

# lambda defaults; RCDAM's seg_pre weights the prediction before the region blocks
DEFAULT_LAMBDAS = {
    "S": {"seg": 1.0, "adv": 0.001, "d": 1.0},
    "A": {"seg": 0.1, "adv": 0.0002, "d": 1.0},
    "R": {"seg_pre": 1.5, "seg": 1.0, "adv": 0.001, "d": 1.0},
    "F": {"seg": 1.0, "ent_s": 0.001, "ent_t": 0.001},
    "base": {"seg": 1.0, "boundary": 1.0},
}

# loss term name -> lambda key
TERM_WEIGHT = {
    "seg": "seg", "seg_c2": "seg", "seg_pre": "seg_pre", "boundary": "boundary",
    "adv": "adv", "adv1": "adv", "adv2": "adv",
    "ent_s": "ent_s", "ent_t": "ent_t",
    "d": "d", "d1": "d", "d2": "d",
}
D_TERMS = ("d", "d1", "d2")


@dataclass
class ModuleConfig:
    active: tuple = ("S",)
    placement: dict = field(default_factory=lambda: {"S": "output", "A": "feature", "R": "output", "F": "feature"})
    lambdas: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_LAMBDAS))
    d_window: bool = False      # discriminators see equal-width windows (match_width)

    def __post_init__(self):
        self.active = tuple(m for m in MODULES if m in self.active)
        unknown = set(self.placement) - set(MODULES)
        if unknown:
            raise ValueError(f"unknown modules in placement: {sorted(unknown)}")
        for m, p in self.placement.items():
            if p not in PLACEMENTS or (p == "both" and m not in ("S", "A")):
                raise ValueError(f"placement of {m} must be 'output' or 'feature' ('both' for S/A), got {p!r}")
        merged = copy.deepcopy(DEFAULT_LAMBDAS)
        for m, table in (self.lambdas or {}).items():
            merged.setdefault(m, {}).update(table)
        self.lambdas = merged


class Discriminator(nn.Module):
    """Patch discriminator: 4x4 stride-2 conv stages with leaky ReLU, raw logits out.

    Stages given stride 1 use 3x3 kernels so they keep the spatial size, which lets
    the same design run on low-resolution feature maps.
    """

    def __init__(self, in_channels, ndf=64, strides=(2, 2, 2, 2, 2), zero_init_last=False):
        super().__init__()
        widths = [ndf, ndf * 2, ndf * 4, ndf * 8, 1]
        if len(strides) != len(widths):
            raise ValueError("need one stride per stage")
        self.in_channels = in_channels
        layers = []
        cin = in_channels
        for i, (cout, s) in enumerate(zip(widths, strides)):
            k = 4 if s == 2 else 3
            layers.append(nn.Conv2d(cin, cout, k, stride=s, padding=1))
            if i < len(widths) - 1:
                layers.append(nn.LeakyReLU(0.2, inplace=True))
            cin = cout
        self.net = nn.Sequential(*layers)
        if zero_init_last:
            nn.init.zeros_(self.net[-1].weight)
            nn.init.zeros_(self.net[-1].bias)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"discriminator built for {self.in_channels} channels, got {x.shape[1]}")
        return self.net(x)


def discriminator_forward(d, m):
    return d(m)


def frozen_forward(d, m):
    """Run d with its parameters detached: gradients reach m but never d."""
    params = {k: v.detach() for k, v in d.named_parameters()}
    return functional_call(d, params, (m,))


def bce_to(scores, label):
    return F.binary_cross_entropy_with_logits(scores, torch.full_like(scores, float(label)))


def match_width(src_map, tgt_map):
    """Crop the wider map to the narrower one's width at a random circular offset.

    On small maps a patch discriminator's receptive field spans the whole width of
    a pinhole map but not of a panorama, so zero padding alone tells the domains
    apart.  Windows of equal width remove that cue; wrapping is exact for 360-degree
    maps.  Uses the global torch RNG.
    """
    ws, wt = src_map.shape[-1], tgt_map.shape[-1]
    if ws == wt:
        return src_map, tgt_map

    def window(m, width):
        x0 = int(torch.randint(m.shape[-1], (1,)))
        return torch.roll(m, -x0, dims=-1)[..., :width]

    if wt > ws:
        return src_map, window(tgt_map, ws)
    return window(src_map, wt), tgt_map


def adversarial_losses(src_map, tgt_map, src_label, d, class_weights=None, seg_logits=None, window=False):
    """(L_seg, L_adv, L_d) for one module.

    src_map / tgt_map are the discriminator inputs.  L_seg uses seg_logits when
    given (feature-space placement), otherwise src_map itself; it is None when no
    source label is supplied.  L_adv runs d frozen on the target map against the
    source label; L_d runs d on detached maps.  With window=True the discriminator
    sees equal-width windows (match_width); L_seg still uses the full map.
    """
    l_seg = None
    if src_label is not None:
        logits = src_map if seg_logits is None else seg_logits
        l_seg = weighted_cross_entropy(logits, src_label, class_weights)
    if window:
        src_map, tgt_map = match_width(src_map, tgt_map)
    l_adv = bce_to(frozen_forward(d, tgt_map), SOURCE_LABEL)
    l_d = bce_to(d(src_map.detach()), SOURCE_LABEL) + bce_to(d(tgt_map.detach()), TARGET_LABEL)
    return l_seg, l_adv, l_d


def entropy_map_loss(feat):
    """-sum(sigmoid(F) * log sigmoid(F)) per batch item, averaged over the batch."""
    p = torch.sigmoid(feat)
    per_elem = p * F.softplus(-feat)      # -log sigmoid(x) = softplus(-x)
    return per_elem.reshape(feat.shape[0], -1).sum(1).mean()


def fcdam_entropy_loss(feat_s, feat_t, lam_s, lam_t):
    return lam_s * entropy_map_loss(feat_s) + lam_t * entropy_map_loss(feat_t)


def rcdam_two_stage(model, heads_s, heads_t, d1, d2, src_label=None, class_weights=None, rib_enabled=True,
                    window=False):
    """Loss bundle for the two-stage regional module.

    Stage 1 is SDAM on the pre-region prediction (C1); stage 2 runs region
    construction + interaction on the head feature, predicts again and applies
    the same losses with the second discriminator.
    """
    out = {}
    seg_pre, out["adv1"], out["d1"] = adversarial_losses(
        torch.softmax(heads_s.c1, 1), torch.softmax(heads_t.c1, 1), None, d1, window=window)
    reg_s, rdm_s = model.regional_forward(heads_s, rib_enabled)
    reg_t, rdm_t = model.regional_forward(heads_t, rib_enabled)
    _, out["adv2"], out["d2"] = adversarial_losses(torch.softmax(reg_s, 1), torch.softmax(reg_t, 1), None, d2,
                                                  window=window)
    if src_label is not None:
        out["seg_pre"] = weighted_cross_entropy(heads_s.c1, src_label, class_weights)
        out["seg"] = weighted_cross_entropy(reg_s, src_label, class_weights)
    out["_regional_s"], out["_regional_t"] = reg_s, reg_t
    return out


def combine_total_loss(losses, lambdas):
    """Lambda-weighted sums over modules: (L_G, L_D).

    losses: {module: {term: scalar tensor}}; lambdas: {module: {key: weight}}.
    Terms whose name starts with '_' are carried values, not losses.
    """
    missing = []
    for module, terms in losses.items():
        for term in terms:
            if term.startswith("_"):
                continue
            key = TERM_WEIGHT.get(term)
            if key is None:
                raise KeyError(f"unknown loss term {module}.{term}")
            if key not in lambdas.get(module, {}):
                missing.append(f"{module}.{key}")
    if missing:
        raise KeyError(f"missing lambda entries: {sorted(set(missing))}")
    l_g, l_d = None, None
    for module, terms in losses.items():
        for term, value in terms.items():
            if term.startswith("_") or value is None:
                continue
            weighted = lambdas[module][TERM_WEIGHT[term]] * value
            if term in D_TERMS:
                l_d = weighted if l_d is None else l_d + weighted
            else:
                l_g = weighted if l_g is None else l_g + weighted
    return l_g, l_d
