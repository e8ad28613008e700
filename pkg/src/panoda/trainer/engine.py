"""Stage-1 adversarial training, stage-2 pseudo-label self-training and train state."""
import math
from dataclasses import dataclass

import numpy as np
import torch

from .. import checkpoint
from ..damods import (Discriminator, ModuleConfig, adversarial_losses, combine_total_loss,
                      entropy_map_loss, rcdam_two_stage)
from ..segnet import SegNet, boundary_loss
from .losses import IGNORE_INDEX, poly_lr, weighted_cross_entropy


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration, losses):
        self.iteration = iteration
        self.losses = losses
        dump = ", ".join(f"{k}={v}" for k, v in sorted(losses.items()))
        super().__init__(f"non-finite loss at iteration {iteration}: {dump}")


@dataclass
class OptimConfig:
    g_lr: float = 1e-5
    g_momentum: float = 0.9
    g_weight_decay: float = 5e-4
    d_lr: float = 4e-6
    d_betas: tuple = (0.9, 0.99)
    ssl_g_lr: float = 1e-8
    ssl_d_lr: float = 4e-9

    def __post_init__(self):
        self.d_betas = tuple(self.d_betas)
        for name in ("g_lr", "d_lr", "ssl_g_lr", "ssl_d_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _d_strides(rate):
    down = 5 - int(round(math.log2(rate)))
    return (2,) * down + (1,) * (5 - down)


def _discriminator_inputs(module, placement, heads, backbone):
    """Map fed to a module's discriminator for one domain."""
    if module == "S":
        return torch.softmax(heads.c1, 1) if placement == "output" else backbone.features[16]
    if module == "A":
        return torch.softmax(heads.c2, 1) if placement == "output" else heads.dual_feat
    raise KeyError(module)


def generate_pseudo_labels(model, images):
    """(pseudo labels N x H x W, per-pixel variance N x H x W) from the two semantic heads."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        _, heads = model(images)
        p1 = torch.softmax(heads.c1, 1)
        p2 = torch.softmax(heads.c2, 1)
        pseudo = ((p1 + p2) / 2).argmax(1)
        variance = prediction_variance(p1, p2)
    model.train(was_training)
    return pseudo, variance


def prediction_variance(p1, p2):
    """Mean over classes of the squared difference of two probability maps (dim 1)."""
    return ((p1 - p2) ** 2).mean(1)


GATE_POLICIES = ("image", "class")


def _lower_quantile(v, q):
    return torch.quantile(v.double(), q, interpolation="lower").to(v.dtype)


def uncertainty_gate(pseudo, variance, quantile=0.7, ignore_index=IGNORE_INDEX, policy="image"):
    """Keep pixels whose variance is at most a q-quantile; others become ignore.

    policy "image" takes one quantile per image. "class" takes it separately over
    each predicted class within the image, so rare classes keep the same share of
    their pixels as common ones.
    """
    if policy not in GATE_POLICIES:
        raise ValueError(f"gate policy must be one of {GATE_POLICIES}, got {policy!r}")
    gated = pseudo.clone()
    for i in range(pseudo.shape[0]):
        v = variance[i]
        if policy == "image":
            gated[i][v > _lower_quantile(v.reshape(-1), quantile)] = ignore_index
            continue
        drop = torch.zeros_like(v, dtype=torch.bool)
        for c in torch.unique(pseudo[i]):
            mask = pseudo[i] == c
            drop |= mask & (v > _lower_quantile(v[mask], quantile))
        gated[i][drop] = ignore_index
    return gated


class Trainer:
    def __init__(self, modules=None, optim=None, model=None, class_weights=None, num_classes=19,
                 mode="fanet_like", channels=(16, 32, 48, 64), head_channels=64, ndf=64,
                 max_iter=200000, power=0.9, rib=True, device="cpu"):
        self.device = torch.device(device)
        self.modules = modules or ModuleConfig(active=())
        self.optim_cfg = optim or OptimConfig()
        self.model = (model or SegNet(num_classes, mode, channels, head_channels)).to(self.device)
        self.num_classes = num_classes
        self.class_weights = None if class_weights is None else \
            torch.as_tensor(np.asarray(class_weights), dtype=torch.float32, device=self.device)
        self.max_iter = max_iter
        self.power = power
        self.rib = rib
        self.iteration = 0
        self.stage = 1
        self.ssl_skipped = 0
        self.discriminators = torch.nn.ModuleDict()
        head_rate = 8 if self.model.mode == "fanet_like" else 16
        for m in self.modules.active:
            place = self.modules.placement.get(m, "output")
            if m in ("S", "A"):
                # "both" keeps the output-space D under the module name and adds <m>_fs
                feat_in, rate = ((self.model.backbone.channels[16], 16) if m == "S"
                                 else (self.model.head_channels, head_rate))
                if place in ("output", "both"):
                    self.discriminators[m] = Discriminator(num_classes, ndf)
                if place == "feature":
                    self.discriminators[m] = Discriminator(feat_in, ndf, _d_strides(rate))
                if place == "both":
                    self.discriminators[m + "_fs"] = Discriminator(feat_in, ndf, _d_strides(rate))
            elif m == "R":
                self.discriminators["R1"] = Discriminator(num_classes, ndf)
                self.discriminators["R2"] = Discriminator(num_classes, ndf)
        self.discriminators.to(self.device)
        oc = self.optim_cfg
        self.opt_g = torch.optim.SGD(self.model.parameters(), lr=oc.g_lr, momentum=oc.g_momentum,
                                     weight_decay=oc.g_weight_decay)
        self.opt_d = {k: torch.optim.Adam(d.parameters(), lr=oc.d_lr, betas=oc.d_betas)
                      for k, d in self.discriminators.items()}

    # -- schedule -----------------------------------------------------------
    def set_lrs(self, it, max_iter, g_base, d_base):
        lr_g = poly_lr(g_base, min(it, max_iter), max_iter, self.power)
        lr_d = poly_lr(d_base, min(it, max_iter), max_iter, self.power)
        for group in self.opt_g.param_groups:
            group["lr"] = lr_g
        for opt in self.opt_d.values():
            for group in opt.param_groups:
                group["lr"] = lr_d
        return lr_g, lr_d

    # -- losses -------------------------------------------------------------
    def _supervised(self, heads, labels, weighted=True):
        w = self.class_weights if weighted else None
        return (weighted_cross_entropy(heads.c1, labels, w),
                weighted_cross_entropy(heads.c2, labels, w),
                boundary_loss(heads.b1, labels))

    def compute_losses(self, xs, ys, xt, adversarial=True, weighted=True):
        """Per-module loss dict for one (source, target) batch.

        xs/ys: labelled batch (pinhole in stage 1, pseudo-labelled panoramas in stage 2).
        xt: unlabelled target batch for the adversarial / entropy terms, or None.
        """
        active = self.modules.active if adversarial else ()
        bb_s, heads_s = self.model(xs)
        seg_c1, seg_c2, seg_b = self._supervised(heads_s, ys, weighted)
        need_target = xt is not None and len(active) > 0
        bb_t, heads_t = self.model(xt) if need_target else (None, None)

        c1_owned = any(m in active for m in ("S", "R", "F"))
        c2_owned = "A" in active
        losses = {"base": {}}
        if not c1_owned:
            losses["base"]["seg"] = seg_c1
        if not c2_owned:
            losses["base"]["seg_c2"] = seg_c2
        losses["base"]["boundary"] = seg_b
        for m in active:
            if m in ("S", "A"):
                losses[m] = {"seg": seg_c1 if m == "S" else seg_c2,
                             **self._alignment_terms(m, heads_s, bb_s, heads_t, bb_t)}
            elif m == "R":
                bundle = rcdam_two_stage(self.model, heads_s, heads_t, self.discriminators["R1"],
                                         self.discriminators["R2"], ys, self.class_weights, self.rib,
                                         self.modules.d_window)
                losses["R"] = {k: v for k, v in bundle.items() if not k.startswith("_")}
            elif m == "F":
                losses["F"] = {"seg": seg_c1, "ent_s": entropy_map_loss(bb_s.features[16]),
                               "ent_t": entropy_map_loss(bb_t.features[16])}
        return losses

    def _alignment_terms(self, m, heads_s, bb_s, heads_t, bb_t):
        """Adversarial terms of S or A: adv/d, or adv1/d1 (output) + adv2/d2 (feature) when placed at both."""
        place = self.modules.placement.get(m, "output")
        levels = [(place, m)] if place != "both" else [("output", m), ("feature", m + "_fs")]
        terms = {}
        for i, (level, key) in enumerate(levels, 1):
            src = _discriminator_inputs(m, level, heads_s, bb_s)
            tgt = _discriminator_inputs(m, level, heads_t, bb_t)
            _, l_adv, l_d = adversarial_losses(src, tgt, None, self.discriminators[key],
                                               window=self.modules.d_window)
            suffix = "" if len(levels) == 1 else str(i)
            terms["adv" + suffix], terms["d" + suffix] = l_adv, l_d
        return terms

    def _check_finite(self, losses):
        flat = {f"{m}.{t}": float(v.detach()) for m, terms in losses.items() for t, v in terms.items()}
        if not all(math.isfinite(v) for v in flat.values()):
            raise TrainingDiverged(self.iteration, flat)
        return flat

    def _step(self, losses, lambdas):
        flat = self._check_finite(losses)
        l_g, l_d = combine_total_loss(losses, lambdas)
        self.opt_g.zero_grad(set_to_none=True)
        for opt in self.opt_d.values():
            opt.zero_grad(set_to_none=True)
        l_g.backward()
        self.opt_g.step()
        if l_d is not None:
            # discriminator graphs only see detached generator maps
            l_d.backward()
            for opt in self.opt_d.values():
                opt.step()
        flat["L_G"] = float(l_g.detach())
        flat["L_D"] = None if l_d is None else float(l_d.detach())
        return flat

    def train_step(self, batch_s, batch_t):
        """One stage-1 iteration: generator update, then discriminator update."""
        oc = self.optim_cfg
        lr_g, lr_d = self.set_lrs(self.iteration, self.max_iter, oc.g_lr, oc.d_lr)
        self.model.train()
        xs, ys = batch_s
        xt = batch_t[0] if isinstance(batch_t, (tuple, list)) else batch_t
        losses = self.compute_losses(xs.to(self.device), ys.to(self.device),
                                     None if xt is None else xt.to(self.device))
        metrics = self._step(losses, self.modules.lambdas)
        metrics.update(iter=self.iteration, stage=1, lr_G=lr_g, lr_D=lr_d)
        self.iteration += 1
        return metrics

    def ssl_step(self, batch_t, batch_s=None, ssl_iter=0, ssl_max_iter=1, keep_adversarial=True,
                 class_weights=True):
        """Stage-2 iteration: supervised on gated target pseudo labels (ignore 255).

        Adversarial terms stay on when keep_adversarial and a source batch is given;
        then the pseudo-labelled panoramas take the labelled role and the source
        batch supplies the discriminator's other domain. class_weights=False drops
        the source class weights from the pseudo-label losses.
        """
        xt, yt = batch_t
        if bool((yt == IGNORE_INDEX).all()):
            self.ssl_skipped += 1
            return {"iter": self.iteration, "stage": 2, "skipped": True}
        oc = self.optim_cfg
        lr_g, lr_d = self.set_lrs(ssl_iter, ssl_max_iter, oc.ssl_g_lr, oc.ssl_d_lr)
        self.model.train()
        adversarial = keep_adversarial and batch_s is not None
        if adversarial:
            # discriminators keep their convention: pinhole = 0, panoramic = 1
            losses = self._ssl_adversarial_losses(xt.to(self.device), yt.to(self.device),
                                                  batch_s[0].to(self.device), class_weights)
        else:
            losses = self.compute_losses(xt.to(self.device), yt.to(self.device), None, adversarial=False,
                                         weighted=class_weights)
        metrics = self._step(losses, self.modules.lambdas)
        metrics.update(iter=self.iteration, stage=2, lr_G=lr_g, lr_D=lr_d, skipped=False)
        self.iteration += 1
        return metrics

    def _ssl_adversarial_losses(self, xt, yt, xs, weighted=True):
        active = self.modules.active
        w = self.class_weights if weighted else None
        bb_t, heads_t = self.model(xt)
        seg_c1, seg_c2, seg_b = self._supervised(heads_t, yt, weighted)
        bb_s, heads_s = self.model(xs) if active else (None, None)
        c1_owned = any(m in active for m in ("S", "R", "F"))
        losses = {"base": {}}
        if not c1_owned:
            losses["base"]["seg"] = seg_c1
        if "A" not in active:
            losses["base"]["seg_c2"] = seg_c2
        losses["base"]["boundary"] = seg_b
        for m in active:
            if m in ("S", "A"):
                losses[m] = {"seg": seg_c1 if m == "S" else seg_c2,
                             **self._alignment_terms(m, heads_s, bb_s, heads_t, bb_t)}
            elif m == "R":
                bundle = rcdam_two_stage(self.model, heads_s, heads_t, self.discriminators["R1"],
                                         self.discriminators["R2"], None, w, self.rib,
                                         self.modules.d_window)
                bundle["seg_pre"] = seg_c1
                reg_t, _ = self.model.regional_forward(heads_t, self.rib)
                bundle["seg"] = weighted_cross_entropy(reg_t, yt, w)
                losses["R"] = {k: v for k, v in bundle.items() if not k.startswith("_")}
            elif m == "F":
                losses["F"] = {"seg": seg_c1, "ent_s": entropy_map_loss(bb_s.features[16]),
                               "ent_t": entropy_map_loss(bb_t.features[16])}
        return losses

    # -- inference ----------------------------------------------------------
    @torch.no_grad()
    def predict(self, images, head="c1", chunk=8):
        self.model.eval()
        preds = []
        for i in range(0, images.shape[0], chunk):
            _, heads = self.model(images[i:i + chunk].to(self.device))
            if head == "c1":
                logits = heads.c1
            elif head == "c2":
                logits = heads.c2
            else:
                logits = (torch.softmax(heads.c1, 1) + torch.softmax(heads.c2, 1)) / 2
            preds.append(logits.argmax(1).cpu())
        return torch.cat(preds)

    # -- state --------------------------------------------------------------
    def state(self):
        return {
            "iteration": self.iteration,
            "stage": self.stage,
            "ssl_skipped": self.ssl_skipped,
            "model": self.model.state_dict(),
            "discriminators": self.discriminators.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": {k: o.state_dict() for k, o in self.opt_d.items()},
            "torch_rng": torch.get_rng_state(),
        }

    def load_state(self, state):
        self.iteration = int(state["iteration"])
        self.stage = int(state["stage"])
        self.ssl_skipped = int(state["ssl_skipped"])
        self.model.load_state_dict(state["model"])
        self.discriminators.load_state_dict(state["discriminators"])
        self.opt_g.load_state_dict(state["opt_g"])
        for k, o in self.opt_d.items():
            o.load_state_dict(state["opt_d"][k])
        torch.set_rng_state(state["torch_rng"])

    def save(self, path, header=None):
        h = {"kind": "trainstate", "model": self.model.config(), "modules": list(self.modules.active)}
        h.update(header or {})
        return checkpoint.save_archive(path, self.state(), h)

    def restore(self, path):
        state, header = checkpoint.load_archive(path)
        self.load_state(state)
        return header
