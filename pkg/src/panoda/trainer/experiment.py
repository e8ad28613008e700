"""Config-driven experiment: data preparation, stage 1, optional SSL runs, evaluation."""
import copy
import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import torch

from .. import checkpoint
from ..damods import ModuleConfig
from ..datapipe import (CITYSCAPES, SyntheticSceneSpec, apply_augment, compute_class_weights, draw_augment,
                        histogram_report, load_all, load_manifest, write_synthetic_dataset)
from ..evalkit import confusion_from, directional_report, format_table, iou_report
from .engine import OptimConfig, Trainer, generate_pseudo_labels, uncertainty_gate

log = logging.getLogger(__name__)

DOMAIN_CODES = {"source": 0, "target": 1}


def run_id(cfg):
    return hashlib.sha1(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


def set_determinism(single_thread=True):
    if single_thread:
        torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


# -- data ---------------------------------------------------------------------
def prepare_data(cfg):
    """Load source train, target train and the labelled target val/test splits into memory."""
    d = cfg["data"]
    if d["layout"] == "synthetic":
        root = Path(d["root"])
        spec = SyntheticSceneSpec.from_dict({"seed": cfg["seed"], **d["synthetic"]})
        counts = {"source_train": d["n_source"], "target_train": d["n_target_train"],
                  "target_val": d["n_target_val"], "target_test": d["n_target_test"]}
        sidecar = root / "synthetic.json"
        if not sidecar.exists():
            write_synthetic_dataset(root, spec, *counts.values())
        else:
            # never train on a stale dataset generated under other settings
            have = json.loads(sidecar.read_text())
            want = json.loads(json.dumps(spec.to_dict()))
            if have.get("spec") != want or have.get("counts") != counts:
                raise ValueError(f"synthetic data at {root} was generated with a different spec or split sizes; "
                                 "use another data.root, delete it, or pin data.synthetic.seed")
        src_root, tgt_root, src_layout, tgt_layout = root / "pinhole", root / "panoramic", "synthetic", "synthetic"
    else:
        src_root, tgt_root = Path(d["source_root"]), Path(d["target_root"])
        src_layout, tgt_layout = "cityscapes", "densepass"
    data = {}
    data["source"] = load_all(load_manifest(src_root, "train", src_layout, "source", d["source_resize"]))
    tgt_train = load_manifest(tgt_root, "train", "densepass" if tgt_layout == "densepass" else tgt_layout,
                              "target", d["target_resize"])
    # target training labels are never used for adaptation
    tgt_train.entries = [(img, None) for img, _ in tgt_train.entries]
    data["target"] = load_all(tgt_train)
    for split in ("val", "test"):
        try:
            data[f"target_{split}"] = load_all(load_manifest(tgt_root, split, tgt_layout, "target",
                                                             d["target_resize"]))
        except FileNotFoundError:
            data[f"target_{split}"] = []
    return data


def stack_images(samples):
    return torch.from_numpy(np.stack([s.image for s in samples])).permute(0, 3, 1, 2).contiguous()


def stack_labels(samples):
    return torch.from_numpy(np.stack([s.label for s in samples]).astype(np.int64))


class BatchSampler:
    """Deterministic batches: index order and augmentation are pure functions of (seed, iteration)."""

    def __init__(self, samples, batch_size, seed, domain, augment=True, max_shift=2):
        self.samples = samples
        self.batch_size = batch_size
        self.seed = seed
        self.code = DOMAIN_CODES[domain]
        self.augment = augment
        self.max_shift = max_shift
        self._perm_epoch = None
        self._perm = None

    def _perm_for(self, epoch):
        if self._perm_epoch != epoch:
            self._perm = np.random.default_rng([self.seed, self.code, epoch]).permutation(len(self.samples))
            self._perm_epoch = epoch
        return self._perm

    def indices(self, it):
        n = len(self.samples)
        out = []
        for j in range(self.batch_size):
            k = it * self.batch_size + j
            out.append(int(self._perm_for(k // n)[k % n]))
        return out

    def batch(self, it, labels=None):
        chosen = []
        for j, idx in enumerate(self.indices(it)):
            s = self.samples[idx]
            if labels is not None:
                s = copy.copy(s)
                s.label = labels[idx]
            if self.augment:
                rng = np.random.default_rng([self.seed, self.code, it, j, 7])
                s = apply_augment(s, *draw_augment(rng, self.max_shift))
            chosen.append(s)
        x = stack_images(chosen)
        y = stack_labels(chosen) if chosen[0].label is not None else None
        return x, y


# -- evaluation -----------------------------------------------------------------
def evaluate(trainer, samples, head="c1", sectors=8, classes=None):
    if not samples:
        return None
    images = stack_images(samples)
    preds = trainer.predict(images, head).numpy()
    gts = [s.label for s in samples]
    cm = confusion_from(preds, gts, trainer.num_classes)
    iou, miou, acc = iou_report(cm)
    directional, _ = directional_report(preds, gts, sectors, classes, trainer.num_classes)
    return {
        "miou": miou,
        "pixel_acc": acc,
        "iou": [None if np.isnan(v) else float(v) for v in iou],
        "sectors": directional,
        "confusion": cm.tolist(),
    }


def _build_trainer(cfg, class_weights, modules_override=None):
    m = cfg["model"]
    active = cfg["modules"]["active"] if modules_override is None else modules_override
    modules = ModuleConfig(active=tuple(active), placement=dict(cfg["modules"]["placement"]),
                           lambdas=copy.deepcopy(cfg["lambdas"]), d_window=cfg["modules"]["d_window"])
    o = cfg["optim"]
    optim = OptimConfig(o["g_lr"], o["g_momentum"], o["g_weight_decay"], o["d_lr"], tuple(o["d_betas"]),
                        o["ssl_g_lr"], o["ssl_d_lr"])
    torch.manual_seed(cfg["seed"])
    return Trainer(modules, optim, class_weights=class_weights, mode=m["mode"], channels=tuple(m["channels"]),
                   head_channels=m["head_channels"], ndf=m["ndf"], max_iter=cfg["schedule"]["max_iter"],
                   power=cfg["schedule"]["power"], rib=cfg["modules"]["rib"])


class MetricsLog:
    """Newline-delimited JSON metrics; one record per step and per evaluation."""

    def __init__(self, path, header=None):
        self.path = Path(path) if path else None
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")
        if header is not None:
            self.write({"kind": "header", **header})

    def write(self, record):
        self.records.append(record)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def run_stage1(trainer, data, cfg, mlog, out_dir=None):
    sch = cfg["schedule"]
    d = cfg["data"]
    src = BatchSampler(data["source"], sch["batch_size"], cfg["seed"], "source", d["augment"], d["max_shift"])
    tgt = BatchSampler(data["target"], sch["batch_size"], cfg["seed"], "target", d["augment"], d["max_shift"])
    best = {"miou": -1.0, "state": None, "iter": None}
    val = data.get("target_val") or []
    head = cfg["model"]["eval_head"]
    for it in range(trainer.iteration, sch["iters"]):
        xs, ys = src.batch(it)
        xt, _ = tgt.batch(it)
        metrics = trainer.train_step((xs, ys), xt)
        if sch["log_every"] and it % sch["log_every"] == 0:
            mlog.write({"kind": "step", **metrics})
        if sch["eval_every"] and (it + 1) % sch["eval_every"] == 0 and val:
            res = evaluate(trainer, val, head)
            mlog.write({"kind": "eval", "split": "val", "iter": it + 1, "miou": res["miou"]})
            if res["miou"] > best["miou"]:
                best = {"miou": res["miou"], "state": copy.deepcopy(trainer.model.state_dict()), "iter": it + 1}
        if out_dir and sch["checkpoint_every"] and (it + 1) % sch["checkpoint_every"] == 0:
            trainer.save(Path(out_dir) / f"state_{it + 1:07d}.ckpt", {"run_id": run_id(cfg)})
    return best


def run_ssl(trainer, data, cfg, mlog, run_index=0):
    """One self-training run: pseudo-label every target image once, then iterate."""
    s = cfg["ssl"]
    sch = cfg["schedule"]
    images = stack_images(data["target"])
    labels = []
    kept = 0
    for i in range(0, images.shape[0], 8):
        pseudo, var = generate_pseudo_labels(trainer.model, images[i:i + 8])
        gated = uncertainty_gate(pseudo, var, s["quantile"], policy=s["gate"])
        kept += int((gated != 255).sum())
        labels.extend(g.numpy().astype(np.uint8) for g in gated)
    mlog.write({"kind": "pseudo", "run": run_index, "kept_fraction": kept / images[:, 0].numel()})
    seed = cfg["seed"] + 1000 * (run_index + 1)
    d = cfg["data"]
    tgt = BatchSampler(data["target"], sch["batch_size"], seed, "target", d["augment"], d["max_shift"])
    src = BatchSampler(data["source"], sch["batch_size"], seed, "source", d["augment"], d["max_shift"])
    trainer.stage = 2
    for it in range(s["iters"]):
        xt, yt = tgt.batch(it, labels)
        batch_s = src.batch(it) if s["keep_adversarial"] else None
        metrics = trainer.ssl_step((xt, yt), batch_s, it, max(s["iters"], 1), s["keep_adversarial"],
                                   s["class_weights"])
        if sch["log_every"] and it % sch["log_every"] == 0:
            mlog.write({"kind": "step", "ssl_run": run_index, **metrics})
    return trainer


def run_experiment(cfg, out_dir=None, data=None, modules_override=None, ssl=True):
    """Execute stage 1 and the configured SSL runs; return the report dict."""
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    data = data if data is not None else prepare_data(cfg)
    weights = None
    if cfg["data"]["use_class_weights"]:
        weights = compute_class_weights(data["source"], cfg["data"]["class_weight_k"])
    trainer = _build_trainer(cfg, weights, modules_override)
    rid = run_id(cfg)
    header = {"run_id": rid, "modules": list(trainer.modules.active),
              "lambdas": {m: trainer.modules.lambdas[m] for m in ("base",) + trainer.modules.active}}
    mlog = MetricsLog(out / "metrics.ndjson" if out else None, header)
    best = run_stage1(trainer, data, cfg, mlog, out)
    head = cfg["model"]["eval_head"]
    ev = cfg["eval"]
    test = data.get(f"target_{ev['split']}") or []
    report = {"run_id": rid, "modules": list(trainer.modules.active), "stage1_iters": cfg["schedule"]["iters"]}
    report["stage1"] = evaluate(trainer, test, head, ev["sectors"], ev["directional_classes"])
    if out:
        trainer.save(out / "stage1.ckpt", {"run_id": rid})
    if ssl and cfg["ssl"]["runs"] > 0:
        if cfg["ssl"]["init"] == "best" and best["state"] is not None:
            trainer.model.load_state_dict(best["state"])
            report["ssl_init_iter"] = best["iter"]
        report["ssl"] = []
        for r in range(cfg["ssl"]["runs"]):
            run_ssl(trainer, data, cfg, mlog, r)
            res = evaluate(trainer, test, head, ev["sectors"], ev["directional_classes"])
            mlog.write({"kind": "eval", "split": ev["split"], "ssl_run": r, "miou": res and res["miou"]})
            report["ssl"].append(res)
        report["ssl_skipped"] = trainer.ssl_skipped
        if out:
            trainer.save(out / "final.ckpt", {"run_id": rid})
    final = report["ssl"][-1] if report.get("ssl") else report["stage1"]
    report["final"] = final
    if data.get("source") and data.get("target_test"):
        report["histograms"] = histogram_report({"source": data["source"], "target_test": data["target_test"]})
    if out:
        write_report(report, out)
    return report, trainer


def write_report(report, out):
    out = Path(out)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    rows = []
    name = "+".join(report["modules"]) or "source-only"
    if report.get("stage1"):
        rows.append((name, report["stage1"]["miou"], _nan(report["stage1"]["iou"])))
    for i, res in enumerate(report.get("ssl") or []):
        rows.append((f"{name} SSL{i + 1}", res["miou"], _nan(res["iou"])))
    if rows:
        (out / "report.txt").write_text(format_table(rows, CITYSCAPES) + "\n")


def _nan(values):
    return [np.nan if v is None else v for v in values]


def model_from_checkpoint(path):
    """SegNet from either a bare model archive or a full train-state archive."""
    from ..segnet import SegNet
    state, header = checkpoint.load_archive(path)
    m = header.get("model")
    if not m:
        raise ValueError(f"{path}: checkpoint header has no model config")
    model = SegNet(num_classes=m["num_classes"], mode=m["mode"], channels=tuple(m["channels"]),
                   head_channels=m["head_channels"])
    model.load_state_dict(state["model"])
    return model, header


def run_ssl_from(cfg, ckpt, out_dir=None, data=None):
    """SSL runs on top of a stage-1 train-state checkpoint."""
    out = Path(out_dir) if out_dir else None
    data = data if data is not None else prepare_data(cfg)
    weights = None
    if cfg["data"]["use_class_weights"]:
        weights = compute_class_weights(data["source"], cfg["data"]["class_weight_k"])
    _, header = checkpoint.load_archive(ckpt)
    trainer = _build_trainer(cfg, weights, header.get("modules"))
    trainer.restore(ckpt)
    rid = run_id(cfg)
    mlog = MetricsLog(out / "metrics.ndjson" if out else None, {"run_id": rid, "init": str(ckpt)})
    head, ev = cfg["model"]["eval_head"], cfg["eval"]
    test = data.get(f"target_{ev['split']}") or []
    report = {"run_id": rid, "modules": list(trainer.modules.active), "init": str(ckpt)}
    report["stage1"] = evaluate(trainer, test, head, ev["sectors"], ev["directional_classes"])
    report["ssl"] = []
    for r in range(max(cfg["ssl"]["runs"], 1)):
        run_ssl(trainer, data, cfg, mlog, r)
        report["ssl"].append(evaluate(trainer, test, head, ev["sectors"], ev["directional_classes"]))
    report["ssl_skipped"] = trainer.ssl_skipped
    report["final"] = report["ssl"][-1]
    if out:
        trainer.save(out / "final.ckpt", {"run_id": rid})
        write_report(report, out)
    return report, trainer
