"""Command-line entry point: panoda <verb> [--config PATH] [--set key=value ...]."""
import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .trainer.config import ConfigError, load_config, parse_override, resolve

VERBS = ("synth-gen", "train", "adapt", "ssl", "eval", "bench", "viz", "ablate")
ABLATION_SETS = (("S",), ("S", "A"), ("S", "A", "R"), ("S", "A", "F", "R"))

log = logging.getLogger("panoda")


def build_parser():
    p = argparse.ArgumentParser(prog="panoda", description="pinhole-to-panoramic adaptation toolkit")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: $PANODA_OUT/<verb>-<run id>)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, repeatable; applied after the file, last wins")
    p.add_argument("--device", default="cpu")
    p.add_argument("--single-thread", action="store_true", help="one thread, deterministic kernels")
    p.add_argument("--checkpoint", help="input checkpoint for ssl / eval / bench / viz")
    p.add_argument("--num", type=int, default=4, help="samples exported by viz")
    return p


def _overrides(args):
    items = [parse_override(o) for o in args.overrides]
    if args.seed is not None:
        clash = [v for k, v in items if k == "seed" and v != args.seed]
        if clash:
            raise ConfigError([f"--seed {args.seed} conflicts with --set seed={clash[-1]}"])
        items.append(("seed", args.seed))
    for key, value in items:
        log.info("override %s = %r", key, value)
    return items


def resolve_args(args):
    overrides = _overrides(args)
    if args.config:
        return load_config(args.config, overrides)
    return resolve({}, overrides)


def output_dir(args, verb, rid):
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get("PANODA_OUT", "runs"))
    return root / f"{verb}-{rid}"


def write_snapshot(out, cfg, verb, rid):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    (out / "run_id").write_text(rid + "\n")
    (out / "command.json").write_text(json.dumps({"verb": verb, "run_id": rid}, sort_keys=True) + "\n")


def _require_checkpoint(args):
    if not args.checkpoint:
        raise ConfigError([f"{args.verb} needs --checkpoint"])
    if not Path(args.checkpoint).exists():
        raise ConfigError([f"checkpoint not found: {args.checkpoint}"])
    return Path(args.checkpoint)


# -- verbs ----------------------------------------------------------------------
def cmd_synth_gen(cfg, out, args):
    from .datapipe import SyntheticSceneSpec, write_synthetic_dataset
    d = cfg["data"]
    spec = SyntheticSceneSpec.from_dict({"seed": cfg["seed"], **d["synthetic"]})
    root = out / "data"
    write_synthetic_dataset(root, spec, d["n_source"], d["n_target_train"], d["n_target_val"], d["n_target_test"])
    print(f"synthetic dataset written to {root}")


def cmd_train(cfg, out, args, modules=None, ssl=False):
    from .trainer.experiment import run_experiment
    report, _ = run_experiment(cfg, out, modules_override=modules, ssl=ssl)
    res = report["final"]
    if res is not None:
        print(f"{'+'.join(report['modules']) or 'source-only'}: mIoU {100 * res['miou']:.2f}")
    print(f"outputs in {out}")


def cmd_ssl(cfg, out, args):
    from .trainer.experiment import run_ssl_from
    ckpt = _require_checkpoint(args)
    report, _ = run_ssl_from(cfg, ckpt, out)
    before, after = report["stage1"], report["final"]
    if before and after:
        print(f"SSL: mIoU {100 * before['miou']:.2f} -> {100 * after['miou']:.2f}")
    print(f"outputs in {out}")


def _test_split(cfg):
    from .trainer.experiment import prepare_data
    data = prepare_data(cfg)
    test = data.get(f"target_{cfg['eval']['split']}") or []
    if not test:
        raise ConfigError([f"no labelled target {cfg['eval']['split']} split under {cfg['data']['root']}"])
    return test


def cmd_eval(cfg, out, args):
    from .datapipe import CITYSCAPES
    from .evalkit import format_table
    from .trainer.engine import Trainer
    from .trainer.experiment import evaluate, model_from_checkpoint
    model, header = model_from_checkpoint(_require_checkpoint(args))
    trainer = Trainer(model=model, num_classes=model.num_classes, device=args.device)
    ev = cfg["eval"]
    res = evaluate(trainer, _test_split(cfg), cfg["model"]["eval_head"], ev["sectors"], ev["directional_classes"])
    res["checkpoint"] = str(args.checkpoint)
    (out / "eval.json").write_text(json.dumps(res, indent=2, sort_keys=True))
    iou = [np.nan if v is None else v for v in res["iou"]]
    table = format_table([(Path(args.checkpoint).stem, res["miou"], iou)], CITYSCAPES)
    (out / "eval.txt").write_text(table + "\n")
    print(table)


def cmd_bench(cfg, out, args):
    from .evalkit import fps_benchmark
    from .segnet import SegNet
    from .trainer.experiment import model_from_checkpoint
    if args.checkpoint:
        model, _ = model_from_checkpoint(_require_checkpoint(args))
    else:
        m = cfg["model"]
        model = SegNet(19, m["mode"], tuple(m["channels"]), m["head_channels"])
    ev = cfg["eval"]
    res = fps_benchmark(model.to(args.device), tuple(ev["fps_resolution"]), ev["fps_n"], 1, ev["fps_warmup"],
                        args.device)
    (out / "bench.json").write_text(json.dumps(res, indent=2, sort_keys=True))
    print(f"{res['fps']:.2f} FPS at {res['resolution'][0]}x{res['resolution'][1]} ({res['hardware']})")


def cmd_viz(cfg, out, args):
    import torch

    from .attention import query_attention_map
    from .evalkit import export_attention, export_visuals
    from .trainer.engine import generate_pseudo_labels
    from .trainer.experiment import model_from_checkpoint, stack_images
    model, _ = model_from_checkpoint(_require_checkpoint(args))
    model.eval()
    test = _test_split(cfg)[:args.num]
    images = stack_images(test)
    _, var = generate_pseudo_labels(model, images)
    with torch.no_grad():
        _, heads = model(images)
    for i, s in enumerate(test):
        name = f"{i:03d}"
        export_visuals(heads.c1[i].argmax(0).numpy().astype(np.uint8), out, name, s.label, var[i].numpy())
        h, w = heads.c1_low.shape[-2:]
        query = (h // 2, w // 2)
        export_attention(query_attention_map(heads.pos_attn[i], query, (h, w)), query,
                         out / f"{name}_attention.png")
    print(f"{len(test)} samples exported to {out}")


def cmd_ablate(cfg, out, args):
    from .datapipe import CITYSCAPES
    from .evalkit import format_table
    from .trainer.experiment import prepare_data, run_experiment
    data = prepare_data(cfg)
    rows, records = [], []
    runs = max(cfg["ssl"]["runs"], 1)
    cfg = {**cfg, "ssl": {**cfg["ssl"], "runs": runs}}
    for modules in ABLATION_SETS:
        name = "+".join(modules)
        report, _ = run_experiment(cfg, out / name.replace("+", ""), data, list(modules), ssl=True)
        for label, res in ((name, report["stage1"]), (f"{name} +SSL", report["final"])):
            iou = [np.nan if v is None else v for v in res["iou"]]
            rows.append((label, res["miou"], iou))
            records.append({"modules": list(modules), "ssl": label.endswith("SSL"), "miou": res["miou"],
                            "iou": res["iou"]})
    table = format_table(rows, CITYSCAPES)
    (out / "ablate.json").write_text(json.dumps(records, indent=2, sort_keys=True))
    (out / "ablate.txt").write_text(table + "\n")
    print(table)


def _dispatch(verb, cfg, out, args):
    if verb == "synth-gen":
        return cmd_synth_gen(cfg, out, args)
    if verb == "train":
        return cmd_train(cfg, out, args, modules=[])
    if verb == "adapt":
        return cmd_train(cfg, out, args, ssl=True)
    if verb == "ssl":
        return cmd_ssl(cfg, out, args)
    if verb == "eval":
        return cmd_eval(cfg, out, args)
    if verb == "bench":
        return cmd_bench(cfg, out, args)
    if verb == "viz":
        return cmd_viz(cfg, out, args)
    return cmd_ablate(cfg, out, args)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = resolve_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    from .trainer.experiment import run_id, set_determinism
    rid = run_id(cfg)
    out = output_dir(args, args.verb, rid)
    try:
        write_snapshot(out, cfg, args.verb, rid)
        set_determinism(args.single_thread)
        _dispatch(args.verb, cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        diag = out / "error.txt"
        try:
            diag.parent.mkdir(parents=True, exist_ok=True)
            diag.write_text(traceback.format_exc())
        except OSError:
            diag = None
        print(f"{args.verb} failed: {sys.exc_info()[1]}", file=sys.stderr)
        print(f"diagnostics: {diag if diag else 'unavailable (output directory not writable)'}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
