"""Experiment configuration: JSON file, defaults, dotted overrides, schema check."""
import copy
import json
from pathlib import Path

from ..damods import DEFAULT_LAMBDAS, MODULES

DEFAULTS = {
    "data": {
        "root": "data/synthetic",
        "layout": "synthetic",          # synthetic | cityscapes+densepass
        "source_root": None,            # for real layouts
        "target_root": None,
        "source_resize": None,          # [H, W] or null
        "target_resize": None,
        "augment": True,
        "max_shift": 2,
        "class_weight_k": 1.02,
        "use_class_weights": True,
        "synthetic": {},                # SyntheticSceneSpec overrides
        "n_source": 200,
        "n_target_train": 200,
        "n_target_val": 20,
        "n_target_test": 50,
    },
    "model": {
        "mode": "fanet_like",
        "channels": [16, 32, 48, 64],
        "head_channels": 64,
        "ndf": 64,
        "eval_head": "c1",              # c1 | c2 | mean
    },
    "modules": {
        "active": ["S"],
        "placement": {"S": "output", "A": "feature", "R": "output", "F": "feature"},
        "rib": True,
        "d_window": False,              # equal-width discriminator windows, for small maps
    },
    "lambdas": copy.deepcopy(DEFAULT_LAMBDAS),
    "optim": {
        "g_lr": 1e-5,
        "g_momentum": 0.9,
        "g_weight_decay": 5e-4,
        "d_lr": 4e-6,
        "d_betas": [0.9, 0.99],
        "ssl_g_lr": 1e-8,
        "ssl_d_lr": 4e-9,
    },
    "schedule": {
        "iters": 200000,
        "max_iter": 200000,
        "batch_size": 2,
        "power": 0.9,
        "eval_every": 0,
        "checkpoint_every": 0,
        "log_every": 1,
    },
    "ssl": {
        "runs": 0,
        "iters": 0,
        "quantile": 0.7,
        "gate": "image",                # image | class (quantile per predicted class)
        "keep_adversarial": True,
        "class_weights": True,          # weight the pseudo-label loss with the source class weights
        "init": "best",                 # best (by target-val mIoU, needs eval_every) | last
    },
    "eval": {
        "split": "test",
        "sectors": 8,
        "directional_classes": [0, 1, 2, 10, 11, 13],
        "fps_n": 100,
        "fps_warmup": 10,
        "fps_resolution": [400, 2048],
    },
    "seed": 0,
}

# keys whose value is a free-form mapping rather than a fixed schema
OPEN_KEYS = {("data", "synthetic"), ("lambdas",), ("modules", "placement")}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  - {e}" for e in self.errors))


def _merge(base, override, path, errors):
    for key, value in override.items():
        here = path + (key,)
        if key not in base:
            errors.append(f"unknown key {'.'.join(here)}")
            continue
        if here in OPEN_KEYS or path in OPEN_KEYS:
            if isinstance(base[key], dict) and isinstance(value, dict):
                base[key] = _deep_update(base[key], value)
            else:
                base[key] = value
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                errors.append(f"{'.'.join(here)} must be a table")
                continue
            _merge(base[key], value, here, errors)
        else:
            base[key] = value


def _deep_update(base, upd):
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def _check_types(cfg, ref, path, errors):
    for key, default in ref.items():
        here = path + (key,)
        if here in OPEN_KEYS:
            continue
        value = cfg[key]
        if isinstance(default, dict):
            _check_types(value, default, here, errors)
        elif default is None or value is None:
            continue
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                errors.append(f"{'.'.join(here)} must be a boolean, got {value!r}")
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{'.'.join(here)} must be a number, got {value!r}")
            elif isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float) \
                    and not value.is_integer():
                errors.append(f"{'.'.join(here)} must be an integer, got {value!r}")
        elif isinstance(default, str) and not isinstance(value, str):
            errors.append(f"{'.'.join(here)} must be a string, got {value!r}")
        elif isinstance(default, list) and not isinstance(value, list):
            errors.append(f"{'.'.join(here)} must be a list, got {value!r}")


def _check_values(cfg, errors):
    if cfg["model"]["mode"] not in ("danet_like", "fanet_like"):
        errors.append(f"model.mode must be danet_like or fanet_like, got {cfg['model']['mode']!r}")
    if cfg["model"]["eval_head"] not in ("c1", "c2", "mean"):
        errors.append("model.eval_head must be c1, c2 or mean")
    active = cfg["modules"]["active"]
    if isinstance(active, list):
        bad = [m for m in active if m not in MODULES]
        if bad:
            errors.append(f"modules.active has unknown modules {bad}; allowed {list(MODULES)}")
        for m in active:
            if m in MODULES and m not in cfg["lambdas"]:
                errors.append(f"lambdas.{m} missing for active module {m}")
    for m, p in cfg["modules"]["placement"].items():
        if m not in MODULES:
            errors.append(f"modules.placement has unknown module {m!r}")
        elif p not in ("output", "feature", "both") or (p == "both" and m not in ("S", "A")):
            errors.append(f"modules.placement.{m} must be 'output' or 'feature' ('both' for S and A)")
    for key in ("g_lr", "d_lr", "ssl_g_lr", "ssl_d_lr"):
        v = cfg["optim"][key]
        if isinstance(v, (int, float)) and v <= 0:
            errors.append(f"optim.{key} must be > 0")
    sch = cfg["schedule"]
    if all(isinstance(sch[k], (int, float)) for k in ("iters", "max_iter")):
        if sch["iters"] < 0 or sch["max_iter"] <= 0 or sch["iters"] > sch["max_iter"]:
            errors.append("schedule requires 0 <= iters <= max_iter and max_iter > 0")
    if isinstance(sch["batch_size"], int) and sch["batch_size"] < 1:
        errors.append("schedule.batch_size must be >= 1")
    q = cfg["ssl"]["quantile"]
    if isinstance(q, (int, float)) and not 0.0 <= q <= 1.0:
        errors.append("ssl.quantile must lie in [0, 1]")
    if cfg["ssl"]["gate"] not in ("image", "class"):
        errors.append("ssl.gate must be 'image' or 'class'")
    if cfg["ssl"]["init"] not in ("last", "best"):
        errors.append("ssl.init must be 'last' or 'best'")


def parse_override(text):
    if "=" not in text:
        raise ConfigError([f"override {text!r} is not key=value"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(raw, overrides):
    """Dotted key=value pairs, applied in order (last wins)."""
    raw = copy.deepcopy(raw)
    for text in overrides:
        key, value = parse_override(text) if isinstance(text, str) else text
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {key!r} descends into a non-table"])
        node[parts[-1]] = value
    return raw


def resolve(raw=None, overrides=()):
    raw = apply_overrides(raw or {}, overrides)
    cfg = copy.deepcopy(DEFAULTS)
    errors = []
    _merge(cfg, raw, (), errors)
    _check_types(cfg, DEFAULTS, (), errors)
    try:
        _check_values(cfg, errors)
    except (TypeError, AttributeError, KeyError):
        # malformed values already reported by the type check
        if not errors:
            raise
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path, overrides=()):
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return resolve(raw, overrides)
