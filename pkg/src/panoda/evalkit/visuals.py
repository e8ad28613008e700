import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..datapipe.classmap import CITYSCAPES, IGNORE_INDEX


def colorize(label, cmap=CITYSCAPES):
    return cmap.palette_array()[np.asarray(label, dtype=np.uint8)]


def decolorize(rgb, cmap=CITYSCAPES):
    """Inverse of colorize; colors outside the palette raise."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    lut = {tuple(c): i for i, c in enumerate(cmap.palette)}
    lut[(0, 0, 0)] = IGNORE_INDEX
    flat = rgb.reshape(-1, 3)
    keys = flat[:, 0].astype(np.int64) << 16 | flat[:, 1].astype(np.int64) << 8 | flat[:, 2]
    out = np.empty(keys.shape, dtype=np.uint8)
    for color, idx in lut.items():
        code = color[0] << 16 | color[1] << 8 | color[2]
        out[keys == code] = idx
    known = np.isin(keys, [c[0] << 16 | c[1] << 8 | c[2] for c in lut])
    if not known.all():
        raise ValueError("image contains colors outside the palette")
    return out.reshape(rgb.shape[:2])


def heatmap_png(values, path, extra=None):
    """Min-max normalise to 8-bit grayscale; record the range in a JSON sidecar."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros(values.shape) if hi <= lo else (values - lo) / (hi - lo)
    Image.fromarray(np.rint(scaled * 255).astype(np.uint8), mode="L").save(path)
    meta = {"min": lo, "max": hi}
    meta.update(extra or {})
    Path(path).with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta


def export_visuals(pred, out_dir, name="sample", gt=None, uncertainty=None, cmap=CITYSCAPES):
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    files = {}
    files["pred"] = out_dir / f"{name}_pred.png"
    Image.fromarray(colorize(pred, cmap)).save(files["pred"])
    if gt is not None:
        files["gt"] = out_dir / f"{name}_gt.png"
        Image.fromarray(colorize(gt, cmap)).save(files["gt"])
    if uncertainty is not None:
        files["uncertainty"] = out_dir / f"{name}_uncertainty.png"
        heatmap_png(uncertainty, files["uncertainty"], {"kind": "uncertainty"})
        files["uncertainty_meta"] = files["uncertainty"].with_suffix(".json")
    return files


def export_attention(attn_map, query, out_path):
    return heatmap_png(attn_map, out_path, {"kind": "position_attention", "query": list(query)})
