"""Checkpoint archives: a zip of .npy arrays plus a JSON header.

Zip entries carry a fixed timestamp so identical state gives identical bytes.
Nested state (optimizer dicts, RNG state) is flattened: tensors become array
entries and everything else stays in the JSON skeleton with a placeholder.
"""
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

FIXED_DATE = (1980, 1, 1, 0, 0, 0)
FORMAT = "panoda-ckpt-1"


def _flatten(obj, prefix, arrays):
    if isinstance(obj, torch.Tensor):
        arrays[prefix] = obj.detach().cpu().numpy()
        return {"__tensor__": prefix, "dtype": str(obj.dtype).replace("torch.", "")}
    if isinstance(obj, np.ndarray):
        arrays[prefix] = obj
        return {"__array__": prefix}
    if isinstance(obj, dict):
        return {"__dict__": [[_key(k), _flatten(v, f"{prefix}/{k}", arrays)] for k, v in obj.items()]}
    if isinstance(obj, (list, tuple)):
        kind = "__list__" if isinstance(obj, list) else "__tuple__"
        return {kind: [_flatten(v, f"{prefix}/{i}", arrays) for i, v in enumerate(obj)]}
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise TypeError(f"cannot serialise {type(obj)} at {prefix}")


def _key(k):
    return {"int": k} if isinstance(k, int) else k


def _unkey(k):
    return k["int"] if isinstance(k, dict) else k


def _unflatten(node, arrays):
    if isinstance(node, dict):
        if "__tensor__" in node:
            return torch.from_numpy(arrays[node["__tensor__"]].copy())
        if "__array__" in node:
            return arrays[node["__array__"]].copy()
        if "__dict__" in node:
            return {_unkey(k): _unflatten(v, arrays) for k, v in node["__dict__"]}
        if "__list__" in node:
            return [_unflatten(v, arrays) for v in node["__list__"]]
        if "__tuple__" in node:
            return tuple(_unflatten(v, arrays) for v in node["__tuple__"])
    return node


def save_archive(path, state, header=None):
    arrays = {}
    skeleton = _flatten(state, "state", arrays)
    meta = {"format": FORMAT, "header": header or {}, "state": skeleton}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("header.json", FIXED_DATE), json.dumps(meta, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", FIXED_DATE), buf.getvalue())
    tmp.replace(path)
    return path


def load_archive(path):
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("header.json"))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
        arrays = {}
        for info in zf.infolist():
            if info.filename.endswith(".npy"):
                arrays[info.filename[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(info)), allow_pickle=False)
    return _unflatten(meta["state"], arrays), meta["header"]


def save_segnet(path, model, cmap_hash, extra=None):
    header = {"kind": "segnet", "model": model.config(), "class_map": cmap_hash}
    header.update(extra or {})
    return save_archive(path, {"model": model.state_dict()}, header)


def load_segnet(path):
    from .segnet import SegNet
    state, header = load_archive(path)
    cfg = dict(header["model"])
    model = SegNet(num_classes=cfg["num_classes"], mode=cfg["mode"], channels=tuple(cfg["channels"]),
                   head_channels=cfg["head_channels"])
    model.load_state_dict(state["model"])
    return model, header
