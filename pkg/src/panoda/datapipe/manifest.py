"""Dataset manifests for the cityscapes, densepass and synthetic directory layouts."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .classmap import CITYSCAPES, check_labels, map_labels

SPLITS = ("train", "val", "test")
LAYOUTS = ("cityscapes", "densepass", "synthetic")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class SampleRecord:
    image: np.ndarray                 # H x W x 3 float32 in [0, 1]
    label: Optional[np.ndarray]       # H x W uint8 in 0..18 / 255
    domain: str                       # "source" | "target"
    id: str

    def __post_init__(self):
        if self.domain not in ("source", "target"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.label is not None:
            if self.label.shape != self.image.shape[:2]:
                raise ValueError(f"{self.id}: label {self.label.shape} vs image {self.image.shape[:2]}")
            check_labels(self.label)


@dataclass
class DatasetManifest:
    root: Path
    split: str
    layout: str
    entries: list                     # [(image path, label path or None)]
    domain: str = "source"
    resize_to: Optional[tuple] = None

    def __len__(self):
        return len(self.entries)

    @property
    def has_labels(self):
        return all(lbl is not None for _, lbl in self.entries)


def _images_in(directory):
    return sorted(p for p in directory.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)


def _cityscapes_entries(root, split):
    img_dir = root / "leftImg8bit" / split
    if not img_dir.is_dir():
        raise FileNotFoundError(f"missing split directory: {img_dir}")
    entries = []
    for img in _images_in(img_dir):
        stem = img.name.replace("_leftImg8bit.png", "")
        lbl = root / "gtFine" / split / img.parent.name / f"{stem}_gtFine_labelTrainIds.png"
        entries.append((img, lbl if lbl.exists() else None))
    return entries


def _flat_entries(root, split, with_labels):
    img_dir = root / "leftImg8bit" / split
    if not img_dir.is_dir():
        raise FileNotFoundError(f"missing split directory: {img_dir}")
    lbl_dir = root / "gtFine" / split
    entries = []
    for img in _images_in(img_dir):
        lbl = None
        if with_labels and lbl_dir.is_dir():
            for name in (img.name, f"{img.stem}_labelTrainIds.png"):
                if (lbl_dir / name).exists():
                    lbl = lbl_dir / name
                    break
        entries.append((img, lbl))
    return entries


def load_manifest(root, split, layout, domain=None, resize_to=None):
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if layout == "cityscapes":
        entries = _cityscapes_entries(root, split)
    elif layout == "densepass":
        # densepass training images are unlabelled by construction
        entries = _flat_entries(root, split, with_labels=split != "train")
    elif layout == "synthetic":
        entries = _flat_entries(root, split, with_labels=True)
    else:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    if not entries:
        raise FileNotFoundError(f"no images for split {split!r} under {root}")
    if domain is None:
        domain = "target" if layout == "densepass" else "source"
    return DatasetManifest(root, split, layout, entries, domain, resize_to)


def _resize(arr, size, resample):
    h, w = size
    if arr.shape[:2] == (h, w):
        return arr
    return np.asarray(Image.fromarray(arr).resize((w, h), resample=resample))


def load_sample(entry, resize_to=None, domain="source", cmap=CITYSCAPES):
    img_path, lbl_path = entry
    img_path = Path(img_path)
    try:
        with Image.open(img_path) as im:
            image = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot decode image {img_path}: {exc}") from exc
    label = None
    if lbl_path is not None:
        with Image.open(lbl_path) as im:
            label = np.asarray(im)
        if label.ndim != 2:
            raise ValueError(f"label {lbl_path} is not single-channel")
        if label.shape != image.shape[:2]:
            raise ValueError(f"label {lbl_path} shape {label.shape} != image shape {image.shape[:2]}")
        label = map_labels(label, cmap)
    if resize_to is not None:
        image = _resize(image, tuple(resize_to), Image.BILINEAR)
        if label is not None:
            label = _resize(label, tuple(resize_to), Image.NEAREST)
    image = image.astype(np.float32) / 255.0
    return SampleRecord(image, label, domain, img_path.stem)


def load_all(manifest, cmap=CITYSCAPES):
    return [load_sample(e, manifest.resize_to, manifest.domain, cmap) for e in manifest.entries]


def save_sample(sample, img_path, lbl_path=None):
    img_path = Path(img_path)
    img_path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(img_path)
    if lbl_path is not None and sample.label is not None:
        lbl_path = Path(lbl_path)
        lbl_path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(sample.label.astype(np.uint8)).save(lbl_path)
