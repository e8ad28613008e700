import numpy as np

from .classmap import IGNORE_INDEX
from .manifest import SampleRecord


def draw_augment(rng, max_shift=2):
    """Draw (flip, dx, dy); dx/dy are independent uniform integers in [-max_shift, max_shift]."""
    flip = bool(rng.random() < 0.5)
    dx, dy = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
    return flip, dx, dy


def _translate(arr, dx, dy, fill):
    out = np.full_like(arr, fill)
    h, w = arr.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[dst_y, dst_x] = arr[src_y, src_x]
    return out


def apply_augment(sample, flip, dx, dy):
    image, label = sample.image, sample.label
    if flip:
        image = image[:, ::-1]
        label = None if label is None else label[:, ::-1]
    if dx or dy:
        image = _translate(image, dx, dy, 0)
        label = None if label is None else _translate(label, dx, dy, IGNORE_INDEX)
    image = np.ascontiguousarray(image)
    label = None if label is None else np.ascontiguousarray(label)
    return SampleRecord(image, label, sample.domain, sample.id)


def augment(sample, rng, max_shift=2):
    return apply_augment(sample, *draw_augment(rng, max_shift))
