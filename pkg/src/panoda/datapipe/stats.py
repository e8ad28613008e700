import numpy as np

from .classmap import NUM_CLASSES, CITYSCAPES
from .manifest import DatasetManifest, load_sample


def _labels(source, cmap=CITYSCAPES):
    """Yield label arrays from a manifest or an iterable of SampleRecord / arrays."""
    if isinstance(source, DatasetManifest):
        if not source.has_labels:
            raise ValueError(f"manifest {source.root}/{source.split} has unlabelled entries")
        for entry in source.entries:
            yield load_sample(entry, source.resize_to, source.domain, cmap).label
        return
    for item in source:
        label = getattr(item, "label", item)
        if label is None:
            raise ValueError("sample without label")
        yield np.asarray(label)


def class_pixel_counts(source):
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    n_images = 0
    for label in _labels(source):
        counts += np.bincount(label[label < NUM_CLASSES].ravel(), minlength=NUM_CLASSES)[:NUM_CLASSES]
        n_images += 1
    return counts, n_images


def compute_class_weights(source, k=1.02):
    """ERFNet-style weights w_c = 1 / ln(k + p_c) from pixel frequencies."""
    counts, _ = class_pixel_counts(source)
    total = counts.sum()
    if total == 0:
        raise ValueError("no countable (non-ignore) pixels for class weights")
    freq = counts / total
    return 1.0 / np.log(k + freq)


def class_pixel_histogram(source):
    counts, n_images = class_pixel_counts(source)
    if n_images == 0:
        return np.zeros(NUM_CLASSES)
    return counts / n_images


def histogram_report(named_sources, cmap=CITYSCAPES):
    """Per-class mean pixel counts for several datasets, side by side."""
    report = {"classes": list(cmap.names)}
    for name, source in named_sources.items():
        report[name] = [float(v) for v in class_pixel_histogram(source)]
    return report
