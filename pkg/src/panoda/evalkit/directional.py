"""Azimuth-sector analysis of equirectangular predictions."""
import numpy as np

from .metrics import class_accuracy, confusion_update, iou_report, new_confusion


def sector_of_columns(width, sectors=8):
    """Sector index per column.

    Sector 0 is centered on the image center (forward direction) and indices grow
    with azimuth, wrapping around.  When the width does not divide evenly the
    last sector absorbs the remaining columns.
    """
    sw = width // sectors
    if sw == 0:
        raise ValueError(f"width {width} too small for {sectors} sectors")
    start = width // 2 - sw // 2
    offset = (np.arange(width) - start) % width
    return np.minimum(offset // sw, sectors - 1)


def sector_confusions(preds, gts, sectors=8, num_classes=19):
    cms = [new_confusion(num_classes) for _ in range(sectors)]
    for pred, gt in zip(preds, gts):
        cols = sector_of_columns(gt.shape[-1], sectors)
        for s in range(sectors):
            sel = cols == s
            confusion_update(cms[s], pred[:, sel], gt[:, sel])
    return cms


def directional_report(preds, gts, sectors=8, classes=None, num_classes=19):
    """Per-sector per-class accuracy and IoU (plus the sector mIoU)."""
    cms = sector_confusions(preds, gts, sectors, num_classes)
    report = []
    for s, cm in enumerate(cms):
        entry = {"sector": s, "center_deg": s * 360.0 / sectors, "pixels": int(cm.sum())}
        if cm.sum() == 0:
            entry.update(miou=None, acc={}, iou={})
        else:
            iou, miou, _ = iou_report(cm)
            acc = class_accuracy(cm)
            keep = range(num_classes) if classes is None else classes
            entry["miou"] = miou
            entry["acc"] = {int(c): (None if np.isnan(acc[c]) else float(acc[c])) for c in keep}
            entry["iou"] = {int(c): (None if np.isnan(iou[c]) else float(iou[c])) for c in keep}
        report.append(entry)
    return report, cms
