import numpy as np

from ..datapipe.classmap import CITYSCAPES, IGNORE_INDEX, NUM_CLASSES


def new_confusion(num_classes=NUM_CLASSES):
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def confusion_update(cm, pred, gt, ignore_index=IGNORE_INDEX):
    """Add one prediction / ground-truth pair; rows are ground truth, columns prediction."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground-truth shape {gt.shape}")
    n = cm.shape[0]
    valid = gt != ignore_index
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    if g.size and (g.max() >= n or p.min() < 0 or p.max() >= n):
        raise ValueError("label or prediction ids outside the class range")
    cm += np.bincount(g * n + p, minlength=n * n).reshape(n, n)
    return cm


def confusion_from(preds, gts, num_classes=NUM_CLASSES):
    cm = new_confusion(num_classes)
    for p, g in zip(preds, gts):
        confusion_update(cm, p, g)
    return cm


def iou_report(cm):
    """(per-class IoU with NaN for absent classes, mIoU, pixel accuracy).

    A class is absent when it appears in neither ground truth nor prediction;
    absent classes are left out of the mean instead of scoring zero.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    inter = np.diag(cm)
    union = cm.sum(0) + cm.sum(1) - inter
    iou = np.full(cm.shape[0], np.nan)
    present = union > 0
    iou[present] = inter[present] / union[present]
    return iou, float(np.mean(iou[present])), float(inter.sum() / total)


def class_accuracy(cm):
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(1)
    acc = np.full(cm.shape[0], np.nan)
    acc[rows > 0] = np.diag(cm)[rows > 0] / rows[rows > 0]
    return acc


def miou_gap(src_score, tgt_score):
    """Target minus source mIoU (negative when the target domain is worse), in points."""
    for s in (src_score, tgt_score):
        if not 0.0 <= s <= 100.0:
            raise ValueError(f"score {s} outside [0, 100]")
    return round(tgt_score - src_score, 10)


def format_table(rows, cmap=CITYSCAPES):
    """Aligned text table: name, mIoU, then the 19 classes in Cityscapes order (all in %)."""
    header = ["Method", "mIoU"] + [n[:8] for n in cmap.names]
    lines = []
    body = []
    for name, miou, ious in rows:
        cells = [name, f"{100 * miou:.2f}"]
        cells += ["-" if np.isnan(v) else f"{100 * v:.2f}" for v in ious]
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    for r in [header] + body:
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def gap_table(rows):
    """Rows (method, backbone, source mIoU, target mIoU) -> text with the mIoU gap column."""
    lines = [f"{'Method':<20} {'Backbone':<18} {'Source':>7} {'Target':>7} {'Gap':>7}"]
    for method, backbone, src, tgt in rows:
        lines.append(f"{method:<20} {backbone:<18} {src:>7.1f} {tgt:>7.1f} {miou_gap(src, tgt):>7.1f}")
    return "\n".join(lines)
