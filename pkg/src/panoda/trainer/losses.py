import torch
import torch.nn.functional as F

IGNORE_INDEX = 255


def poly_lr(base, it, max_iter, power=0.9):
    if not 0 <= it <= max_iter:
        raise ValueError(f"iteration {it} outside [0, {max_iter}]")
    return base * (1.0 - it / max_iter) ** power


def weighted_cross_entropy(logits, labels, weights=None, ignore_index=IGNORE_INDEX):
    """Class-weighted pixel cross-entropy, normalised by the sum of applied weights."""
    valid = labels != ignore_index
    if not bool(valid.any()):
        raise ValueError("cross-entropy undefined: every pixel is ignore")
    if weights is not None:
        weights = torch.as_tensor(weights, dtype=logits.dtype, device=logits.device)
    return F.cross_entropy(logits, labels.long(), weight=weights, ignore_index=ignore_index)
