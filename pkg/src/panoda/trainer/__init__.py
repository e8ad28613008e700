from .losses import poly_lr, weighted_cross_entropy
