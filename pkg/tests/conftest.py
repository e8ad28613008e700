import numpy as np
import pytest
import torch
from PIL import Image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def double():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def make_flat_layout(root, split, images, labels=None):
    """densepass-style tree: leftImg8bit/<split>/*.png and gtFine/<split>/*.png."""
    for i, img in enumerate(images):
        write_png(root / "leftImg8bit" / split / f"img_{i:03d}.png", img)
        if labels is not None:
            write_png(root / "gtFine" / split / f"img_{i:03d}.png", labels[i])
    return root


def finite_difference_check(fn, inputs, eps=1e-6):
    """Max relative error between autograd and central differences for scalar fn(*inputs)."""
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs)
    worst = 0.0
    for x, g in zip(inputs, grads):
        flat = x.detach().reshape(-1)
        num = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            xp = flat.clone()
            xp[i] = orig + eps
            xm = flat.clone()
            xm[i] = orig - eps
            args_p = [xp.reshape(x.shape) if y is x else y.detach() for y in inputs]
            args_m = [xm.reshape(x.shape) if y is x else y.detach() for y in inputs]
            num[i] = (fn(*args_p) - fn(*args_m)).item() / (2 * eps)
        denom = max(float(num.abs().max()), float(g.abs().max()), 1e-12)
        worst = max(worst, float((num - g.reshape(-1)).abs().max()) / denom)
    return worst


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
