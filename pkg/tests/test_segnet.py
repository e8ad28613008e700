import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from panoda.segnet import (BackboneOutput, SegNet, boundary_loss, boundary_targets, fanet_multilevel_wiring,
                           forward_segnet, upsample_logits)

from .conftest import finite_difference_check

TINY = dict(channels=(4, 8, 8, 8), head_channels=8)


@settings(max_examples=8, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.sampled_from(["danet_like", "fanet_like"]))
def test_output_shapes(hm, wm, mode):
    h, w = 16 * hm, 16 * wm
    torch.manual_seed(0)
    model = SegNet(mode=mode, **TINY).eval()
    with torch.no_grad():
        b, heads = model(torch.rand(1, 3, h, w))
    assert heads.b1.shape == (1, 1, h, w)
    assert heads.c1.shape == heads.c2.shape == (1, 19, h, w)
    assert set(b.features) == {4, 8, 16}
    for r, f in b.features.items():
        assert f.shape[-2:] == (h // r, w // r)


def test_rejects_indivisible_size():
    with pytest.raises(ValueError, match="divisible"):
        SegNet(**TINY)(torch.rand(1, 3, 40, 64))


def test_zero_init_heads_give_uniform_softmax():
    model = SegNet(zero_init_heads=True, **TINY)
    _, heads = model(torch.rand(2, 3, 32, 64))
    p = torch.softmax(heads.c1, 1)
    assert torch.allclose(p, torch.full_like(p, 1 / 19), atol=1e-7)
    assert torch.equal(torch.sigmoid(heads.b1), torch.full_like(heads.b1, 0.5))


def test_eval_mode_is_deterministic():
    torch.manual_seed(1)
    model = SegNet(**TINY).eval()
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        a = model(x)[1].c1
        b = model(x)[1].c1
    assert torch.equal(a, b)


def test_multilevel_wiring_channels():
    model = SegNet(mode="fanet_like", channels=(8, 16, 24, 32), head_channels=8)
    b = model.backbone(torch.rand(1, 3, 64, 64))
    b1_in, c1_in = fanet_multilevel_wiring(b)
    assert b1_in.shape == (1, 32 + 16, 16, 16)
    assert c1_in.shape == (1, 32 + 24, 8, 8)
    with pytest.raises(ValueError):
        fanet_multilevel_wiring(b, "danet_like")
    with pytest.raises(KeyError):
        fanet_multilevel_wiring(BackboneOutput({16: b.features[16]}))


def test_forward_segnet_mode_check():
    model = SegNet(mode="danet_like", **TINY)
    with pytest.raises(ValueError):
        forward_segnet(model, torch.rand(1, 3, 32, 32), mode="fanet_like")
    with pytest.raises(ValueError):
        SegNet(mode="unet")


def test_upsample_constant_and_spike():
    const = torch.full((1, 2, 3, 5), 0.7, dtype=torch.float64)
    assert torch.allclose(upsample_logits(const, (12, 20)), const.new_full((1, 2, 12, 20), 0.7), atol=1e-15)
    spike = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    spike[0, 0, 1, 2] = 1.0
    up = upsample_logits(spike, (16, 16))
    assert up.max() <= 1.0 and up.min() >= 0.0
    # the spike's mass stays centred on its source cell
    ys, xs = np.nonzero(up[0, 0].numpy() == up.max().item())
    assert set(ys // 4) == {1} and set(xs // 4) == {2}
    with pytest.raises(ValueError):
        upsample_logits(spike, (2, 2))


def test_upsample_ramp_midpoints():
    ramp = torch.arange(4, dtype=torch.float64).reshape(1, 1, 1, 4).expand(1, 1, 2, 4)
    up = upsample_logits(ramp, (2, 8))
    # half-pixel centres: output pixel 2j+1 sits a quarter cell right of input j
    assert torch.allclose(up[0, 0, 0, 1:7], torch.tensor([0.25, 0.75, 1.25, 1.75, 2.25, 2.75], dtype=torch.float64))


def test_heads_have_disjoint_parameters():
    model = SegNet(**TINY)
    c1 = {id(p) for p in model.head_parameters("c1")}
    c2 = {id(p) for p in model.head_parameters("c2")}
    b1 = {id(p) for p in model.head_parameters("b1")}
    assert not (c1 & c2) and not (c1 & b1) and not (c2 & b1)


def test_every_parameter_gets_gradient():
    torch.manual_seed(0)
    model = SegNet(**TINY)
    with torch.no_grad():
        model.attention.pos.gamma.fill_(0.5)
        model.attention.chan.gamma.fill_(0.5)
    _, heads = model(torch.rand(2, 3, 32, 32))
    reg, _ = model.regional_forward(heads)
    loss = heads.b1.square().mean() + heads.c1.square().mean() + heads.c2.square().mean() + reg.square().mean()
    loss.backward()
    no_grad = [n for n, p in model.named_parameters() if p.grad is None]
    # the fuse conv only feeds the dual feature, which no head consumes
    assert set(no_grad) <= {"attention.fuse.weight", "attention.fuse.bias"}


def test_toy_network_gradient(double):
    torch.manual_seed(0)
    model = SegNet(channels=(4, 4, 4, 4), head_channels=4).double()
    w = model.head_c1[-1].weight
    x = torch.rand(1, 3, 32, 32)
    probe = torch.randn(1, 19, 32, 32)

    def f(weight):
        return (torch.func.functional_call(model, {"head_c1.3.weight": weight}, (x,))[1].c1 * probe).sum()

    assert finite_difference_check(f, [w.detach().clone()]) < 1e-4


def test_boundary_targets():
    lab = torch.tensor([[[0, 0, 1], [0, 0, 1], [255, 255, 1]]])
    t = boundary_targets(lab)
    assert t.tolist() == [[[0, 1, 1], [0, 1, 1], [255, 255, 0]]]
    full = torch.tensor([[[0, 0, 1], [0, 0, 1], [2, 2, 1]]])
    assert boundary_targets(full).tolist() == [[[0, 1, 1], [1, 1, 1], [1, 1, 1]]]


def test_boundary_loss_finite_without_edges():
    lab = torch.zeros(1, 8, 8, dtype=torch.long)
    loss = boundary_loss(torch.zeros(1, 1, 8, 8), lab)
    assert torch.isfinite(loss) and loss.item() > 0
    assert boundary_loss(torch.zeros(1, 1, 2, 2), torch.full((1, 2, 2), 255)).item() == 0.0
