"""Tests for slimmable convolutions, switchable GDNs and width presets."""

import numpy as np
import pytest

from slimvc.channels import (
    MODULES,
    WIDTH_FACTORS,
    LayerKind,
    LayerSpec,
    WidthConfig,
    build_channel_table,
    preset_name,
)
from slimvc.errors import FormatError, ShapeError, UsageError
from slimvc.gradcheck import grad_check
from slimvc.ops import conv2d
from slimvc.slim import SlimConv, SlimStack, SwitchableGDN, gdn, gdn_forward, slice_weights, slim_forward
from slimvc.tensor import ComputeGraph, Parameter, Tensor, mul, sum_all
from slimvc.trainer import Adam

# Spatial input size of each module for a 48x48 frame.
MODULE_INPUT = {"fe": 48, "fd": 4, "he": 4, "hd": 1, "tpm": 4, "epm": 4}


def _input(stack: SlimStack, k: int, rng: np.random.Generator) -> Tensor:
    size = MODULE_INPUT[stack.name]
    return Tensor(rng.uniform(-1, 1, size=(1, stack.in_channels(k), size, size)).astype(np.float32))


def _random_spec(rng: np.random.Generator) -> LayerSpec:
    cin = tuple(sorted(int(c) for c in rng.integers(1, 6, size=5)))
    cout = tuple(sorted(int(c) for c in rng.integers(1, 6, size=5)))
    kind = LayerKind.DECONV if rng.random() < 0.3 else LayerKind.CONV
    kernel = int(rng.choice([1, 3, 5]))
    stride = int(rng.integers(1, 3)) if kernel > 1 else 1
    return LayerSpec(kind, cin, cout, kernel, stride)


def test_width_config_invariants():
    assert WidthConfig().factors == WIDTH_FACTORS
    assert WidthConfig().factor(0) == 0.25
    with pytest.raises(ShapeError):
        WidthConfig((0.5, 0.25, 1.0))
    with pytest.raises(ShapeError):
        WidthConfig((0.25, 0.5))
    with pytest.raises(ShapeError, match="out of range"):
        WidthConfig().check(5)


def test_paper_preset_channel_counts():
    paper = build_channel_table("paper")
    assert paper.latent == (48, 72, 96, 144, 192)
    assert paper.hyper == (64, 96, 128, 192, 256)
    tpm = paper.layers("tpm")
    assert tpm[0].cout == (107, 160, 213, 320, 426)
    assert tpm[2].cin == (133, 200, 267, 400, 533)
    assert tpm[4].cout == (160, 240, 320, 480, 640)
    assert paper.layers("epm")[-1].cout == (96, 144, 192, 288, 384)

    desk = build_channel_table("desk")
    assert desk.latent == (6, 9, 12, 18, 24)
    assert desk.hyper == (8, 12, 16, 24, 32)
    assert preset_name(desk.preset_id) == "desk"

    with pytest.raises(UsageError):
        build_channel_table("huge")
    with pytest.raises(UsageError):
        paper.layers("spm")
    with pytest.raises(FormatError):
        preset_name(9)


def test_weight_nesting_for_every_layer(desk_model):
    """The width-k slice is the leading block of the width-(k+1) slice."""
    for name in MODULES:
        for layer in desk_model.module(name):
            if not isinstance(layer, SlimConv):
                continue
            full_weight, full_bias = slice_weights(layer, 4)
            np.testing.assert_array_equal(full_weight, layer.weight.data)
            np.testing.assert_array_equal(full_bias, layer.bias.data)
            for k in range(4):
                weight, bias = slice_weights(layer, k)
                wider, wider_bias = slice_weights(layer, k + 1)
                block = tuple(slice(0, e) for e in weight.shape)
                np.testing.assert_array_equal(weight, wider[block])
                np.testing.assert_array_equal(bias, wider_bias[:bias.size])


def test_slimmed_stack_equals_dense_export(desk_model):
    """Every module at every width matches its standalone dense copy bitwise."""
    rng = np.random.default_rng(0)
    for name in MODULES:
        stack = desk_model.module(name)
        for k in range(desk_model.widths):
            x = _input(stack, k, rng)
            slim = stack(x, k)
            dense = stack.export(k)(x)
            assert slim.data.tobytes() == dense.data.tobytes(), f"{name} at width {k}"


def test_slim_forward_matches_hand_sliced_conv():
    rng = np.random.default_rng(1)
    spec = LayerSpec(LayerKind.CONV, (2, 3, 4, 5, 6), (3, 4, 5, 6, 8), 3, 2)
    layer = SlimConv("probe", spec, rng)
    x = Tensor(rng.standard_normal((1, 2, 7, 7)).astype(np.float32))
    expected = conv2d(x, Tensor(layer.weight.data[:3, :2].copy()), Tensor(layer.bias.data[:3].copy()),
                      stride=2, padding=layer.padding(7, 7))
    assert slim_forward(layer, x, 0).data.tobytes() == expected.data.tobytes()

    full = Tensor(rng.standard_normal((1, 6, 7, 7)).astype(np.float32))
    expected = conv2d(full, Tensor(layer.weight.data), Tensor(layer.bias.data), stride=2,
                      padding=layer.padding(7, 7))
    assert slim_forward(layer, full, 4).data.tobytes() == expected.data.tobytes()


def test_dead_parameters_never_change_outputs():
    """Perturbing weights outside the width-k block leaves width-k outputs unchanged."""
    rng = np.random.default_rng(2)
    cases = 0
    while cases < 120:
        spec = _random_spec(rng)
        layer = SlimConv("probe", spec, rng)
        k = int(rng.integers(0, 4))
        size = int(rng.integers(spec.kernel, spec.kernel + 4))
        x = Tensor(rng.standard_normal((1, spec.cin[k], size, size)).astype(np.float32))
        before = layer(x, k).data.copy()
        extents = layer.slice_extents(k)
        mask = np.ones(layer.weight.shape, dtype=bool)
        mask[:extents[0], :extents[1]] = False
        layer.weight.data[mask] = rng.standard_normal(int(mask.sum())).astype(np.float32)
        layer.bias.data[spec.cout[k]:] = 7.0
        assert layer(x, k).data.tobytes() == before.tobytes()
        cases += 1


def test_other_width_gdn_parameters_are_dead(fresh_model):
    rng = np.random.default_rng(3)
    x = _input(fresh_model.fe, 1, rng)
    before = fresh_model.fe(x, 1).data.copy()
    for layer in fresh_model.fe:
        if isinstance(layer, SwitchableGDN):
            for k in (0, 2, 3, 4):
                layer.gamma[k].data[:] = 5.0
    assert fresh_model.fe(x, 1).data.tobytes() == before.tobytes()


def test_training_step_leaves_weights_outside_slice_unchanged():
    rng = np.random.default_rng(4)
    spec = LayerSpec(LayerKind.CONV, (2, 3, 4, 5, 6), (3, 4, 5, 6, 8), 3, 1)
    layer = SlimConv("probe", spec, rng)
    snapshot = layer.weight.data.copy()
    graph = ComputeGraph()
    x = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
    grads = graph.backward(sum_all(layer(x, 1, graph)))
    Adam(layer.parameters(), lr=1e-2).step(grads.parameters())
    changed = layer.weight.data != snapshot
    assert changed[:4, :3].any()
    assert not changed[4:].any() and not changed[:, 3:].any()


def test_channel_mismatch_names_layer_and_width(desk_model):
    x = Tensor(np.zeros((1, 3, 48, 48), dtype=np.float32))
    with pytest.raises(ShapeError, match=r"fd\.0.*width 2"):
        desk_model.fd(x, 2)
    with pytest.raises(ShapeError, match="width index 7"):
        desk_model.fe(x, 7)


def test_switchable_gdn_parameters_are_independent():
    layer = SwitchableGDN("norm", LayerSpec(LayerKind.GDN, (2, 3, 4, 5, 6), (2, 3, 4, 5, 6)))
    shapes = [p.shape for p in layer.parameters(3)]
    assert shapes == [(5,), (5, 5)]
    arrays = [p.data for p in layer.parameters()]
    assert len({id(a) for a in arrays}) == 10
    assert not any(np.shares_memory(a, b) for i, a in enumerate(arrays) for b in arrays[i + 1:])


def test_gdn_identity_and_inverse():
    """β=1, γ=0 is the identity; IGDN undoes GDN when γ=0."""
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 4, 3, 3)).astype(np.float32))
    beta_raw = Tensor(np.full(4, np.sqrt(1 - 1e-6), dtype=np.float32))
    gamma_raw = Tensor(np.zeros((4, 4), dtype=np.float32))
    np.testing.assert_allclose(gdn(x, beta_raw, gamma_raw).data, x.data, rtol=1e-5)

    beta_raw = Tensor(rng.uniform(0.5, 2.0, size=4).astype(np.float32))
    y = gdn(x, beta_raw, gamma_raw)
    restored = gdn(y, beta_raw, gamma_raw, inverse=True)
    np.testing.assert_allclose(restored.data, x.data, rtol=1e-5, atol=1e-6)


def test_gdn_denominator_is_bounded_below():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, size=(1, 3, 4, 4)).astype(np.float32)
    y = gdn(Tensor(x), Tensor(np.zeros(3, dtype=np.float32)), Tensor(np.zeros((3, 3), dtype=np.float32)))
    denominator = x / y.data
    assert np.all(denominator >= 1e-3 * (1 - 1e-5))


def test_gdn_forward_rejects_wrong_channels():
    layer = SwitchableGDN("norm", LayerSpec(LayerKind.IGDN, (2, 3, 4, 5, 6), (2, 3, 4, 5, 6)))
    with pytest.raises(ShapeError, match="norm"):
        gdn_forward(Tensor(np.zeros((1, 4, 2, 2))), layer, 0)


def test_gdn_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    x = Parameter("x", rng.standard_normal((1, 3, 3, 3)))
    beta = Parameter("beta", rng.uniform(0.5, 1.5, size=3))
    gamma = Parameter("gamma", rng.uniform(0.0, 0.5, size=(3, 3)))
    weights = rng.standard_normal((1, 3, 3, 3)).astype(np.float32)

    for inverse in (False, True):
        def loss(graph):
            out = gdn(graph.parameter(x), graph.parameter(beta), graph.parameter(gamma), inverse=inverse)
            return sum_all(mul(out, Tensor(weights)))

        assert grad_check(loss, [x, beta, gamma]) < 1e-3


def test_stack_parameters_cover_all_widths(desk_model):
    names = [p.name for p in desk_model.fe.parameters()]
    assert "fe.0.weight" in names and "fe.1.gamma.4" in names
    assert len(names) == len(set(names))
