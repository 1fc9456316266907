import numpy as np
import pytest
import torch

from oracles import parameter_count_closed_form
from resunet.errors import ConfigError, ShapeError
from resunet.network import (
    NetworkConfig,
    bottleneck_shape,
    build_network,
    conv_kernels,
    forward,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)

# closed-form layer sums for (depth, base_filters) with 4 inputs / 4 classes
DEFAULT_PARAMETER_COUNT = 2628196
TOY_PARAMETER_COUNT = 218  # depth 1, base 1, summed by hand layer by layer


@pytest.fixture(scope="module")
def small_net():
    return build_network(NetworkConfig(depth=3, base_filters=4), seed=0)


def test_bottleneck_default_config():
    net = build_network()
    assert bottleneck_shape(net, 128, 128) == (16, 16, 256)


def test_bottleneck_depth_four():
    net = build_network(NetworkConfig(depth=4))
    assert bottleneck_shape(net, 128, 128) == (8, 8, 512)


@pytest.mark.parametrize("kwargs", [{"depth": 0}, {"base_filters": 0}, {"upsample_mode": "nearest"}])
def test_bad_config(kwargs):
    with pytest.raises(ConfigError):
        build_network(NetworkConfig(**kwargs))


def test_parameter_count_default():
    assert parameter_count_closed_form(3, 32) == DEFAULT_PARAMETER_COUNT
    assert parameter_count(build_network()) == DEFAULT_PARAMETER_COUNT


def test_parameter_count_toy():
    assert parameter_count_closed_form(1, 1) == TOY_PARAMETER_COUNT
    assert parameter_count(build_network(NetworkConfig(depth=1, base_filters=1))) == TOY_PARAMETER_COUNT


def test_deeper_network_has_more_parameters():
    assert parameter_count(build_network(NetworkConfig(depth=4))) > DEFAULT_PARAMETER_COUNT
    assert parameter_count(build_network(NetworkConfig(depth=4))) == parameter_count_closed_form(4, 32)


@pytest.mark.parametrize("shape", [(2, 32, 32), (1, 64, 64), (1, 128, 128), (1, 40, 24), (1, 160, 240)])
def test_shape_contract_and_softmax(small_net, shape, rng):
    x = rng.normal(size=shape + (4,)).astype(np.float32)
    with torch.no_grad():
        out = forward(small_net, x)
    assert tuple(out.shape) == shape + (4,)
    assert torch.all(out >= 0)
    torch.testing.assert_close(out.sum(-1), torch.ones(shape), atol=1e-5, rtol=0)


@pytest.mark.parametrize("depth, size", [(3, 130), (4, 120), (2, 30)])
def test_indivisible_size(depth, size):
    net = build_network(NetworkConfig(depth=depth, base_filters=2))
    with pytest.raises(ShapeError):
        forward(net, np.zeros((1, size, size, 4), np.float32))


def test_wrong_channel_count(small_net):
    with pytest.raises(ShapeError):
        forward(small_net, np.zeros((1, 32, 32, 3), np.float32))


def test_gradients_reach_every_parameter(small_net, rng):
    x = torch.tensor(rng.normal(size=(2, 32, 32, 4)), dtype=torch.float32, requires_grad=True)
    small_net.zero_grad()
    probs = forward(small_net, x, train=True)
    # the per-pixel softmax sums to one, so weight the classes to get a non-trivial objective
    (probs * torch.arange(1.0, 5.0)).mean().backward()
    for name, p in small_net.named_parameters():
        assert p.grad is not None, name
        assert torch.isfinite(p.grad).all(), name
        assert p.grad.abs().sum() > 0, name
    assert x.grad is not None and x.grad.abs().sum() > 0


def test_inference_determinism(small_net, rng):
    x = rng.normal(size=(2, 32, 32, 4)).astype(np.float32)
    with torch.no_grad():
        a, b = forward(small_net, x), forward(small_net, x)
    assert torch.max(torch.abs(a - b)) <= 1e-6


def test_same_seed_same_weights():
    a = build_network(NetworkConfig(base_filters=4), seed=3)
    b = build_network(NetworkConfig(base_filters=4), seed=3)
    c = build_network(NetworkConfig(base_filters=4), seed=4)
    for (_, pa), (_, pb), (_, pc) in zip(a.state_dict().items(), b.state_dict().items(), c.state_dict().items()):
        assert torch.equal(pa, pb)
    assert not all(torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_checkpoint_round_trip(tmp_path, rng):
    net = build_network(NetworkConfig(depth=2, base_filters=4), seed=1)
    # move running statistics away from their initial values
    forward(net, rng.normal(size=(4, 16, 16, 4)).astype(np.float32), train=True)
    save_checkpoint(net, tmp_path / "m.pt")
    loaded, _ = load_checkpoint(tmp_path / "m.pt")
    assert loaded.config == net.config
    x = rng.normal(size=(2, 16, 16, 4)).astype(np.float32)
    with torch.no_grad():
        assert torch.equal(forward(net, x), forward(loaded, x))


def test_conv_kernels_exclude_bn_and_bias(small_net):
    kernels = {id(k) for k in conv_kernels(small_net)}
    for name, p in small_net.named_parameters():
        is_conv_weight = name.endswith("weight") and p.ndim == 4
        assert (id(p) in kernels) == is_conv_weight, name


def test_batch_norm_settings(small_net):
    bns = [m for m in small_net.modules() if isinstance(m, torch.nn.BatchNorm2d)]
    assert bns and all(m.eps == 1e-3 and m.momentum == pytest.approx(0.01) for m in bns)
