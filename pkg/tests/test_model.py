import numpy as np
import pytest

from colorconstancy.engine import Tensor, weighted_sum
from colorconstancy.engine.autodiff import ShapeError
from colorconstancy.model import (ENCODER_SHAPES, Network, bias_bound, count_params, describe, init_params,
                                  kaiming_uniform_bound, layer_widths, params_digest)


@pytest.fixture(scope="module")
def net():
    return Network.initialize(0)


def test_encoder_parameter_count():
    p = init_params(0)
    assert count_params(p, ("conv", "fc")) == 61156
    assert count_params(p, ("proj",)) == 84 * 128 + 128 + 128 * 64 + 64
    assert "encoder parameters:    61156" in describe()


def test_layer_shapes(net):
    acts = net.forward(np.zeros((3, 3, 32, 32), np.float32))
    assert acts.l1.shape == (3, 6, 14, 14)
    assert acts.l2.shape == (3, 16, 5, 5)
    assert acts.l3.shape == (3, 120)
    assert acts.h.shape == (3, 84)
    assert acts.z.shape == (3, 64)
    for layer, width in layer_widths().items():
        assert acts.features(layer).shape == (3, width)


def test_d_z_is_configurable():
    n = Network.initialize(0, d_z=128)
    assert n.forward(np.zeros((1, 3, 32, 32), np.float32)).z.shape == (1, 128)


def test_zero_image_gives_zero_h_with_zero_biases():
    p = {k: (np.zeros_like(v) if k.endswith(".bias") else v) for k, v in init_params(0).items()}
    acts = Network(p).forward(np.zeros((2, 3, 32, 32), np.float32))
    assert np.array_equal(acts.h.data, np.zeros((2, 84)))
    assert np.array_equal(acts.z.data, np.zeros((2, 64)))


def test_black_image_has_nonzero_embedding(net):
    z = net.forward(np.zeros((2, 3, 32, 32), np.float32)).z.data
    assert (np.linalg.norm(z, axis=1) > 0).all()


def test_init_bounds():
    p = init_params(7)
    for name, shape in ENCODER_SHAPES.items():
        assert p[name].shape == shape and p[name].dtype == np.float32
        fan_in = int(np.prod(ENCODER_SHAPES[name.replace(".bias", ".weight")][1:]))
        bound = bias_bound(fan_in) if name.endswith(".bias") else kaiming_uniform_bound(fan_in)
        assert 0 < np.abs(p[name]).max() <= bound
    assert kaiming_uniform_bound(75) == pytest.approx(np.sqrt(2) * np.sqrt(3 / 75))


def test_init_is_deterministic_per_seed():
    assert params_digest(init_params(3)) == params_digest(init_params(3))
    assert params_digest(init_params(3)) != params_digest(init_params(4))


def test_forward_is_deterministic(net):
    x = np.random.default_rng(0).random((4, 3, 32, 32)).astype(np.float32)
    assert np.array_equal(net.forward(x).z.data, net.forward(x).z.data)


def test_z_is_projection_of_h(net):
    x = np.random.default_rng(1).random((4, 3, 32, 32)).astype(np.float32)
    acts = net.forward(x)
    assert np.array_equal(acts.z.data, net.project(acts.h).data)


def test_rows_are_independent(net):
    x = np.random.default_rng(2).random((4, 3, 32, 32)).astype(np.float32)
    full = net.forward(x).h.data
    assert np.allclose(net.forward(x[2:3]).h.data, full[2:3], atol=1e-5)


def test_wrong_input_shape(net):
    with pytest.raises(ShapeError):
        net.encode(np.zeros((1, 3, 28, 28), np.float32))
    with pytest.raises(ShapeError):
        net.project(Tensor(np.zeros((1, 83))))


def test_every_parameter_receives_gradient():
    net = Network.initialize(1)
    x = np.random.default_rng(3).random((4, 3, 32, 32)).astype(np.float32)
    z = net.forward(x).z
    weighted_sum(z, np.random.default_rng(4).normal(size=z.shape)).backward()
    for name, t in net.tensors.items():
        assert t.grad is not None and np.abs(t.grad).sum() > 0, name


def test_classifier_head():
    net = Network.initialize(0, n_classes=50)
    h = net.encode(np.ones((2, 3, 32, 32), np.float32)).h
    assert net.classify(h).shape == (2, 50)
