import math

import numpy as np
import pytest

from colorconstancy.engine import (Adam, AdamState, Checkpoint, CheckpointError, GradCheckError, NumericDomainError,
                                   ShapeError, Tensor, adam_step, affine, bce_with_logits, conv2d,
                                   cosine_similarity_matrix, flatten, grad_check, load_checkpoint, maxpool2, no_grad,
                                   relu, save_checkpoint, scale, softmax_cross_entropy, weighted_sum)
from colorconstancy.engine import autodiff
from colorconstancy.engine.gradcheck import check_all, registry


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- gradient checks

@pytest.mark.parametrize("name", sorted(registry()))
def test_primitive_gradients(name):
    fn, sampler = registry()[name]
    rep = grad_check(name, fn, sampler, instances=5, tolerance=1e-4)
    assert rep.max_rel_error < 1e-4


def test_linear_op_is_nearly_exact():
    rs = np.random.default_rng(1)
    proj = rs.normal(size=(3, 4))
    rep = grad_check("scale", lambda x: weighted_sum(scale(x, 2.5), proj), lambda g: [g.normal(size=(3, 4))])
    assert rep.max_rel_error < 1e-8


def test_grad_check_reports_a_wrong_gradient():
    def broken(x):
        out = relu(x)
        out._backward = lambda g: (2 * g * (x.data > 0),) if out._backward else None
        return weighted_sum(out, np.ones(x.shape))

    with pytest.raises(GradCheckError, match="coordinate"):
        grad_check("broken", broken, lambda g: [g.uniform(0.5, 1.0, size=(2, 3))])


def test_check_all_covers_every_primitive():
    names = {r.name for r in check_all(instances=5)}
    for op in ("conv2d", "maxpool2", "affine", "relu", "flatten", "cosine_similarity_matrix",
               "softmax_cross_entropy", "bce_with_logits"):
        assert op in names


# ---------------------------------------------------------------- forward semantics

def test_conv_shapes_and_errors():
    x = T(np.zeros((2, 3, 32, 32)))
    y = conv2d(x, T(np.zeros((6, 3, 5, 5))), T(np.zeros(6)))
    assert y.shape == (2, 6, 28, 28)
    with pytest.raises(ShapeError):
        conv2d(T(np.zeros((1, 3, 8, 8))), T(np.zeros((2, 3, 3, 3))), T(np.zeros(2)), stride=2)
    with pytest.raises(ShapeError):
        conv2d(T(np.zeros((1, 3, 4, 4))), T(np.zeros((2, 3, 5, 5))), T(np.zeros(2)))


def test_conv_delta_kernel_is_identity_on_interior():
    rs = np.random.default_rng(0)
    x = rs.normal(size=(2, 3, 10, 10))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    y = conv2d(T(x), T(w), T(np.zeros(3)))
    assert np.array_equal(y.data, x[:, :, 1:-1, 1:-1])


def test_conv_matches_direct_sum():
    rs = np.random.default_rng(2)
    x, w, b = rs.normal(size=(1, 2, 7, 7)), rs.normal(size=(3, 2, 3, 3)), rs.normal(size=3)
    y = conv2d(T(x), T(w), T(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for i in range(4):
            for j in range(4):
                ref = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
                assert y[0, o, i, j] == pytest.approx(ref, abs=1e-12)


def test_maxpool_shapes_ties_and_errors():
    y = maxpool2(T(np.zeros((1, 6, 28, 28))))
    assert y.shape == (1, 6, 14, 14)
    x = T(np.full((1, 1, 4, 4), 3.0), grad=True)
    out = maxpool2(x)
    assert (out.data == 3).all()
    weighted_sum(out, np.ones(out.shape)).backward()
    # ties resolve to the first element of each window
    assert np.array_equal(x.grad[0, 0], np.array([[1, 0, 1, 0], [0, 0, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0]]))
    with pytest.raises(ShapeError):
        maxpool2(T(np.zeros((1, 1, 5, 4))))


def test_affine_relu_flatten():
    assert flatten(T(np.zeros((2, 16, 5, 5)))).shape == (2, 400)
    assert np.array_equal(relu(T([-1.0, 2.0, 0.0])).data, [0, 2, 0])
    x = T([0.0, 1.0], grad=True)
    weighted_sum(relu(x), np.ones(2)).backward()
    assert np.array_equal(x.grad, [0, 1])  # zero gradient exactly at 0
    with pytest.raises(ShapeError):
        affine(T(np.zeros((2, 3))), T(np.zeros((4, 5))), T(np.zeros(4)))


def test_cosine_similarity_cases():
    same = cosine_similarity_matrix(T(np.tile([1.0, 2.0, 3.0], (4, 1)))).data
    assert np.allclose(same, 1.0)
    ortho = cosine_similarity_matrix(T(np.eye(3))).data
    assert np.allclose(ortho, np.eye(3))
    rs = np.random.default_rng(3)
    z = rs.normal(size=(6, 4))
    s = cosine_similarity_matrix(T(z)).data
    assert np.allclose(s, s.T) and np.allclose(np.diag(s), 1.0)
    scaled = z * rs.uniform(0.1, 10, size=(6, 1))
    assert np.allclose(cosine_similarity_matrix(T(scaled)).data, s, atol=1e-14)
    with pytest.raises(NumericDomainError):
        cosine_similarity_matrix(T(np.array([[1.0, 0], [0, 0]])))


def test_softmax_cross_entropy_cases():
    loss = softmax_cross_entropy(T(np.zeros((3, 50))), np.eye(50)[[0, 7, 49]]).item()
    assert loss == pytest.approx(math.log(50), abs=1e-12)
    logits = np.zeros((1, 5))
    logits[0, 2] = 60.0
    assert softmax_cross_entropy(T(logits), np.eye(5)[[2]]).item() < 1e-20
    with pytest.raises(ValueError):
        softmax_cross_entropy(T(np.zeros((2, 3))), np.array([[1, 1, 0], [0, 0, 1]]))


def test_bce_cases():
    assert bce_with_logits(T(np.zeros((1, 24))), np.ones((1, 24))).item() == pytest.approx(math.log(2))
    t = np.array([[1.0, 0.0]])
    assert bce_with_logits(T([[50.0, -50.0]]), t).item() < 1e-20
    with pytest.raises(ValueError):
        bce_with_logits(T(np.zeros((1, 2))), np.array([[0.5, 1.0]]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_values_trip():
    with pytest.raises(FloatingPointError):
        scale(T([1e308]), 10.0)


# ---------------------------------------------------------------- graph behaviour

def _tiny_net(rs):
    x = T(rs.normal(size=(2, 3, 8, 8)))
    w1, b1 = T(rs.normal(size=(4, 3, 3, 3)), True), T(rs.normal(size=4), True)
    w2, b2 = T(rs.normal(size=(5, 36)), True), T(rs.normal(size=5), True)
    return x, [w1, b1, w2, b2]


def _forward(x, p):
    h = maxpool2(relu(conv2d(x, p[0], p[1])))
    return affine(flatten(h), p[2], p[3])


def test_backward_of_sum_is_sum_of_backwards():
    rs = np.random.default_rng(4)
    x, p = _tiny_net(rs)
    wa, wb = rs.normal(size=(2, 5)), rs.normal(size=(2, 5))
    out = _forward(x, p)
    (weighted_sum(out, wa) + weighted_sum(out, wb)).backward()
    joint = [q.grad.copy() for q in p]
    sep = []
    for w in (wa, wb):
        for q in p:
            q.grad = None
        weighted_sum(_forward(x, p), w).backward()
        sep.append([q.grad.copy() for q in p])
    for j, a, b in zip(joint, *sep):
        assert np.allclose(j, a + b, atol=1e-12)


def test_graph_released_and_repeatable():
    rs = np.random.default_rng(5)
    x, p = _tiny_net(rs)
    grads = []
    for _ in range(2):
        for q in p:
            q.grad = None
        out = _forward(x, p)
        loss = weighted_sum(out, np.ones(out.shape))
        loss.backward()
        assert loss._backward is None and loss._parents == ()
        assert out._backward is None
        grads.append([q.grad.copy() for q in p])
    for a, b in zip(*grads):
        assert np.array_equal(a, b)


def test_no_grad_records_nothing():
    w = T(np.ones((2, 2)), True)
    with no_grad():
        y = affine(T(np.ones((1, 2))), w, T(np.zeros(2)))
    assert not y.requires_grad and y._backward is None


def test_float32_is_preserved():
    x = Tensor(np.ones((2, 3, 8, 8), np.float32))
    w = Tensor(np.ones((2, 3, 3, 3), np.float32))
    assert conv2d(x, w, Tensor(np.zeros(2, np.float32))).dtype == np.float32
    assert autodiff.Tensor(np.arange(3)).dtype == np.float64


# ---------------------------------------------------------------- AdaM

def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    st = AdamState.zeros(p)
    adam_step(p, [np.zeros(2)], st)
    assert np.array_equal(p[0], [1.0, -2.0])


@pytest.mark.parametrize("g", [1e-3, 0.5, -7.0])
def test_adam_first_step_magnitude_is_lr(g):
    p = [np.zeros(3)]
    st = AdamState.zeros(p, lr=1e-3)
    adam_step(p, [np.full(3, g)], st)
    assert np.allclose(np.abs(p[0]), 1e-3, rtol=1e-4)
    assert np.all(np.sign(p[0]) == -np.sign(g))


def test_adam_descends_quadratic():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([w], lr=1e-3)
    for _ in range(100):
        opt.zero_grad()
        weighted_sum(w, w.data * 1.0).backward()  # d(w^2)/dw = 2w via grad of <w, w_const> ... add the other half
        w.grad = 2 * w.data
        opt.step()
    assert abs(w.data[0]) < 1.0
    assert opt.state.t == 100


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros([np.zeros(2)]))


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    rs = np.random.default_rng(6)
    params = {"a.weight": rs.normal(size=(3, 4)).astype(np.float32), "a.bias": np.zeros(3, np.float32)}
    st = AdamState.zeros(list(params.values()))
    adam_step(list(params.values()), [np.ones((3, 4), np.float32), np.ones(3, np.float32)], st)
    gen = np.random.Generator(np.random.PCG64(3))
    ck = Checkpoint(params, epoch=7, optimizer=st, rng_state=gen.bit_generator.state, meta={"mode": "ssl"})
    save_checkpoint(tmp_path / "c.ckpt", ck)
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert back.epoch == 7 and back.meta == {"mode": "ssl"}
    for k in params:
        assert np.array_equal(back.params[k], params[k]) and back.params[k].dtype == np.float32
    assert back.optimizer.t == 1
    for a, b in zip(back.optimizer.m + back.optimizer.v, st.m + st.v):
        assert np.array_equal(a, b)
    g2 = np.random.Generator(np.random.PCG64())
    g2.bit_generator.state = back.rng_state
    assert g2.random() == gen.random()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
