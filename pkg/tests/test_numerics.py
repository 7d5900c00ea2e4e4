"""Array substrate: forward semantics, gradient correctness, optimizer."""

import numpy as np
import pytest
from helpers import check_grad_fn, rel_err, weighted_sum

from mogrid import numerics as nm


def test_matmul_identity_padded():
    a = nm.Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    eye = np.zeros((3, 2))
    eye[0, 0] = eye[1, 1] = 1.0
    out = nm.matmul(a, nm.Tensor(eye))
    assert np.allclose(out.data, [[1.0, 2.0], [4.0, 5.0]])


def test_softmax_uniform():
    out = nm.softmax(nm.Tensor(np.zeros((1, 3))), axis=-1)
    assert np.allclose(out.data, 1.0 / 3.0)


def test_matmul_shape_error():
    with pytest.raises(nm.ShapeError):
        nm.matmul(nm.Tensor(np.zeros((2, 3))), nm.Tensor(np.zeros((2, 3))))


def test_nonfinite_raises():
    nm.set_finite_checks(True)
    with pytest.raises(nm.NonFiniteError):
        nm.log(nm.Tensor(np.array([0.0])))
    with pytest.raises(nm.NonFiniteError):
        nm.exp(nm.Tensor(np.array([1000.0])))


def test_backward_requires_scalar():
    t = nm.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nm.ShapeError):
        nm.backward_scalar(nm.mul(t, 2.0))


def test_square_gradient_at_three():
    t = nm.Tensor(np.array([3.0]), requires_grad=True)
    nm.backward_scalar(nm.tsum(nm.mul(t, t)))
    assert np.allclose(t.grad, [6.0])


def test_sign_ste_passthrough_inside_band():
    z = nm.Tensor(np.array([0.5, -0.3, 0.9, -0.99]), requires_grad=True)
    nm.backward_scalar(nm.tsum(nm.sign_ste(z, scale=0.25)))
    assert np.array_equal(z.grad, np.ones(4))
    z2 = nm.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    nm.backward_scalar(nm.tsum(nm.sign_ste(z2, scale=0.25)))
    assert np.array_equal(z2.grad, np.zeros(2))


def test_sign_ste_zero_convention():
    out = nm.sign_ste(nm.Tensor(np.array([0.0, -0.0])), scale=1.0)
    assert np.array_equal(out.data, [1.0, 1.0])


def test_disconnected_parameter_warns_and_zeroes():
    store = nm.ParamStore(seed=0)
    a = store.param("a", (2,))
    store.param("b", (3,))
    loss = nm.tsum(nm.mul(a, a))
    with pytest.warns(UserWarning, match="disconnected"):
        grads = nm.backward(loss, store)
    assert np.array_equal(grads["b"], np.zeros(3))
    assert grads["a"].shape == (2,)


def test_backward_linearity_of_sums():
    rng = np.random.default_rng(3)
    with nm.precision(np.float64):
        x0 = rng.normal(size=(4, 3))
        w1 = rng.normal(size=(4, 3))
        w2 = rng.normal(size=(4, 3))

        def grad_of(loss_fn):
            t = nm.Tensor(x0.copy(), requires_grad=True)
            nm.backward_scalar(loss_fn(t))
            return t.grad

        g1 = grad_of(lambda t: nm.tsum(nm.mul(nm.gelu(t), w1)))
        g2 = grad_of(lambda t: nm.tsum(nm.mul(nm.sigmoid(t), w2)))
        gsum = grad_of(
            lambda t: nm.add(nm.tsum(nm.mul(nm.gelu(t), w1)), nm.tsum(nm.mul(nm.sigmoid(t), w2)))
        )
    assert np.array_equal(g1 + g2, gsum)


def test_forward_purity_bit_exact():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 8)).astype(np.float32)
    w = rng.normal(size=(8, 8)).astype(np.float32)

    def run():
        t = nm.softmax(nm.matmul(nm.Tensor(x), nm.Tensor(w)), axis=-1)
        return nm.layer_norm(t, nm.Tensor(np.ones(8, np.float32)), nm.Tensor(np.zeros(8, np.float32))).data

    assert np.array_equal(run(), run())


_UNARY = {
    "exp": nm.exp,
    "sigmoid": nm.sigmoid,
    "tanh": nm.tanh,
    "gelu": nm.gelu,
    "softplus": nm.softplus,
    "softmax": lambda t: nm.softmax(t, axis=-1),
    "rotate_pairs": nm.rotate_pairs,
    "repeat": lambda t: nm.repeat_axis(t, 3, axis=0),
    "reshape": lambda t: nm.reshape(t, (2, 12)),
    "transpose": lambda t: nm.transpose(t, (1, 0, 2)),
    "slice": lambda t: t[1:, :2],
    "mean": lambda t: nm.tmean(t, axis=-1),
    "binary_entropy": lambda t: nm.binary_entropy(nm.sigmoid(t)),
    "masked_softmax": lambda t: nm.masked_softmax(
        t, np.where(np.arange(t.shape[-1]) % 2 == 0, 0.0, -1e9), axis=-1
    ),
}


@pytest.mark.parametrize("name", sorted(_UNARY))
def test_unary_gradients_match_finite_differences(name):
    op = _UNARY[name]
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = (4, 3, 4) if name in ("transpose",) else (4, 6)
        x0 = rng.normal(size=shape) * 0.8
        w = rng.normal(size=np.asarray(op(nm.Tensor(np.asarray(x0))).shape))
        worst = max(
            worst, check_grad_fn(lambda t: nm.tsum(nm.mul(op(t), w)), x0)
        )
    assert worst < 1e-3


def test_log_gradient():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(0.5, 2.0, size=(3, 3))
        check_grad_fn(lambda t: weighted_sum(nm.log(t), np.random.default_rng(seed + 1)), x0)


def test_relu_gradient_off_kink():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(4, 4))
        x0 = np.where(np.abs(x0) < 1e-3, 0.5, x0)  # keep away from the kink
        check_grad_fn(lambda t: weighted_sum(nm.relu(t), np.random.default_rng(seed + 1)), x0)


def test_binary_gradients_match_finite_differences():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a0 = rng.normal(size=(3, 4))
        b0 = rng.normal(size=(4, 5))
        bc = rng.normal(size=(5,))

        # matmul, both sides
        const_b = nm.Tensor(b0.copy())
        w = rng.normal(size=(3, 5))
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.matmul(t, const_b), w)), a0)
        const_a = nm.Tensor(a0.copy())
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.matmul(const_a, t), w)), b0)

        # broadcast add/mul/sub
        wa = rng.normal(size=(3, 4))
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.add(t, bc[:4]), wa)), a0)
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.mul(t, bc[:4]), wa)), a0)
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.sub(bc[:4], t), wa)), a0)


def test_layer_norm_gradient():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(3, 6))
        g0 = rng.normal(size=(6,))
        b0 = rng.normal(size=(6,))
        w = rng.normal(size=(3, 6))
        gc, bc_ = nm.Tensor(g0), nm.Tensor(b0)
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.layer_norm(t, gc, bc_), w)), x0)
        xc = nm.Tensor(x0)
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.layer_norm(xc, t, bc_), w)), g0)


def test_conv1d_gradients():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(2, 6, 3))
        w0 = rng.normal(size=(3, 3, 4))
        b0 = rng.normal(size=(4,))
        proj = rng.normal(size=(2, 6, 4))
        wc, bc_ = nm.Tensor(w0.copy()), nm.Tensor(b0.copy())
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.conv1d_same(t, wc, bc_), proj)), x0)
        xc = nm.Tensor(x0.copy())
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.conv1d_same(xc, t, bc_), proj)), w0)
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.conv1d_same(xc, wc, t), proj)), b0)


def test_group_mean_take_axis_gradients():
    groups = [np.array([0, 1, 2]), np.array([3]), np.array([4, 5])]
    mapping = np.array([0, 0, 1, 2, 2, 2, 1])
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(6, 3))
        w = rng.normal(size=(3, 3))
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.group_mean(t, groups, axis=0), w)), x0)
        w2 = rng.normal(size=(7, 3))
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.take_axis(t, mapping, axis=0), w2)), x0)


def test_rope_rotate_gradient():
    L, D = 5, 8
    rng = np.random.default_rng(0)
    ang = rng.normal(size=(L, D // 2))
    cos = np.repeat(np.cos(ang), 2, axis=1)
    sin = np.repeat(np.sin(ang), 2, axis=1)
    for seed in range(50):
        r2 = np.random.default_rng(seed)
        x0 = r2.normal(size=(L, D))
        w = r2.normal(size=(L, D))
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.rope_rotate(t, cos, sin), w)), x0)


def test_concat_gradient():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(2, 3))
        y0 = nm.Tensor(rng.normal(size=(2, 2)))
        w = rng.normal(size=(2, 5))
        check_grad_fn(lambda t: nm.tsum(nm.mul(nm.concat([t, y0], axis=1), w)), x0)


# -- optimizer ---------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    store = nm.ParamStore(seed=1)
    p = store.param("p", (4,))
    before = p.data.copy()
    opt = nm.Adam(store, lr=0.1)
    p.grad = np.zeros_like(p.data)
    opt.step()
    assert np.array_equal(p.data, before)
    assert opt.t == 1


def test_adam_descends_on_square():
    store = nm.ParamStore(seed=2)
    x = store.param("x", (1,), init=np.array([1.0]))
    opt = nm.Adam(store, lr=0.1)
    nm.backward(nm.tsum(nm.mul(x, x)), store)
    opt.step()
    assert abs(float(x.data[0])) < 1.0


def test_adam_converges_on_2d_quadratic():
    store = nm.ParamStore(seed=3)
    x = store.param("x", (2,), init=np.array([1.0, -1.5]))
    opt = nm.Adam(store, lr=0.1)
    loss_val = None
    for _ in range(200):
        loss = nm.tsum(nm.mul(x, x))
        loss_val = float(loss.data)
        nm.backward(loss, store)
        opt.step()
    assert loss_val < 1e-4


def test_adam_rejects_nonfinite_gradient():
    store = nm.ParamStore(seed=4)
    p = store.param("p", (2,))
    opt = nm.Adam(store)
    p.grad = np.array([np.nan, 0.0], dtype=p.data.dtype)
    with pytest.raises(nm.NonFiniteError):
        opt.step()


def test_param_store_roundtrip_and_substreams():
    store = nm.ParamStore(seed=7)
    a = store.param("a", (3, 3))
    b = store.param("b", (2,))
    state = store.state_dict()

    other = nm.ParamStore(seed=7)
    other.param("b", (2,))  # creation order differs; init must not
    other.param("a", (3, 3))
    assert np.array_equal(other.params["a"].data, a.data)
    assert np.array_equal(other.params["b"].data, b.data)

    other.params["a"].data[:] = 0
    other.load_state_dict(state)
    assert np.array_equal(other.params["a"].data, a.data)

    s1 = nm.substream(5, "x").normal(size=4)
    s2 = nm.substream(5, "x").normal(size=4)
    s3 = nm.substream(5, "y").normal(size=4)
    assert np.array_equal(s1, s2)
    assert not np.array_equal(s1, s3)
