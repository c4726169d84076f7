import zlib

import numpy as np
import pytest

from weaklift import autograd as ag
from weaklift.autograd import Adam, AdamState, ParamSet, Tensor, adam_step, clip_grad_norm, gradcheck, step_decay_lr
from weaklift.errors import MissingGradient, NonScalarRoot, ShapeMismatch


def _weighted(fn, out_shape, rng):
    """Scalarize an op with fixed random weights so every output entry matters."""
    w = rng.normal(size=out_shape)
    return lambda *xs: ag.tsum(fn(*xs) * w)


def _positive(rng, shape):
    return rng.uniform(0.2, 2.0, size=shape)


def _away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.05, 0.5, x)


# (name, op, input generator, output shape)
OPS = [
    ("add", lambda a, b: a + b, lambda r: [r.normal(size=(3, 4)), r.normal(size=(1, 4))], (3, 4)),
    ("sub", lambda a, b: a - b, lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))], (3, 4)),
    ("neg", lambda a: -a, lambda r: [r.normal(size=(2, 5))], (2, 5)),
    ("mul", lambda a, b: a * b, lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))], (3, 4)),
    ("div", lambda a, b: a / b, lambda r: [r.normal(size=(3, 4)), _positive(r, (3, 4))], (3, 4)),
    ("scale", lambda a: ag.scale(a, 2.5), lambda r: [r.normal(size=(3, 2))], (3, 2)),
    ("matmul", lambda a, b: a @ b, lambda r: [r.normal(size=(3, 5)), r.normal(size=(5, 2))], (3, 2)),
    ("sum_axis", lambda a: ag.tsum(a, axis=1, keepdims=True), lambda r: [r.normal(size=(4, 3))], (4, 1)),
    ("mean_axis", lambda a: ag.mean(a, axis=0), lambda r: [r.normal(size=(4, 3))], (3,)),
    ("square", ag.square, lambda r: [r.normal(size=(3, 3))], (3, 3)),
    ("sqrt", ag.sqrt, lambda r: [_positive(r, (3, 3))], (3, 3)),
    ("exp", ag.exp, lambda r: [r.normal(size=(3, 3))], (3, 3)),
    ("relu", ag.relu, lambda r: [_away_from_zero(r, (4, 4))], (4, 4)),
    ("tanh", ag.tanh, lambda r: [r.normal(size=(3, 3)) * 2], (3, 3)),
    ("sigmoid", ag.sigmoid, lambda r: [r.normal(size=(3, 3)) * 3], (3, 3)),
    ("softplus", ag.softplus, lambda r: [r.normal(size=(3, 3)) * 3], (3, 3)),
    ("reciprocal", lambda a: ag.reciprocal(a, 1e-3), lambda r: [_positive(r, (3, 3))], (3, 3)),
    ("concat", lambda a, b: ag.concat([a, b], axis=1), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))],
     (2, 5)),
    ("slice", lambda a: a[:, 1:3], lambda r: [r.normal(size=(3, 4))], (3, 2)),
    ("take_cols", lambda a: ag.take_cols(a, [0, 2, 2, 1]), lambda r: [r.normal(size=(3, 4))], (3, 4)),
    ("reshape", lambda a: a.reshape(2, 6), lambda r: [r.normal(size=(3, 4))], (2, 6)),
    ("transpose", lambda a: a.T, lambda r: [r.normal(size=(3, 4))], (4, 3)),
    ("sin_over_root", ag.sin_over_root, lambda r: [r.uniform(0, 4, size=(3, 3))], (3, 3)),
    ("sin_over_root_small", ag.sin_over_root, lambda r: [r.uniform(0, 2e-3, size=(3, 3))], (3, 3)),
    ("one_minus_cos_over_sq", ag.one_minus_cos_over_sq, lambda r: [r.uniform(0, 4, size=(3, 3))], (3, 3)),
    ("one_minus_cos_over_sq_small", ag.one_minus_cos_over_sq, lambda r: [r.uniform(0, 2e-3, size=(3, 3))],
     (3, 3)),
]


@pytest.mark.parametrize("name,op,make,out_shape", OPS, ids=[o[0] for o in OPS])
def test_op_gradients_match_finite_differences(name, op, make, out_shape):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(20):
        err = gradcheck(_weighted(op, out_shape, rng), make(rng))
        assert err < 1e-4, f"{name}: relative error {err:.2e}"


def test_forward_hand_values():
    np.testing.assert_array_equal(ag.relu(Tensor([-1.0, 2.0])).data, [0, 2])
    a = Tensor([[1.0, 2, 3], [4, 5, 6]])
    b = Tensor([[1.0], [0], [-1]])
    np.testing.assert_array_equal((a @ b).data, [[-2], [-2]])
    assert ag.tsum(Tensor(np.ones((16, 2)))).item() == 32


def test_square_gradient_power_rule():
    x = Tensor(3.0, requires_grad=True)
    ag.square(x).backward()
    assert x.grad == 6.0


def test_mean_relu_matmul_against_central_differences():
    rng = np.random.default_rng(3)
    err = gradcheck(lambda w, x: ag.mean(ag.relu(w @ x)), [rng.normal(size=(5, 4)), rng.normal(size=(4, 3))])
    assert err < 1e-4


def test_leaf_off_path_gets_no_gradient():
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(5.0, requires_grad=True)
    (x * x).backward()
    assert y.grad is None or y.grad == 0


def test_backward_needs_scalar():
    with pytest.raises(NonScalarRoot):
        (Tensor(np.ones(3), requires_grad=True) * 2).backward()


def test_incompatible_shapes_rejected():
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 3)))


def test_backward_deterministic_and_accumulates():
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=(4, 4))
    grads = []
    for _ in range(2):
        w = Tensor(w0, requires_grad=True)
        f = ag.mean(ag.tanh(w @ w))
        f.backward()
        grads.append(w.grad.copy())
        f.backward()
        np.testing.assert_array_equal(w.grad, 2 * grads[-1])
    np.testing.assert_array_equal(grads[0], grads[1])


def test_shared_subexpression_gradient():
    x = Tensor(1.5, requires_grad=True)
    y = x * x
    (y + y * x).backward()  # x^2 + x^3
    assert x.grad == pytest.approx(2 * 1.5 + 3 * 1.5**2)


def _one_param(value, grad):
    ps = ParamSet()
    t = ps.add("p", np.array(value, dtype=float))
    t.grad = np.array(grad, dtype=float)
    return ps, t


def test_adam_zero_gradient_leaves_params():
    ps, t = _one_param([1.0, -2.0], [0.0, 0.0])
    adam_step(ps, AdamState(lr=0.1))
    np.testing.assert_array_equal(t.data, [1.0, -2.0])


def test_adam_moves_against_constant_gradient():
    ps, t = _one_param([0.0], [0.7])
    opt = Adam(ps, lr=0.01)
    for _ in range(50):
        t.grad = np.array([0.7])
        opt.step()
    assert t.data[0] < -0.4


def test_adam_single_step_hand_formula():
    ps, t = _one_param([1.0], [0.5])
    st = AdamState(lr=0.1, step=3, m={"p": np.array([0.2])}, v={"p": np.array([0.04])})
    adam_step(ps, st)
    m = 0.9 * 0.2 + 0.1 * 0.5
    v = 0.999 * 0.04 + 0.001 * 0.25
    mh, vh = m / (1 - 0.9**4), v / (1 - 0.999**4)
    assert t.data[0] == pytest.approx(1.0 - 0.1 * mh / (np.sqrt(vh) + 1e-8), rel=1e-12)
    assert st.step == 4


def test_adam_requires_every_gradient():
    ps = ParamSet()
    ps.add("a", np.zeros(2))
    with pytest.raises(MissingGradient):
        adam_step(ps, AdamState(lr=0.1))


def test_adam_state_round_trip():
    st = AdamState(lr=0.1, step=2, m={"p": np.arange(6.0).reshape(2, 3)}, v={"p": np.ones((2, 3))})
    back = AdamState.from_dict(st.to_dict())
    assert back.step == 2 and back.lr == 0.1
    np.testing.assert_array_equal(back.m["p"], st.m["p"])


def test_step_decay_schedule():
    assert step_decay_lr(1e-4, 29, (30, 60, 90)) == pytest.approx(1e-4)
    assert step_decay_lr(1e-4, 30, (30, 60, 90)) == pytest.approx(1e-5)
    assert step_decay_lr(1e-4, 95, (30, 60, 90)) == pytest.approx(1e-7)


def test_clip_grad_norm():
    ps, t = _one_param([0.0, 0.0], [3.0, 4.0])
    assert clip_grad_norm(ps, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(t.grad, [0.6, 0.8])


def test_paramset_round_trip_and_duplicates():
    ps = ParamSet()
    ps.add("a.W", np.arange(4.0).reshape(2, 2))
    ps.add("b.W", np.ones(3))
    back = ParamSet.from_dict(ps.to_dict())
    assert back.names() == ["a.W", "b.W"] and back.num_params == 7
    np.testing.assert_array_equal(back["a.W"].data, ps["a.W"].data)
    assert ps.subset(["a."]).names() == ["a.W"]
    with pytest.raises(KeyError):
        ps.add("a.W", np.zeros(1))
