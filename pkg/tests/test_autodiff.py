import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headfit import autodiff as ad
from headfit.autodiff import Tensor


def test_square_gradient():
    x = Tensor(3.0)
    assert ad.grad(ad.mul(x, x), x) == 6.0


def test_product_gradients():
    x, y = Tensor(2.0), Tensor(5.0)
    gx, gy = ad.backward(ad.mul(x, y), [x, y])
    assert gx == 5.0 and gy == 2.0


def test_non_participating_leaf_gets_zero():
    x, unused = Tensor([1.0, 2.0]), Tensor([7.0, 7.0, 7.0])
    grads = ad.backward(ad.sum_sq(x), [x, unused])
    assert np.array_equal(grads[1], np.zeros(3))


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        ad.backward(ad.mul(x, x), [x])


def test_backward_linear_over_independent_subgraphs():
    x1, x2 = Tensor([1.0, -2.0]), Tensor([0.5, 3.0])
    joint = ad.backward(ad.add(ad.sum_sq(x1), ad.sum_sq(x2)), [x1, x2])
    assert np.allclose(joint[0], 2 * np.array([1.0, -2.0]))
    assert np.allclose(joint[1], 2 * np.array([0.5, 3.0]))


def test_backward_of_sum_equals_sum_of_backwards(rng):
    # gradient linearity on a shared leaf: d(f+g) = df + dg
    x0 = rng.normal(size=4)

    def f(t):
        return ad.sum_sq(t)

    def g(t):
        return ad.dot(t, np.arange(4.0))

    leaf = Tensor(x0)
    combined = ad.backward(ad.add(f(leaf), g(leaf)), [leaf])[0]
    leaf_f, leaf_g = Tensor(x0), Tensor(x0)
    separate = (ad.backward(f(leaf_f), [leaf_f])[0]
                + ad.backward(g(leaf_g), [leaf_g])[0])
    assert np.allclose(combined, separate, atol=1e-15)


def test_leaf_rejects_non_finite():
    with pytest.raises(ValueError):
        Tensor([1.0, np.inf])


def test_op_rejects_non_finite_result():
    with pytest.raises(ValueError):
        ad.div(Tensor(1.0), Tensor(0.0))


def test_reused_subexpression_accumulates():
    x = Tensor(2.0)
    y = ad.mul(x, x)          # x^2
    z = ad.add(y, ad.mul(3.0, y))  # 4 x^2
    assert ad.grad(z, x) == 16.0


def test_no_grad_blocks_tracking():
    x = Tensor([1.0, 2.0])
    with ad.no_grad():
        y = ad.sum_sq(x)
    assert y._parents == ()


def test_take_rows_accumulates_duplicates():
    x = Tensor(np.arange(12.0).reshape(4, 3))
    picked = ad.take_rows(x, np.array([1, 1, 3]))
    g = ad.grad(ad.t_sum(picked), x)
    assert np.array_equal(g, np.array([[0, 0, 0], [2, 2, 2], [0, 0, 0],
                                       [1, 1, 1]], dtype=float))


def test_getitem_slice_gradient():
    x = Tensor(np.arange(6.0))
    g = ad.grad(ad.t_sum(x[2:5]), x)
    assert np.array_equal(g, np.array([0, 0, 1, 1, 1, 0], dtype=float))


def test_abs_subgradient_zero_at_kink():
    x = Tensor([0.0, -2.0, 3.0])
    g = ad.grad(ad.t_sum(ad.t_abs(x)), x)
    assert np.array_equal(g, np.array([0.0, -1.0, 1.0]))


def test_relu_subgradient_zero_at_kink():
    x = Tensor([0.0, -1.0, 2.0])
    g = ad.grad(ad.t_sum(ad.relu(x)), x)
    assert np.array_equal(g, np.array([0.0, 0.0, 1.0]))


# ---------------------------------------------------------------------------
# rodrigues


def test_rodrigues_zero_is_identity():
    rot = ad.rodrigues(np.zeros(3))
    assert np.array_equal(rot.value, np.eye(3))


def test_rodrigues_quarter_turn_about_x():
    rot = ad.rodrigues(np.array([math.pi / 2, 0.0, 0.0]))
    assert np.allclose(rot.value @ np.array([0.0, 1.0, 0.0]),
                       np.array([0.0, 0.0, 1.0]), atol=1e-12)


def test_rodrigues_half_turn_about_z():
    rot = ad.rodrigues(np.array([0.0, 0.0, math.pi]))
    assert np.allclose(rot.value @ np.array([1.0, 0.0, 0.0]),
                       np.array([-1.0, 0.0, 0.0]), atol=1e-12)


def test_rodrigues_rejects_non_finite():
    with pytest.raises(ValueError):
        ad.rodrigues(np.array([np.nan, 0.0, 0.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_rodrigues_orthonormal_unit_determinant(vec):
    rot = ad.rodrigues(np.array(vec)).value
    assert np.abs(rot.T @ rot - np.eye(3)).max() < 1e-10
    assert abs(np.linalg.det(rot) - 1.0) < 1e-10


def test_rodrigues_small_angle_branch_matches_large():
    # just above and below the branch point agree and stay differentiable
    for norm in (5e-9, 2e-8):
        vec = norm * np.array([0.6, -0.8, 0.0])
        rot = ad.rodrigues(vec).value
        assert np.abs(rot.T @ rot - np.eye(3)).max() < 1e-15


# ---------------------------------------------------------------------------
# grad_check


def test_grad_check_quadratic_form():
    mat = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 4.0]])

    def quad(x):
        return ad.dot(x, ad.matmul(mat, x))

    assert ad.grad_check(quad, np.array([0.3, -1.2, 0.8])) < 1e-7


def test_grad_check_rodrigues_composite(rng):
    target = rng.normal(size=3)
    point = rng.normal(size=3)

    def f(v):
        return ad.sum_sq(ad.sub(ad.matmul(ad.rodrigues(v), point), target))

    assert ad.grad_check(f, rng.normal(scale=0.5, size=3)) < 1e-5


def test_grad_check_requires_scalar():
    with pytest.raises(ValueError):
        ad.grad_check(lambda t: ad.mul(t, 2.0), np.array([1.0, 2.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=6))
def test_grad_check_random_compositions(values):
    x0 = np.array(values)

    def f(x):
        return ad.t_sum(ad.mul(ad.t_sin(x), ad.exp(ad.mul(0.3, x))))

    assert ad.grad_check(f, x0) < 1e-4


_UNARY_OPS = [
    ("abs", ad.t_abs, (0.2, 3.0)),
    ("relu", ad.relu, (0.2, 3.0)),
    ("sqrt", ad.sqrt, (0.1, 4.0)),
    ("exp", ad.exp, (-2.0, 2.0)),
    ("sin", ad.t_sin, (-3.0, 3.0)),
    ("cos", ad.t_cos, (-3.0, 3.0)),
    ("neg", ad.neg, (-3.0, 3.0)),
    ("clamp", lambda t: ad.clamp(t, -1.0, 1.0), (1.2, 3.0)),
]


@pytest.mark.parametrize("name,op,value_range", _UNARY_OPS)
def test_every_unary_op_matches_finite_differences(name, op, value_range):
    # 100 random small inputs per operation, kept away from each op's kinks
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    lo, hi = value_range
    for _ in range(100):
        x0 = rng.uniform(lo, hi, size=rng.integers(1, 6))
        x0 *= rng.choice([-1.0, 1.0], size=x0.shape) if name not in ("sqrt",) \
            else 1.0
        if name in ("abs", "relu"):
            x0 = np.where(np.abs(x0) < 0.1, 0.5, x0)
        gap = ad.grad_check(lambda t: ad.t_sum(op(t)), x0)
        assert gap < 1e-4, f"{name} at {x0}"


@pytest.mark.parametrize("name,op", [
    ("add", ad.add), ("sub", ad.sub), ("mul", ad.mul), ("div", ad.div),
    ("atan2", ad.atan2),
])
def test_every_binary_op_matches_finite_differences(name, op):
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    for _ in range(100):
        x0 = rng.uniform(0.5, 2.0, size=4) * rng.choice([-1.0, 1.0], size=4)
        other = rng.uniform(0.5, 2.0, size=4) * rng.choice([-1.0, 1.0], size=4)
        gap_left = ad.grad_check(lambda t: ad.t_sum(op(t, other)), x0)
        gap_right = ad.grad_check(lambda t: ad.t_sum(op(other, t)), x0)
        assert max(gap_left, gap_right) < 1e-4, f"{name} at {x0}"


def test_matmul_shapes_and_gradients(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 2))
    v = rng.normal(size=3)

    assert ad.grad_check(lambda t: ad.t_sum(ad.matmul(t, b)), a) < 1e-7
    assert ad.grad_check(lambda t: ad.t_sum(ad.matmul(a, t)), b.copy()) < 1e-7
    assert ad.grad_check(lambda t: ad.t_sum(ad.matmul(a, t)), v) < 1e-7
    assert ad.grad_check(lambda t: ad.t_sum(ad.matmul(t, b)),
                         rng.normal(size=3)) < 1e-7
    assert ad.grad_check(lambda t: ad.dot(t, v), v.copy()) < 1e-7


def test_broadcast_gradients(rng):
    scalar = np.array(1.7)
    mat = rng.normal(size=(3, 2))
    assert ad.grad_check(lambda t: ad.t_sum(ad.mul(t, mat)), scalar) < 1e-7
    row = rng.normal(size=2)
    assert ad.grad_check(lambda t: ad.t_sum(ad.add(mat, t)), row) < 1e-7


def test_atan2_gradient(rng):
    assert ad.grad_check(
        lambda t: ad.atan2(t[0:1], t[1:2]), np.array([0.7, -1.2])) < 1e-7


def test_concat_and_reshape_gradient(rng):
    a = rng.normal(size=4)

    def f(t):
        joined = ad.concat([t, np.ones(2)])
        return ad.sum_sq(ad.reshape(joined, (3, 2)))

    assert ad.grad_check(f, a) < 1e-7
