import math

import numpy as np
import pytest

from latealign import autodiff as ad
from latealign.autodiff import Var
from latealign.errors import NumericError


def test_gelu_fixed_points():
    assert ad.gelu(0.0) == 0.0
    assert abs(ad.gelu(10.0) - 10.0) < 1e-9
    # x * Phi(x) at x=1, frozen from a high-precision erf evaluation
    assert abs(ad.gelu(1.0) - 0.8413447460685429) < 1e-12


def test_gelu_matches_cdf_definition():
    xs = np.linspace(-6, 6, 241)
    phi = 0.5 * (1.0 + np.array([math.erf(x / math.sqrt(2)) for x in xs]))
    assert np.allclose(ad.gelu(xs), xs * phi, atol=1e-12)


def test_gelu_reflection_identity():
    # Analytic identity of x * Phi(x): gelu(x) - gelu(-x) = x.
    xs = np.linspace(-8, 8, 401)
    assert np.max(np.abs(ad.gelu(xs) - ad.gelu(-xs) - xs)) < 1e-9


def test_gelu_monotone_for_nonnegative_inputs():
    xs = np.linspace(0, 8, 500)
    assert np.all(np.diff(ad.gelu(xs)) >= 0)


def test_gelu_grad_matches_finite_differences():
    xs = np.linspace(-4, 4, 81)
    h = 1e-6
    num = (ad.gelu(xs + h) - ad.gelu(xs - h)) / (2 * h)
    assert np.allclose(ad.gelu_grad(xs), num, atol=1e-8)


def test_softmax_symmetry_and_derived_value():
    out = ad.softmax(np.array([0.0, 0.0]), 1.0)
    assert np.allclose(out, [0.5, 0.5])
    out = ad.softmax(np.array([math.log(2.0), 0.0]), 1.0)
    assert abs(out[0] - 2.0 / 3.0) < 1e-12
    assert abs(out[1] - 1.0 / 3.0) < 1e-12


def test_softmax_shift_invariance_and_normalization():
    rng = np.random.default_rng(0)
    for tau in (0.1, 1.0, 10.0):
        for _ in range(25):
            v = rng.normal(size=rng.integers(1, 9))
            out = ad.softmax(v, tau)
            assert abs(out.sum() - 1.0) < 1e-12
            shifted = ad.softmax(v + 17.25, tau)
            assert np.allclose(out, shifted, atol=1e-12)


def test_softmax_masked_entries_are_zero():
    v = np.array([1.0, -np.inf, 0.5])
    out = ad.softmax(v, 1.0)
    assert out[1] == 0.0
    assert abs(out.sum() - 1.0) < 1e-12


def test_softmax_empty_support():
    with pytest.raises(ValueError, match="empty softmax support"):
        ad.softmax(np.array([-np.inf, -np.inf]), 1.0)
    with pytest.raises(ValueError):
        ad.softmax(np.array([1.0]), 0.0)


def test_cosine_sim_examples():
    assert ad.cosine_sim([3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0, abs=1e-12)
    assert ad.cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert ad.cosine_sim([1.0, 0.0], [1.0, 1.0]) == pytest.approx(
        0.7071067811865475, abs=1e-12)


def test_cosine_sim_properties():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = rng.normal(size=5)
        b = rng.normal(size=5)
        c = ad.cosine_sim(a, b)
        assert -1 - 1e-9 <= c <= 1 + 1e-9
        assert c == ad.cosine_sim(b, a)
        lam = float(rng.uniform(0.1, 10))
        assert abs(ad.cosine_sim(lam * a, b) - c) < 1e-12
    assert ad.cosine_sim(np.zeros(4), rng.normal(size=4)) == 0.0


def test_grad_check_quadratic_and_constant():
    def quad(params):
        x = params["x"]
        return float((x ** 2).sum()), {"x": 2 * x}

    err = ad.grad_check(quad, {"x": np.array([1.0])}, epsilon=1e-5)
    assert err < 1e-8

    def const(params):
        return 3.5, {"x": np.zeros_like(params["x"])}

    assert ad.grad_check(const, {"x": np.ones(3)}, epsilon=1e-5) == 0.0


def test_grad_check_epsilon_range_and_nonfinite():
    def bad(params):
        return float("nan"), {"x": np.zeros_like(params["x"])}

    with pytest.raises(NumericError, match="non-finite objective"):
        ad.grad_check(bad, {"x": np.ones(2)}, epsilon=1e-5)
    with pytest.raises(ValueError):
        ad.grad_check(bad, {"x": np.ones(2)}, epsilon=1e-2)


def _gc(build, params, eps=1e-5):
    """Gradient-check a graph builder against its leaf parameters."""
    def f(ps):
        leaves = {k: Var(v) for k, v in ps.items()}
        root = build(leaves)
        ad.backward(root)
        grads = {k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
                 for k, leaf in leaves.items()}
        return float(root.value), grads
    return ad.grad_check(f, params, eps)


def test_primitive_gradients():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    w = rng.normal(size=(5, 4))

    def build(leaves):
        h = ad.gelu_op(ad.matmul(leaves["a"], leaves["b"]))
        s = ad.mean_rows(ad.matmul(h, leaves["w"]))
        return ad.matmul(s, ad.transpose(s))

    assert _gc(build, {"a": a, "b": b, "w": w}) < 1e-6


def test_masked_colsoftmax_gradient_and_zeros():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 6))
    mask = np.array([True, True, False, True, False, True])

    sm = ad.masked_colsoftmax(Var(x), mask).value
    assert np.all(sm[:, ~mask] == 0.0)
    assert np.allclose(sm[:, mask].sum(axis=0), 1.0, atol=1e-12)

    weights = rng.normal(size=(6, 3))

    def build(leaves):
        sm = ad.masked_colsoftmax(leaves["x"], mask)
        flat = ad.mean_rows(ad.matmul(sm, Var(weights)))
        return ad.matmul(flat, ad.transpose(flat))

    assert _gc(build, {"x": x}) < 1e-6


def test_exp_neg_mul_scalar_gradients():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3))
    t = np.asarray(0.3)

    def build(leaves):
        scaled = ad.mul_scalar(leaves["x"], ad.exp(ad.neg(leaves["t"])))
        s = ad.mean_rows(scaled)
        return ad.matmul(s, ad.transpose(s))

    assert _gc(build, {"x": x, "t": t}) < 1e-6


def test_rows_and_concat_gradients():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(5, 3))
    y = rng.normal(size=(2, 3))

    def build(leaves):
        top = ad.rows(leaves["x"], 1, 4)
        cat = ad.concat_rows([top, leaves["y"]])
        s = ad.mean_rows(ad.gelu_op(cat))
        return ad.matmul(s, ad.transpose(s))

    assert _gc(build, {"x": x, "y": y}) < 1e-6


def test_backward_requires_scalar_root():
    x = Var(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.backward(ad.scale(x, 2.0))


def test_replay_reproduces_forward_bitwise():
    rng = np.random.default_rng(6)
    x = Var(rng.normal(size=(4, 3)))
    y = Var(rng.normal(size=(3, 3)))
    h = ad.gelu_op(ad.matmul(x, y))
    s = ad.mean_rows(h)
    root = ad.matmul(s, ad.transpose(s))
    again = ad.replay(root)
    assert np.array_equal(again, root.value)
