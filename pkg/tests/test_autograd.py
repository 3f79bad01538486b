"""Gradient checks for the tensor engine.

Every primitive is verified against a central finite-difference oracle
(h=1e-5, 64-bit), plus the structural invariants: frozen tensors never
materialize gradients, backward is deterministic, mse_sum(A,A) == 0.
"""

import numpy as np
import pytest

from cascast.autograd import Tape, Tensor, backward, set_mode


def fd_grad(f, x, h=1e-5):
    """Central finite differences of scalar f w.r.t. array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def check_op(build, *param_shapes, seed=0, tol=1e-4):
    """Run analytic vs FD gradients for a scalar-valued builder.

    ``build(tape, *tensors)`` must return a scalar Tensor. Each entry of
    ``param_shapes`` becomes a requires-grad leaf filled from one rng.
    """
    rng = np.random.default_rng(seed)
    params = [Tensor(rng.standard_normal(s), requires_grad=True) for s in param_shapes]

    tape = Tape()
    loss = build(tape, *params)
    backward(tape, loss)

    for i, p in enumerate(params):
        def f(p=p):
            t = Tape()
            return build(t, *params).values.item()

        num = fd_grad(f, p.values)
        assert p.grad is not None, f"missing grad for param {i}"
        err = rel_err(p.grad, num)
        assert err <= tol, f"param {i}: relative error {err:.2e} > {tol}"


class TestPrimitiveGradients:
    def test_matmul(self):
        check_op(lambda t, a, b: t.mse_sum(t.matmul(a, b), _zeros(t, (4, 3))), (4, 5), (5, 3))

    def test_add_same_shape(self):
        check_op(lambda t, a, b: t.mse_sum(t.add(a, b), _zeros(t, (4, 5))), (4, 5), (4, 5))

    def test_add_row_broadcast(self):
        check_op(lambda t, a, b: t.mse_sum(t.add(a, b), _zeros(t, (4, 5))), (4, 5), (1, 5))

    def test_add_col_broadcast(self):
        check_op(lambda t, a, b: t.mse_sum(t.add(a, b), _zeros(t, (4, 5))), (4, 5), (4, 1))

    def test_scale(self):
        check_op(lambda t, a: t.mse_sum(t.scale(a, -2.5), _zeros(t, (4, 5))), (4, 5))

    def test_gelu(self):
        check_op(lambda t, a: t.mse_sum(t.gelu(a), _zeros(t, (4, 5))), (4, 5))

    def test_tanh(self):
        check_op(lambda t, a: t.mse_sum(t.tanh(a), _zeros(t, (4, 5))), (4, 5))

    def test_softmax_rows(self):
        check_op(lambda t, a: t.mse_sum(t.softmax_rows(a), _ramp(t, (4, 5))), (4, 5))

    def test_layernorm(self):
        check_op(
            lambda t, a, g, b: t.mse_sum(t.layernorm(a, g, b), _ramp(t, (4, 5))),
            (4, 5),
            (1, 5),
            (1, 5),
        )

    def test_mse_sum_both_sides(self):
        check_op(lambda t, a, b: t.mse_sum(a, b), (4, 5), (4, 5))

    def test_transpose(self):
        check_op(lambda t, a: t.mse_sum(t.transpose(a), _zeros(t, (5, 4))), (4, 5))

    def test_slice_rows(self):
        check_op(lambda t, a: t.mse_sum(t.slice_rows(a, 1, 3), _zeros(t, (2, 5))), (4, 5))

    def test_slice_cols(self):
        check_op(lambda t, a: t.mse_sum(t.slice_cols(a, 2, 5), _zeros(t, (4, 3))), (4, 5))

    def test_concat_cols(self):
        check_op(
            lambda t, a, b: t.mse_sum(t.concat_cols([a, b]), _zeros(t, (4, 8))),
            (4, 5),
            (4, 3),
        )

    def test_mean_rows(self):
        check_op(lambda t, a: t.mse_sum(t.mean_rows(a), _zeros(t, (1, 5))), (4, 5))

    def test_composite_softmax_mse_chain(self):
        # stack of ops mirroring an attention row: matmul -> softmax -> matmul -> mse
        def build(t, q, k, v):
            scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / np.sqrt(5))
            attn = t.softmax_rows(scores)
            out = t.matmul(attn, v)
            return t.mse_sum(out, _ramp(t, (4, 3)))

        check_op(build, (4, 5), (4, 5), (4, 3))


def _zeros(tape, shape):
    return Tensor(np.zeros(shape))


def _ramp(tape, shape):
    return Tensor(np.arange(np.prod(shape), dtype=float).reshape(shape) / np.prod(shape))


class TestForwardValues:
    def test_matmul_identity(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((4, 4)))
        out = Tape().matmul(Tensor(np.eye(4)), x)
        np.testing.assert_array_equal(out.values, x.values)

    def test_softmax_constant_row(self):
        out = Tape().softmax_rows(Tensor(np.full((3, 5), 2.0)))
        np.testing.assert_allclose(out.values, np.full((3, 5), 0.2), atol=1e-12)

    def test_gelu_zero(self):
        out = Tape().gelu(Tensor(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.values, np.zeros((2, 2)))

    def test_layernorm_rows_standardized(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((6, 9)) * 3 + 1)
        g = Tensor(np.ones((1, 9)))
        b = Tensor(np.zeros((1, 9)))
        out = Tape().layernorm(x, g, b)
        np.testing.assert_allclose(out.values.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.values.var(axis=1), 1.0, atol=1e-4)

    def test_mse_sum_self_is_zero(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal((5, 7)))
        out = Tape().mse_sum(a, a)
        assert out.values.item() == 0.0

    def test_analytic_quadratic(self):
        # loss = sum(x*x) at x=(3,-1) -> grad (6,-2)
        x = Tensor(np.array([[3.0, -1.0]]), requires_grad=True)
        tape = Tape()
        loss = tape.mse_sum(x, Tensor(np.zeros((1, 2))))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [[6.0, -2.0]])


class TestEngineInvariants:
    def test_frozen_tensor_never_materializes_grad(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        frozen = Tensor(rng.standard_normal((3, 3)), requires_grad=False)
        tape = Tape()
        out = tape.matmul(frozen, w)
        loss = tape.mse_sum(out, Tensor(np.zeros((3, 3))))
        backward(tape, loss)
        assert w.grad is not None
        assert frozen.grad is None

    def test_grad_accumulates_across_tapes(self):
        w = Tensor(np.array([[2.0]]), requires_grad=True)
        for _ in range(3):
            tape = Tape()
            loss = tape.mse_sum(w, Tensor(np.zeros((1, 1))))
            backward(tape, loss)
        np.testing.assert_allclose(w.grad, [[12.0]])
        w.zero_grad()
        assert w.grad is None

    def test_fanout_gradient_additive(self):
        x = Tensor(np.array([[1.5]]), requires_grad=True)
        tape = Tape()
        doubled = tape.add(x, x)  # y = 2x, dy/dx = 2
        loss = tape.mse_sum(doubled, Tensor(np.zeros((1, 1))))  # (2x)^2
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, [[12.0]])  # d/dx 4x^2 = 8x

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        tape = Tape()
        y = tape.scale(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            backward(tape, y)

    def test_shape_mismatch_names_primitive(self):
        tape = Tape()
        with pytest.raises(ValueError, match="matmul"):
            tape.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ValueError, match="mse_sum"):
            tape.mse_sum(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_backward_deterministic(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((4, 4))
        grads = []
        for _ in range(2):
            w = Tensor(a.copy(), requires_grad=True)
            tape = Tape()
            out = tape.gelu(tape.matmul(w, Tensor(a)))
            loss = tape.mse_sum(out, Tensor(np.zeros((4, 4))))
            backward(tape, loss)
            grads.append(w.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])

    def test_train_mode_uses_float32(self):
        set_mode("train")
        t = Tensor(np.zeros((2, 2)))
        assert t.values.dtype == np.float32
        set_mode("test")
        t2 = Tensor(np.zeros((2, 2)))
        assert t2.values.dtype == np.float64
