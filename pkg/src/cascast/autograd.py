"""Minimal dense-tensor reverse-mode autodiff.

Just enough machinery for the model stack: matmul, additions with
row/column broadcast, GELU/tanh, row softmax, layer norm, squared-error
reduction, plus the slicing/concat helpers the attention heads need.
Every op records a node on an explicit Tape; backward() walks the tape
in reverse and accumulates gradients into the ``grad`` slot of
requires-grad leaves.

Two precision modes exist: 64-bit ("test", makes finite-difference
oracles meaningful) and 32-bit ("train", the default for real runs).
The mode only affects newly created tensors; ops follow their inputs.
"""

from __future__ import annotations

import numpy as np

_DTYPE = np.float64


def set_mode(mode: str) -> None:
    """Select global precision: 'test' -> float64, 'train' -> float32."""
    global _DTYPE
    if mode == "test":
        _DTYPE = np.float64
    elif mode == "train":
        _DTYPE = np.float32
    else:
        raise ValueError(f"unknown precision mode {mode!r}")


def current_dtype():
    return _DTYPE


class Tensor:
    """A dense array with an optional gradient slot.

    ``requires_grad`` marks trainable leaves. Tensors created by ops carry
    ``path=True`` when any input can reach a trainable leaf; gradients are
    only propagated along such paths and are materialized exclusively on
    requires-grad leaves (frozen tensors never allocate a grad).
    """

    __slots__ = ("values", "requires_grad", "grad", "path", "name")

    def __init__(self, values, requires_grad=False, name=""):
        self.values = np.asarray(values, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.path = self.requires_grad
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def detach_values(self):
        return self.values.copy()

    def __repr__(self):
        flag = "param" if self.requires_grad else "const"
        return f"Tensor({self.name or 'anon'}, shape={self.values.shape}, {flag})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes = []

    def _record(self, op, inputs, out_values, backward):
        out = Tensor.__new__(Tensor)
        out.values = out_values
        out.requires_grad = False
        out.grad = None
        out.path = any(t.path for t in inputs)
        out.name = ""
        if out.path:
            self.nodes.append(_Node(op, inputs, out, backward))
        return out

    # -- primitives ------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
            raise ValueError(f"matmul shape mismatch {a.values.shape} @ {b.values.shape}")
        out = a.values @ b.values

        def backward(g, grads):
            if a.path:
                _acc(grads, a, g @ b.values.T)
            if b.path:
                _acc(grads, b, a.values.T @ g)

        return self._record("matmul", (a, b), out, backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; b may be a broadcastable row (1,n) or column (m,1)."""
        av, bv = a.values, b.values
        if av.shape != bv.shape:
            ok = (
                av.ndim == 2
                and bv.ndim == 2
                and (
                    (bv.shape[0] == 1 and bv.shape[1] == av.shape[1])
                    or (bv.shape[1] == 1 and bv.shape[0] == av.shape[0])
                )
            )
            if not ok:
                raise ValueError(f"add shape mismatch {av.shape} + {bv.shape}")
        out = av + bv

        def backward(g, grads):
            if a.path:
                _acc(grads, a, g)
            if b.path:
                gb = g
                if bv.shape != g.shape:
                    if bv.shape[0] == 1:
                        gb = g.sum(axis=0, keepdims=True)
                    else:
                        gb = g.sum(axis=1, keepdims=True)
                _acc(grads, b, gb)

        return self._record("add", (a, b), out, backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        out = a.values * c

        def backward(g, grads):
            if a.path:
                _acc(grads, a, g * c)

        return self._record("scale", (a,), out, backward)

    def gelu(self, a: Tensor) -> Tensor:
        x = a.values
        k = np.sqrt(2.0 / np.pi)
        inner = k * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def backward(g, grads):
            if a.path:
                dinner = k * (1.0 + 3 * 0.044715 * x**2)
                da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
                _acc(grads, a, g * da)

        return self._record("gelu", (a,), out, backward)

    def tanh(self, a: Tensor) -> Tensor:
        t = np.tanh(a.values)

        def backward(g, grads):
            if a.path:
                _acc(grads, a, g * (1.0 - t**2))

        return self._record("tanh", (a,), t, backward)

    def softmax_rows(self, a: Tensor) -> Tensor:
        x = a.values
        if x.ndim != 2:
            raise ValueError(f"softmax_rows wants a matrix, got shape {x.shape}")
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=1, keepdims=True)

        def backward(g, grads):
            if a.path:
                dot = (g * s).sum(axis=1, keepdims=True)
                _acc(grads, a, s * (g - dot))

        return self._record("softmax_rows", (a,), s, backward)

    def layernorm(self, a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
        x = a.values
        if x.ndim != 2:
            raise ValueError(f"layernorm wants a matrix, got shape {x.shape}")
        if gamma.values.shape != (1, x.shape[1]) or beta.values.shape != (1, x.shape[1]):
            raise ValueError(
                f"layernorm affine shapes {gamma.values.shape}/{beta.values.shape} "
                f"do not match row width {x.shape[1]}"
            )
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        out = xhat * gamma.values + beta.values

        def backward(g, grads):
            if gamma.path:
                _acc(grads, gamma, (g * xhat).sum(axis=0, keepdims=True))
            if beta.path:
                _acc(grads, beta, g.sum(axis=0, keepdims=True))
            if a.path:
                gx = g * gamma.values
                m1 = gx.mean(axis=1, keepdims=True)
                m2 = (gx * xhat).mean(axis=1, keepdims=True)
                _acc(grads, a, inv * (gx - m1 - xhat * m2))

        return self._record("layernorm", (a, gamma, beta), out, backward)

    def mse_sum(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.shape != b.values.shape:
            raise ValueError(f"mse_sum shape mismatch {a.values.shape} vs {b.values.shape}")
        diff = a.values - b.values
        out = np.array([[np.sum(diff * diff)]], dtype=a.values.dtype)

        def backward(g, grads):
            gs = g.reshape(())  # scalar
            if a.path:
                _acc(grads, a, 2.0 * gs * diff)
            if b.path:
                _acc(grads, b, -2.0 * gs * diff)

        return self._record("mse_sum", (a, b), out, backward)

    # -- structural helpers ----------------------------------------------

    def transpose(self, a: Tensor) -> Tensor:
        out = a.values.T.copy()

        def backward(g, grads):
            if a.path:
                _acc(grads, a, g.T)

        return self._record("transpose", (a,), out, backward)

    def slice_rows(self, a: Tensor, start: int, stop: int) -> Tensor:
        out = a.values[start:stop].copy()

        def backward(g, grads):
            if a.path:
                full = np.zeros_like(a.values)
                full[start:stop] = g
                _acc(grads, a, full)

        return self._record("slice_rows", (a,), out, backward)

    def slice_cols(self, a: Tensor, start: int, stop: int) -> Tensor:
        out = a.values[:, start:stop].copy()

        def backward(g, grads):
            if a.path:
                full = np.zeros_like(a.values)
                full[:, start:stop] = g
                _acc(grads, a, full)

        return self._record("slice_cols", (a,), out, backward)

    def concat_cols(self, parts) -> Tensor:
        parts = tuple(parts)
        widths = [p.values.shape[1] for p in parts]
        out = np.concatenate([p.values for p in parts], axis=1)

        def backward(g, grads):
            ofs = 0
            for p, w in zip(parts, widths):
                if p.path:
                    _acc(grads, p, g[:, ofs : ofs + w])
                ofs += w

        return self._record("concat_cols", parts, out, backward)

    def mean_rows(self, a: Tensor) -> Tensor:
        """Mean over rows: (m, n) -> (1, n)."""
        m = a.values.shape[0]
        out = a.values.mean(axis=0, keepdims=True)

        def backward(g, grads):
            if a.path:
                _acc(grads, a, np.repeat(g, m, axis=0) / m)

        return self._record("mean_rows", (a,), out, backward)


def _acc(grads, tensor, g):
    key = id(tensor)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse-topological gradient accumulation from a scalar loss.

    Adds into ``t.grad`` for every requires-grad leaf reachable from the
    loss, so successive calls accumulate (zero_grad between steps).
    """
    if loss.values.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        node.backward(g, grads)
        for t in node.inputs:
            if t.requires_grad and id(t) in grads:
                contrib = grads.pop(id(t))
                t.grad = contrib if t.grad is None else t.grad + contrib
