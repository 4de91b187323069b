"""Reverse-mode autodiff tape over numpy arrays.

Forward math runs through the deterministic kernels; each op records a VJP
closure. backward() walks the tape once in reverse topological order and
releases non-leaf gradients as it goes.
"""

from __future__ import annotations

import numpy as np

from padrec.errors import InvariantError, ShapeError
from padrec.numkit import kernels

_DEBUG_FINITE = False


def set_debug_finite(flag: bool) -> None:
    """When on, every op output is scanned for NaN/Inf (slow; tests only)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(flag)


class Tensor:
    """A tape node: value, optional grad, and the VJP that feeds its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward
        self._op = op
        if _DEBUG_FINITE and self.data.dtype.kind == "f":
            kernels.assert_finite(self.data, op)

    # -- conveniences -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, rg={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    # -- backward pass ------------------------------------------------------

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise ShapeError(f"grad shape {g.shape} for value {self.data.shape}")
        g = g.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse pass from a scalar loss; leaf grads survive, interior ones are freed."""
        if self.data.size != 1:
            raise InvariantError(f"backward needs a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if not node.is_leaf:
                node.grad = None

    def grad_or_zero(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)


def _toposort(root: Tensor):
    """Iterative DFS postorder over grad-requiring nodes; grey-revisit means a cycle."""
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 0 = on stack (grey), 1 = done (black)
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        nid = id(node)
        if processed:
            state[nid] = 1
            order.append(node)
            continue
        st = state.get(nid)
        if st == 1:
            continue
        if st == 0:
            raise InvariantError("cycle in tape")
        state[nid] = 0
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and state.get(id(p)) != 1:
                if state.get(id(p)) == 0:
                    raise InvariantError("cycle in tape")
                stack.append((p, False))
    return order


def param(data, dtype=np.float32) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def const(data, dtype=None) -> Tensor:
    """A constant leaf (no grad ever)."""
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(arr, requires_grad=False)


def _make(data, parents, backward, op):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=rg, parents=parents if rg else (),
                  backward=backward if rg else None, op=op)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def bwd(g):
        a.accumulate(g)
        b.accumulate(g)

    return _make(out_data, (a, b), bwd, "add")


def add_rowvec(x: Tensor, r: Tensor) -> Tensor:
    """(m,n) + (n,) broadcast over rows."""
    if x.data.ndim != 2 or r.data.shape != (x.shape[1],):
        raise ShapeError(f"add_rowvec {x.shape} + {r.shape}")
    out_data = x.data + r.data[None, :]

    def bwd(g):
        x.accumulate(g)
        r.accumulate(g.sum(axis=0))

    return _make(out_data, (x, r), bwd, "add_rowvec")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def bwd(g):
        a.accumulate(g * b.data)
        b.accumulate(g * a.data)

    return _make(out_data, (a, b), bwd, "mul")


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = x.data * np.asarray(s, dtype=x.dtype)

    def bwd(g):
        x.accumulate(g * np.asarray(s, dtype=x.dtype))

    return _make(out_data, (x,), bwd, "scale")


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """x * s where s is a scalar tensor (shape ())."""
    if s.data.size != 1:
        raise ShapeError(f"scale_by wants scalar, got {s.shape}")
    out_data = x.data * s.data

    def bwd(g):
        x.accumulate(g * s.data)
        s.accumulate(np.asarray((g.astype(np.float64) * x.data).sum(), dtype=s.dtype).reshape(s.data.shape))

    return _make(out_data, (x, s), bwd, "scale_by")


def outer(u: Tensor, w: Tensor) -> Tensor:
    """(m,) x (n,) -> (m,n)."""
    if u.data.ndim != 1 or w.data.ndim != 1:
        raise ShapeError(f"outer {u.shape} x {w.shape}")
    out_data = u.data[:, None] * w.data[None, :]

    def bwd(g):
        u.accumulate(g @ w.data)
        w.accumulate(g.T @ u.data)

    return _make(out_data, (u, w), bwd, "outer")


# ---------------------------------------------------------------------------
# matmul and shape ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = kernels.mm(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(kernels.mm(g, np.ascontiguousarray(b.data.T)))
        if b.requires_grad:
            b.accumulate(kernels.mm(np.ascontiguousarray(a.data.T), g))

    return _make(out_data, (a, b), bwd, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def bwd(g):
        x.accumulate(g.reshape(x.data.shape))

    return _make(out_data, (x,), bwd, "reshape")


def transpose2d(x: Tensor) -> Tensor:
    out_data = np.ascontiguousarray(x.data.T)

    def bwd(g):
        x.accumulate(np.ascontiguousarray(g.T))

    return _make(out_data, (x,), bwd, "transpose2d")


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather: out[i] = x[idx[i]]; grads scatter-add back."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            x.accumulate(dx)

    return _make(out_data, (x,), bwd, "take_rows")


def take_cols(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row column gather: out[i, j] = x[i, idx[i, j]]."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"take_cols {x.shape} with idx {idx.shape}")
    out_data = np.take_along_axis(x.data, idx, axis=1)
    rows = np.arange(idx.shape[0])[:, None]

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, (rows, idx), g)
            x.accumulate(dx)

    return _make(out_data, (x,), bwd, "take_cols")


def concat_rows(parts) -> Tensor:
    """Concatenate along axis 0."""
    parts = list(parts)
    out_data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def bwd(g):
        ofs = 0
        for p, n in zip(parts, sizes):
            p.accumulate(g[ofs:ofs + n])
            ofs += n

    return _make(out_data, tuple(parts), bwd, "concat_rows")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols {a.shape} + {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=1)
    na = a.shape[1]

    def bwd(g):
        a.accumulate(g[:, :na])
        b.accumulate(g[:, na:])

    return _make(out_data, (a, b), bwd, "concat_cols")


# ---------------------------------------------------------------------------
# nonlinearities and norms
# ---------------------------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    s = kernels.sigmoid(x.data)

    def bwd(g):
        x.accumulate(g * s * (1.0 - s))

    return _make(s, (x,), bwd, "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = kernels.sigmoid(x.data)
    out_data = (x.data * s).astype(x.dtype, copy=False)

    def bwd(g):
        x.accumulate(g * (s * (1.0 + x.data * (1.0 - s))).astype(x.dtype, copy=False))

    return _make(out_data, (x,), bwd, "silu")


def rmsnorm(x: Tensor, gain: Tensor) -> Tensor:
    """Row RMS-norm with learned gain; matches kernels.rmsnorm_rows bitwise."""
    y, inv = kernels.rmsnorm_rows(x.data, gain.data)
    n = x.shape[1]

    def bwd(g):
        g64 = g.astype(np.float64)
        x64 = x.data.astype(np.float64)
        if gain.requires_grad:
            gain.accumulate((g64 * x64 * inv[:, None]).sum(axis=0).astype(gain.dtype))
        if x.requires_grad:
            gg = g64 * gain.data.astype(np.float64)[None, :]
            dot = (gg * x64).sum(axis=1)
            dx = inv[:, None] * gg - (inv ** 3 / n * dot)[:, None] * x64
            x.accumulate(dx.astype(x.dtype))

    return _make(y, (x, gain), bwd, "rmsnorm")


def attention(q: Tensor, k: Tensor, v: Tensor, allow: np.ndarray, scale_val: float) -> Tensor:
    """Masked multi-head attention; q (m,H,dh), k/v (L,H,dh), allow (m,L) bool."""
    out_data, probs = kernels.attn_forward(q.data, k.data, v.data, allow, scale_val)

    def bwd(g):
        dq, dk, dv = kernels.attn_backward(g, probs, q.data, k.data, v.data, allow, scale_val)
        q.accumulate(dq.astype(q.dtype))
        k.accumulate(dk.astype(k.dtype))
        v.accumulate(dv.astype(v.dtype))

    return _make(out_data, (q, k, v), bwd, "attention")


def ce_rows(logits: Tensor, p: np.ndarray) -> Tensor:
    """Per-row cross-entropy against fixed teacher probabilities -> (m,) f64 tensor."""
    p_cast = np.asarray(p, dtype=logits.dtype)
    ce, sm = kernels.ce_rows_fwd(logits.data, p_cast)

    def bwd(g):
        diff = sm.astype(np.float64) - p_cast.astype(np.float64)
        logits.accumulate((diff * g[:, None]).astype(logits.dtype))

    return _make(ce, (logits,), bwd, "ce_rows")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum(), dtype=x.dtype)

    def bwd(g):
        x.accumulate(np.full_like(x.data, g))

    return _make(out_data, (x,), bwd, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out_data = np.asarray(x.data.sum() / n, dtype=x.dtype)

    def bwd(g):
        x.accumulate(np.full_like(x.data, g / n))

    return _make(out_data, (x,), bwd, "mean_all")


def dot_rows(x: Tensor, w: Tensor) -> Tensor:
    """(m,d) . (d,) -> (m,)."""
    return reshape(matmul(x, reshape(w, (w.data.shape[0], 1))), (x.shape[0],))
