"""Deterministic numeric kernels.

Contract: every reduction accumulates in f64 over ascending indices, one
element at a time. Results are therefore bitwise identical regardless of how
rows are grouped into batches, which is what lets batched tree verification
reproduce sequential decoding exactly. Kernels are compiled for whatever float
dtype they are handed (f32 in production, f64 for gradient checking).
"""

import math

import numpy as np
from numba import njit

from padrec.errors import ShapeError

# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


@njit(cache=True)
def _mm(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.empty((m, n), dtype=a.dtype)
    acc = np.empty(n, dtype=np.float64)
    for i in range(m):
        acc[:] = 0.0
        for t in range(k):
            av = np.float64(a[i, t])
            for j in range(n):
                acc[j] += av * np.float64(b[t, j])
        for j in range(n):
            out[i, j] = acc[j]
    return out


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(m,k) @ (k,n) -> (m,n), f64 accumulation left-to-right per output element."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul dtypes {a.dtype} x {b.dtype}")
    return _mm(np.ascontiguousarray(a), np.ascontiguousarray(b))


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------


@njit(cache=True)
def _softmax_rows(x, temperature):
    m, n = x.shape
    out = np.zeros((m, n), dtype=x.dtype)
    for i in range(m):
        if temperature == 0.0:
            best = 0
            for j in range(1, n):
                if x[i, j] > x[i, best]:
                    best = j
            out[i, best] = 1.0
        else:
            mx = np.float64(x[i, 0])
            for j in range(1, n):
                v = np.float64(x[i, j])
                if v > mx:
                    mx = v
            den = 0.0
            for j in range(n):
                den += math.exp((np.float64(x[i, j]) - mx) / temperature)
            for j in range(n):
                out[i, j] = math.exp((np.float64(x[i, j]) - mx) / temperature) / den
    return out


def softmax_rows(x: np.ndarray, temperature: float) -> np.ndarray:
    """Row softmax at a temperature; T=0 gives a one-hot at the argmax (lowest-id ties)."""
    if temperature < 0.0:
        raise ShapeError(f"negative temperature {temperature}")
    squeeze = x.ndim == 1
    x2 = np.ascontiguousarray(np.atleast_2d(x))
    out = _softmax_rows(x2, float(temperature))
    return out[0] if squeeze else out


@njit(cache=True)
def _ce_rows(logits, p):
    m, n = logits.shape
    ce = np.empty(m, dtype=np.float64)
    sm = np.empty((m, n), dtype=logits.dtype)
    for i in range(m):
        mx = np.float64(logits[i, 0])
        for j in range(1, n):
            v = np.float64(logits[i, j])
            if v > mx:
                mx = v
        den = 0.0
        for j in range(n):
            den += math.exp(np.float64(logits[i, j]) - mx)
        lse = mx + math.log(den)
        dot = 0.0
        for j in range(n):
            dot += np.float64(p[i, j]) * np.float64(logits[i, j])
            sm[i, j] = math.exp(np.float64(logits[i, j]) - mx) / den
        ce[i] = lse - dot
    return ce, sm


def ce_rows_fwd(logits: np.ndarray, p: np.ndarray):
    """Per-row CE(p, softmax(logits)) -> (ce (m,) f64, softmax (m,n)); p rows must sum to 1."""
    if logits.shape != p.shape or logits.ndim != 2:
        raise ShapeError(f"ce shapes {logits.shape} vs {p.shape}")
    return _ce_rows(np.ascontiguousarray(logits), np.ascontiguousarray(p))


# ---------------------------------------------------------------------------
# rmsnorm
# ---------------------------------------------------------------------------

RMS_EPS = 1e-6


@njit(cache=True)
def _rmsnorm_rows(x, gain):
    m, n = x.shape
    y = np.empty((m, n), dtype=x.dtype)
    inv = np.empty(m, dtype=np.float64)
    for i in range(m):
        ss = 0.0
        for j in range(n):
            v = np.float64(x[i, j])
            ss += v * v
        r = 1.0 / math.sqrt(ss / n + RMS_EPS)
        inv[i] = r
        for j in range(n):
            y[i, j] = np.float64(x[i, j]) * r * np.float64(gain[j])
    return y, inv


def rmsnorm_rows(x: np.ndarray, gain: np.ndarray):
    """Row RMS-norm: x / sqrt(mean(x^2)+eps) * gain -> (y, inv_rms (m,) f64)."""
    if x.ndim != 2 or gain.ndim != 1 or x.shape[1] != gain.shape[0]:
        raise ShapeError(f"rmsnorm shapes {x.shape} vs {gain.shape}")
    return _rmsnorm_rows(np.ascontiguousarray(x), np.ascontiguousarray(gain))


# ---------------------------------------------------------------------------
# attention (masked, multi-head, strict ascending-key traversal)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _attn_forward(q, k, v, allow, scale):
    nq, h, dh = q.shape
    lk = k.shape[0]
    out = np.zeros((nq, h, dh), dtype=q.dtype)
    probs = np.zeros((nq, h, lk), dtype=np.float64)
    for i in range(nq):
        for hh in range(h):
            mx = -1.0e300
            any_allowed = False
            for l in range(lk):
                if allow[i, l]:
                    s = 0.0
                    for d in range(dh):
                        s += np.float64(q[i, hh, d]) * np.float64(k[l, hh, d])
                    s *= scale
                    probs[i, hh, l] = s
                    if not any_allowed or s > mx:
                        mx = s
                    any_allowed = True
            if not any_allowed:
                for l in range(lk):
                    probs[i, hh, l] = 0.0
                continue
            den = 0.0
            for l in range(lk):
                if allow[i, l]:
                    den += math.exp(probs[i, hh, l] - mx)
            for l in range(lk):
                if allow[i, l]:
                    probs[i, hh, l] = math.exp(probs[i, hh, l] - mx) / den
                else:
                    probs[i, hh, l] = 0.0
            for d in range(dh):
                acc = 0.0
                for l in range(lk):
                    if allow[i, l]:
                        acc += probs[i, hh, l] * np.float64(v[l, hh, d])
                out[i, hh, d] = acc
    return out, probs


def attn_forward(q, k, v, allow, scale: float):
    """Masked attention: q (nq,H,dh), k/v (L,H,dh), allow (nq,L) -> (out (nq,H,dh), probs f64)."""
    if q.ndim != 3 or k.shape != v.shape or q.shape[1:] != k.shape[1:]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape}")
    if allow.shape != (q.shape[0], k.shape[0]):
        raise ShapeError(f"attention mask {allow.shape} for q{q.shape} k{k.shape}")
    return _attn_forward(
        np.ascontiguousarray(q),
        np.ascontiguousarray(k),
        np.ascontiguousarray(v),
        np.ascontiguousarray(allow.astype(np.uint8)),
        float(scale),
    )


@njit(cache=True)
def _attn_backward(dout, probs, q, k, v, allow, scale):
    nq, h, dh = q.shape
    lk = k.shape[0]
    dq = np.zeros((nq, h, dh), dtype=np.float64)
    dk = np.zeros((lk, h, dh), dtype=np.float64)
    dv = np.zeros((lk, h, dh), dtype=np.float64)
    dp = np.empty(lk, dtype=np.float64)
    for i in range(nq):
        for hh in range(h):
            sdot = 0.0
            for l in range(lk):
                if allow[i, l]:
                    acc = 0.0
                    for d in range(dh):
                        acc += np.float64(dout[i, hh, d]) * np.float64(v[l, hh, d])
                    dp[l] = acc
                    sdot += probs[i, hh, l] * acc
            for l in range(lk):
                if allow[i, l]:
                    ds = probs[i, hh, l] * (dp[l] - sdot)
                    for d in range(dh):
                        dq[i, hh, d] += ds * np.float64(k[l, hh, d]) * scale
                        dk[l, hh, d] += ds * np.float64(q[i, hh, d]) * scale
                        dv[l, hh, d] += probs[i, hh, l] * np.float64(dout[i, hh, d])
    return dq, dk, dv


def attn_backward(dout, probs, q, k, v, allow, scale: float):
    """VJP of attn_forward -> (dq, dk, dv) as f64 arrays."""
    return _attn_backward(
        np.ascontiguousarray(dout),
        probs,
        np.ascontiguousarray(q),
        np.ascontiguousarray(k),
        np.ascontiguousarray(v),
        np.ascontiguousarray(allow.astype(np.uint8)),
        float(scale),
    )


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sigmoid(x):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        v = np.float64(flat_in[i])
        if v >= 0.0:
            flat_out[i] = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            flat_out[i] = e / (1.0 + e)
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise stable logistic function."""
    return _sigmoid(np.ascontiguousarray(x))


def silu(x: np.ndarray) -> np.ndarray:
    """Elementwise x * sigmoid(x)."""
    return (x * sigmoid(x)).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------


def sample_from_probs(p: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: smallest id whose cumulative probability exceeds u."""
    cum = np.cumsum(p.astype(np.float64))
    idx = int(np.searchsorted(cum, u, side="right"))
    if idx >= p.shape[0]:  # float shortfall at the tail
        nz = np.nonzero(p > 0)[0]
        idx = int(nz[-1]) if nz.size else p.shape[0] - 1
    return idx


def assert_finite(x: np.ndarray, what: str) -> None:
    """Raise if any entry is NaN/Inf; used at public op boundaries."""
    if not np.all(np.isfinite(x)):
        from padrec.errors import InvariantError

        raise InvariantError(f"non-finite values in {what}")
