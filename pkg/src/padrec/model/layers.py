"""Shared pre-norm decoder layer: tape forward for training, array forward
with KV caching for inference. Both paths call the same numkit kernels, so a
token decoded incrementally is bitwise-equal to the same position in a full
forward pass.
"""

import math

import numpy as np

from padrec.errors import RangeError
from padrec.numkit import kernels
from padrec.numkit import tensor as T
from padrec.numkit.rng import Rng

INIT_STD = 0.02

LAYER_FIELDS = ("wq", "wk", "wv", "wo", "norm1", "norm2", "w1", "w2")


def init_layer_tensors(rng: Rng, d: int, d_ff: int) -> dict:
    """Fresh decoder-layer weights: N(0, 0.02^2) matrices, unit norm gains."""
    return {
        "wq": T.param(rng.normals((d, d), INIT_STD)),
        "wk": T.param(rng.normals((d, d), INIT_STD)),
        "wv": T.param(rng.normals((d, d), INIT_STD)),
        "wo": T.param(rng.normals((d, d), INIT_STD)),
        "norm1": T.param(np.ones(d)),
        "norm2": T.param(np.ones(d)),
        "w1": T.param(rng.normals((d, d_ff), INIT_STD)),
        "w2": T.param(rng.normals((d_ff, d), INIT_STD)),
    }


# ---------------------------------------------------------------------------
# training path (tape)
# ---------------------------------------------------------------------------


def tape_layer_forward(x, weights: dict, allow: np.ndarray, n_heads: int, keys=None):
    """One pre-norm block over tape tensors.

    x: (n, d) query rows. keys: optional (m,H,dh) key/value tensor pair
    prepended before this block's own rows (stacked-KV training); when
    given, allow is (n, m+n). Returns (y (n,d), kh, vh).
    """
    n, d = x.shape
    dh = d // n_heads
    h = T.rmsnorm(x, weights["norm1"])
    q = T.reshape(T.matmul(h, weights["wq"]), (n, n_heads, dh))
    kh = T.reshape(T.matmul(h, weights["wk"]), (n, n_heads, dh))
    vh = T.reshape(T.matmul(h, weights["wv"]), (n, n_heads, dh))
    if keys is None:
        k_in, v_in = kh, vh
    else:
        k_in = T.concat_rows([keys[0], kh])
        v_in = T.concat_rows([keys[1], vh])
    att = T.attention(q, k_in, v_in, allow, 1.0 / math.sqrt(dh))
    x = T.add(x, T.matmul(T.reshape(att, (n, d)), weights["wo"]))
    h2 = T.rmsnorm(x, weights["norm2"])
    x = T.add(x, T.matmul(T.silu(T.matmul(h2, weights["w1"])), weights["w2"]))
    return x, kh, vh


def causal_allow(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


# ---------------------------------------------------------------------------
# inference path (arrays + KV cache)
# ---------------------------------------------------------------------------


class KvCache:
    """Per-layer key/value rows for a committed prefix; single-owner."""

    def __init__(self, n_layers: int, cap: int, n_heads: int, d_head: int):
        self.k = [np.zeros((cap, n_heads, d_head), dtype=np.float32) for _ in range(n_layers)]
        self.v = [np.zeros((cap, n_heads, d_head), dtype=np.float32) for _ in range(n_layers)]
        self.length = 0
        self.cap = cap

    def append_staged(self, staged: list, rows) -> None:
        """Adopt selected rows of a staged (read-only) forward, in given order."""
        rows = np.asarray(rows, dtype=np.int64)
        m = rows.shape[0]
        if self.length + m > self.cap:
            raise RangeError(f"kv cache overflow: {self.length}+{m} > {self.cap}")
        for layer, (sk, sv) in enumerate(staged):
            self.k[layer][self.length:self.length + m] = sk[rows]
            self.v[layer][self.length:self.length + m] = sv[rows]
        self.length += m

    def truncate(self, n: int) -> None:
        if not (0 <= n <= self.length):
            raise RangeError(f"truncate {n} outside [0, {self.length}]")
        self.length = n


class LayerView:
    """Read-only ndarray views of one layer's weight tensors."""

    __slots__ = LAYER_FIELDS

    def __init__(self, tensors: dict, prefix: str):
        for f in LAYER_FIELDS:
            setattr(self, f, tensors[f"{prefix}{f}"].data)


def run_rows(
    layers: list,
    x: np.ndarray,
    n_heads: int,
    cache: KvCache,
    spec_kv=None,
    allow_tail=None,
    write: bool = False,
):
    """Push n input rows through the stack against cache + staged + self keys.

    allow_tail: (n, m+n) bool over [staged spec rows | this batch]; cache rows
    are always visible. None means plain causal over the batch (no spec rows).
    Returns (y (n,d) pre-final-norm, staged [(k,v) per layer]).
    """
    n, d = x.shape
    dh = d // n_heads
    if allow_tail is None:
        allow_tail = causal_allow(n)
    m = allow_tail.shape[1] - n
    if m != (0 if spec_kv is None else spec_kv[0][0].shape[0]):
        raise RangeError(f"allow tail covers {m} spec rows, staged {0 if spec_kv is None else spec_kv[0][0].shape[0]}")
    allow = np.ones((n, cache.length + m + n), dtype=bool)
    allow[:, cache.length:] = allow_tail
    staged = []
    for li, w in enumerate(layers):
        h, _ = kernels.rmsnorm_rows(x, w.norm1)
        q = kernels.mm(h, w.wq).reshape(n, n_heads, dh)
        kh = kernels.mm(h, w.wk).reshape(n, n_heads, dh)
        vh = kernels.mm(h, w.wv).reshape(n, n_heads, dh)
        if spec_kv is not None:
            keys = np.concatenate([cache.k[li][:cache.length], spec_kv[li][0], kh])
            vals = np.concatenate([cache.v[li][:cache.length], spec_kv[li][1], vh])
        else:
            keys = np.concatenate([cache.k[li][:cache.length], kh])
            vals = np.concatenate([cache.v[li][:cache.length], vh])
        att, _ = kernels.attn_forward(q, keys, vals, allow, 1.0 / math.sqrt(dh))
        x = x + kernels.mm(att.reshape(n, d), w.wo)
        h2, _ = kernels.rmsnorm_rows(x, w.norm2)
        x = x + kernels.mm(kernels.silu(kernels.mm(h2, w.w1)), w.w2)
        staged.append((kh, vh))
    if write:
        for li in range(len(layers)):
            cache_k, cache_v = staged[li]
            if cache.length + n > cache.cap:
                raise RangeError(f"kv cache overflow at layer {li}")
            cache.k[li][cache.length:cache.length + n] = cache_k
            cache.v[li][cache.length:cache.length + n] = cache_v
        cache.length += n
    return x, staged
