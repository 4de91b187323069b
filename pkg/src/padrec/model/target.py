"""Decoder-only target transformer: training forward, cached decoding,
batched tree verification, sampling, and the autoregressive baseline."""

import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from padrec.errors import RangeError, StructureError
from padrec.numkit import kernels
from padrec.numkit import tensor as T
from padrec.numkit.rng import Rng, derive
from padrec.model.config import TargetConfig
from padrec.model.layers import (
    INIT_STD,
    KvCache,
    LayerView,
    causal_allow,
    init_layer_tensors,
    run_rows,
    tape_layer_forward,
)


@dataclass
class StepOut:
    """Target output rows: logits over S and the post-final-norm feature."""

    logits: np.ndarray  # (n, S) or (S,)
    feature: np.ndarray  # (n, d) or (d,)


@dataclass
class GenOut:
    tokens: np.ndarray  # emitted tokens (prompt excluded), EOS included if hit
    wall_ms: float
    target_calls: int


def probs_f64(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Canonical f64 distribution used by sampling and verification alike."""
    z = np.asarray(logits, dtype=np.float64)
    if temperature == 0.0:
        p = np.zeros_like(z)
        p[int(np.argmax(z))] = 1.0
        return p
    e = np.exp((z - z.max()) / temperature)
    return e / e.sum()


def sample_token(logits: np.ndarray, temperature: float, rng: Rng) -> int:
    """T=0 argmax (lowest-id ties); T>0 one-uniform inverse-CDF over ids ascending."""
    if temperature == 0.0:
        return int(np.argmax(logits))
    return kernels.sample_from_probs(probs_f64(logits, temperature), rng.uniform())


class TargetModel:
    """Owns the parameter tensors; caches belong to callers (one per session)."""

    def __init__(self, config: TargetConfig, params: "OrderedDict[str, T.Tensor]"):
        self.config = config
        self.params = params
        self._views = [
            LayerView(params, f"layers.{i}.") for i in range(config.n_layers)
        ]

    # -- construction -------------------------------------------------------

    @classmethod
    def from_tensors(cls, config: TargetConfig, arrays: dict) -> "TargetModel":
        params: "OrderedDict[str, T.Tensor]" = OrderedDict()
        for name, arr in arrays.items():
            params[name] = T.param(arr, dtype=arr.dtype)
        return cls(config, params)

    def set_trainable(self, flag: bool) -> None:
        for t in self.params.values():
            t.requires_grad = flag
            if not flag:
                t.grad = None

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    # -- shared pieces ------------------------------------------------------

    @property
    def emb(self) -> T.Tensor:
        return self.params["tok_emb"]

    def head_t(self) -> np.ndarray:
        """Tied head: embedding transposed (d, S)."""
        return np.ascontiguousarray(self.emb.data.T)

    def embed_rows(self, tokens: np.ndarray, positions: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise RangeError("token id outside vocab")
        if positions.size and positions.max() >= self.config.max_len:
            raise RangeError(f"position {positions.max()} >= max_len {self.config.max_len}")
        return self.emb.data[tokens] + self.params["pos_emb"].data[positions]

    def new_cache(self) -> KvCache:
        c = self.config
        return KvCache(c.n_layers, c.max_len, c.n_heads, c.d_head)

    # -- training forward (tape) -------------------------------------------

    def forward_train(self, tokens: np.ndarray):
        """Full causal forward -> (logits (L,S), features (L,d)) tape tensors."""
        tokens = np.asarray(tokens, dtype=np.int64)
        n = tokens.shape[0]
        if n > self.config.max_len:
            raise RangeError(f"stream length {n} > max_len {self.config.max_len}")
        pos = np.arange(n)
        x = T.add(T.take_rows(self.emb, tokens), T.take_rows(self.params["pos_emb"], pos))
        allow = causal_allow(n)
        for i in range(self.config.n_layers):
            w = {f: self.params[f"layers.{i}.{f}"] for f in
                 ("wq", "wk", "wv", "wo", "norm1", "norm2", "w1", "w2")}
            x, _, _ = tape_layer_forward(x, w, allow, self.config.n_heads)
        features = T.rmsnorm(x, self.params["final_norm"])
        logits = T.matmul(features, T.transpose2d(self.emb))
        return logits, features

    def forward_train_many(self, streams):
        return [self.forward_train(s) for s in streams]

    # -- inference ----------------------------------------------------------

    def _finish_rows(self, y: np.ndarray) -> StepOut:
        feats, _ = kernels.rmsnorm_rows(y, self.params["final_norm"].data)
        logits = kernels.mm(feats, self.head_t())
        return StepOut(logits=logits, feature=feats)

    def prefill(self, cache: KvCache, tokens) -> StepOut:
        """Append a committed chain to the cache; returns per-row outputs."""
        tokens = np.asarray(tokens, dtype=np.int64)
        n = tokens.shape[0]
        if n == 0:
            d = self.config.d_model
            return StepOut(logits=np.zeros((0, self.config.vocab_size), np.float32),
                           feature=np.zeros((0, d), np.float32))
        positions = cache.length + np.arange(n)
        x = self.embed_rows(tokens, positions)
        y, _ = run_rows(self._views, x, self.config.n_heads, cache, write=True)
        return self._finish_rows(y)

    def decode_step(self, token: int, cache: KvCache) -> StepOut:
        """One cached autoregressive step; extends the cache by one row."""
        out = self.prefill(cache, np.array([token], dtype=np.int64))
        return StepOut(logits=out.logits[0], feature=out.feature[0])

    def verify_batch(self, tokens, ancestor_allow: np.ndarray, positions, cache: KvCache):
        """Score a candidate tree in one read-only pass.

        ancestor_allow: (n,n) bool; row i marks i's ancestors within the batch
        plus itself. Returns (StepOut rows, staged per-layer (k, v)) — the
        cache is not modified; commit adopts staged rows later.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.int64)
        n = tokens.shape[0]
        if ancestor_allow.shape != (n, n):
            raise StructureError(f"ancestor mask {ancestor_allow.shape} for {n} nodes")
        if not ancestor_allow.diagonal().all():
            raise StructureError("ancestor mask must include self")
        for i in range(n):
            js = np.nonzero(ancestor_allow[i, :i])[0]
            if ancestor_allow[i, i + 1:].any():
                raise StructureError(f"node {i} attends a later node")
            for j in js:
                if (ancestor_allow[j] & ~ancestor_allow[i]).any():
                    raise StructureError(f"mask not lower-closed at ({i},{j})")
        x = self.embed_rows(tokens, positions)
        y, staged = run_rows(
            self._views, x, self.config.n_heads, cache,
            allow_tail=ancestor_allow, write=False,
        )
        return self._finish_rows(y), staged

    def generate_ar(self, prompt, max_new: int, temperature: float, rng: Rng) -> GenOut:
        """Plain cached decoding; the speedup denominator. One call per token."""
        prompt = np.asarray(prompt, dtype=np.int64)
        if prompt.size == 0:
            raise RangeError("empty prompt")
        from padrec.tokenspace import EOS

        cache = self.new_cache()
        self.prefill(cache, prompt[:-1])
        pending = int(prompt[-1])
        emitted = []
        calls = 0
        tick = time.perf_counter()
        while len(emitted) < max_new:
            out = self.decode_step(pending, cache)
            calls += 1
            tok = sample_token(out.logits, temperature, rng)
            emitted.append(tok)
            if tok == EOS:
                break
            pending = tok
        wall_ms = (time.perf_counter() - tick) * 1e3
        return GenOut(tokens=np.array(emitted, dtype=np.int64), wall_ms=wall_ms, target_calls=calls)


def init_target(config: TargetConfig, seed: int) -> TargetModel:
    """Fresh target with tied embedding/head and unit norm gains."""
    rng = derive(seed, "target-init")
    params: "OrderedDict[str, T.Tensor]" = OrderedDict()
    params["tok_emb"] = T.param(rng.normals((config.vocab_size, config.d_model), INIT_STD))
    params["pos_emb"] = T.param(rng.normals((config.max_len, config.d_model), INIT_STD))
    for i in range(config.n_layers):
        for name, tensor in init_layer_tensors(rng, config.d_model, config.d_ff).items():
            params[f"layers.{i}.{name}"] = tensor
    params["final_norm"] = T.param(np.ones(config.d_model))
    return TargetModel(config, params)
