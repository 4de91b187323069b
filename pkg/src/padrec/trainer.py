"""Training loops: response-region CE for the target, multi-pass unrolled
distillation for the draft, and the frozen-feature collection step between
the two.

The draft loss runs b_train passes over every stream. Pass j re-fuses each
pair with the depth-j embedding and the previous pass's output feature at
the slot just before it, and attends across stacked per-pass keys so that
a key at offset o behind the query comes from pass max(1, j - o). That is
exactly the key layout speculative decoding produces at depth j, so the
draft trains against the feature drift it will see at inference.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from padrec.errors import ConfigError, InvariantError, RangeError
from padrec.model.layers import LAYER_FIELDS, tape_layer_forward
from padrec.numkit import kernels
from padrec.numkit import tensor as T
from padrec.numkit.optim import Adam
from padrec.numkit.rng import Rng, derive
from padrec.specdec import run_session

LAMBDA_AUX = 1.0
K_AUX = 8


def response_rows(t0: int, length: int) -> np.ndarray:
    """Query rows predicting tokens t0..end: tau in [t0-1, length-2]."""
    if not (1 <= t0 < length):
        raise RangeError(f"t0 {t0} outside stream of length {length}")
    return np.arange(t0 - 1, length - 1)


def _softmax_rows_f64(logits: np.ndarray) -> np.ndarray:
    x = logits.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# target training
# ---------------------------------------------------------------------------


def target_stream_loss(target, tokens: np.ndarray, t0: int) -> T.Tensor:
    """Mean CE over the response region of one stream (hard labels)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    logits, _ = target.forward_train(tokens)
    rows = response_rows(t0, tokens.size)
    sel = T.take_rows(logits, rows)
    p = np.zeros((rows.size, target.config.vocab_size), dtype=np.float64)
    p[np.arange(rows.size), tokens[rows + 1]] = 1.0
    return T.mean_all(T.ce_rows(sel, p))


def evaluate_ppl(target, streams) -> float:
    """exp(mean response-region CE) over streams, via the inference path."""
    tot, cnt = 0.0, 0
    for s in streams:
        toks = np.asarray(s.tokens, dtype=np.int64)
        cache = target.new_cache()
        out = target.prefill(cache, toks[:-1])
        rows = response_rows(s.t0, toks.size)
        p = np.zeros((rows.size, target.config.vocab_size), dtype=np.float32)
        p[np.arange(rows.size), toks[rows + 1]] = 1.0
        ce, _ = kernels.ce_rows_fwd(out.logits[rows], p)
        tot += float(ce.sum())
        cnt += rows.size
    return math.exp(tot / cnt)


def train_target(target, train_streams, valid_streams, epochs: int = 2,
                 lr: float = 1e-3, seed: int = 0, log_path=None,
                 log_every: int = 100, batch: int = 1) -> list:
    """Adam on response CE, gradients accumulated over `batch` streams per
    step; returns the log rows."""
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    target.set_trainable(True)
    opt = Adam(list(target.params.values()), lr)
    rows = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = list(train_streams)
        derive(seed, "target-train", epoch).shuffle(order)
        window = []
        epoch_losses = []
        for start in range(0, len(order), batch):
            chunk = order[start:start + batch]
            opt.zero_grad()
            for s in chunk:
                loss = target_stream_loss(target, s.tokens, s.t0)
                lval = float(loss.data)
                if not math.isfinite(lval):
                    raise InvariantError(f"target loss diverged at step {step + 1}")
                if len(chunk) > 1:
                    loss = T.scale(loss, 1.0 / len(chunk))
                loss.backward()
                window.append(lval)
                epoch_losses.append(lval)
            opt.step()
            step += 1
            if step % log_every == 0:
                rows.append((epoch, step, sum(window) / len(window), ""))
                window = []
        ppl = evaluate_ppl(target, valid_streams) if valid_streams else float("nan")
        rows.append((epoch, step, sum(epoch_losses) / len(epoch_losses), f"{ppl:.6f}"))
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "loss", "val_ppl"])
            for r in rows:
                w.writerow([r[0], r[1], f"{r[2]:.6f}", r[3]])
    return rows


# ---------------------------------------------------------------------------
# feature collection
# ---------------------------------------------------------------------------


@dataclass
class StreamFeatures:
    """Frozen teacher outputs for one stream: features at every position,
    logits only at the response-predicting rows."""

    tokens: np.ndarray       # (L,) int64
    t0: int
    features: np.ndarray     # (L, d) post-norm teacher features
    resp_logits: np.ndarray  # (L - t0, S) teacher logits at rows t0-1..L-2


def collect_features(target, streams) -> list:
    """One inference pass per stream; everything the draft loss needs."""
    bank = []
    for s in streams:
        toks = np.asarray(s.tokens, dtype=np.int64)
        cache = target.new_cache()
        out = target.prefill(cache, toks)
        rows = response_rows(s.t0, toks.size)
        bank.append(StreamFeatures(tokens=toks, t0=int(s.t0),
                                   features=out.feature,
                                   resp_logits=out.logits[rows]))
    return bank


# ---------------------------------------------------------------------------
# draft training
# ---------------------------------------------------------------------------


def draft_unrolled_loss(draft, sf: StreamFeatures, lam: float = LAMBDA_AUX,
                        k_aux: int = K_AUX, audit: bool = False):
    """Unrolled multi-pass loss for one stream.

    Returns (total loss tensor, per-depth loss floats, audit dict or None).
    audit captures per-pass masks, features, and per-row CE for tests."""
    toks = sf.tokens
    L = int(toks.size)
    B = draft.config.b_train
    n_p = L - 1  # pairs at positions 0..L-2, each predicting the next token
    resp = response_rows(sf.t0, L)
    m_resp = resp.size
    d = draft.d

    p_full = _softmax_rows_f64(sf.resp_logits)
    topk = np.argsort(-sf.resp_logits, axis=1, kind="stable")[:, :k_aux]
    p_k = np.take_along_axis(p_full, topk, axis=1)
    p_k = p_k / p_k.sum(axis=1, keepdims=True)

    e_rows = T.take_rows(draft.target.emb, toks[:n_p])
    slots = draft.slot_table[toks[:n_p]]
    head_t = T.transpose2d(draft.target.emb)
    feat_dtype = draft.target.emb.dtype
    zero_row = T.const(np.zeros((1, d), dtype=feat_dtype))
    teacher_prev = np.concatenate(
        [np.zeros((1, d), dtype=feat_dtype), sf.features[:n_p - 1].astype(feat_dtype)])
    f_prev = T.const(teacher_prev)

    off = np.arange(n_p)[:, None] - np.arange(n_p)[None, :]
    causal = off >= 0
    weights = {f: draft.params[f"draft.layer.{f}"] for f in LAYER_FIELDS}

    ext_k = ext_v = None
    d_prev = None
    per_depth = []
    info = {"n_pairs": n_p, "m_resp": m_resp, "per_pass": []} if audit else None
    for j in range(1, B + 1):
        if j > 1:
            f_prev = T.concat_rows([zero_row, T.take_rows(d_prev, np.arange(n_p - 1))])
        fused, _ = draft.fuse_tape(e_rows, f_prev, slots, depth=j)
        blocks = [causal & (np.maximum(1, j - off) == p) for p in range(1, j + 1)]
        allow = np.concatenate(blocks, axis=1)
        y, kh, vh = tape_layer_forward(
            fused, weights, allow, draft.n_heads,
            keys=None if ext_k is None else (ext_k, ext_v))
        feats = T.rmsnorm(y, draft.params["draft.out_norm"])
        logits_resp = T.matmul(T.take_rows(feats, resp), head_t)
        ce_full = T.ce_rows(logits_resp, p_full)
        ce_k = T.ce_rows(T.take_cols(logits_resp, topk), p_k)
        loss_j = T.scale(T.add(T.sum_all(ce_full), T.scale(T.sum_all(ce_k), lam)),
                         1.0 / m_resp)
        per_depth.append(loss_j)
        if audit:
            info["per_pass"].append({
                "depth": j, "allow": allow, "feats": feats.data,
                "ce": ce_full.data.copy(), "loss": float(loss_j.data),
                "loss_tensor": loss_j,
            })
        ext_k = kh if ext_k is None else T.concat_rows([ext_k, kh])
        ext_v = vh if ext_v is None else T.concat_rows([ext_v, vh])
        d_prev = feats
    total = per_depth[0]
    for lj in per_depth[1:]:
        total = T.add(total, lj)
    total = T.scale(total, 1.0 / B)
    return total, [float(l.data) for l in per_depth], info


def measure_tau(target, draft, streams, depth: int, width: int = 2,
                limit: int = 8) -> float:
    """Mean accepted-length over greedy sessions on the given streams."""
    taus = []
    for s in streams[:limit]:
        toks = np.asarray(s.tokens, dtype=np.int64)
        rep = run_session(target, draft, toks[:s.t0], max_new=toks.size - s.t0,
                          depth=depth, width=width, temperature=0.0, rng=Rng(0))
        taus.append(rep.tau)
    return sum(taus) / len(taus)


def train_draft(draft, bank, epochs: int = 2, lr: float = 1e-3, seed: int = 0,
                lam: float = LAMBDA_AUX, k_aux: int = K_AUX, log_path=None,
                log_every: int = 100, val_streams=None, val_width: int = 2) -> list:
    """Adam on the unrolled loss, draft parameters only; target stays frozen."""
    draft.target.set_trainable(False)
    opt = Adam(list(draft.params.values()), lr)
    B = draft.config.b_train
    rows = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = list(bank)
        derive(seed, "draft-train", epoch).shuffle(order)
        window = []
        epoch_rows = []
        for sf in order:
            opt.zero_grad()
            total, per_depth, _ = draft_unrolled_loss(draft, sf, lam=lam, k_aux=k_aux)
            lval = float(total.data)
            if not math.isfinite(lval):
                raise InvariantError(f"draft loss diverged at step {step + 1}")
            total.backward()
            if draft.target.emb.grad is not None:
                raise InvariantError("gradient leaked into the frozen target")
            opt.step()
            step += 1
            window.append((lval, per_depth))
            epoch_rows.append((lval, per_depth))
            if step % log_every == 0:
                rows.append((epoch, step, _mean_cols(window), ""))
                window = []
        val_tau = ""
        if val_streams:
            val_tau = f"{measure_tau(draft.target, draft, val_streams, depth=B, width=val_width):.4f}"
        rows.append((epoch, step, _mean_cols(epoch_rows), val_tau))
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "loss"]
                       + [f"loss_depth_{j}" for j in range(1, B + 1)] + ["val_tau"])
            for epoch, st, (mloss, mdepth), vt in rows:
                w.writerow([epoch, st, f"{mloss:.6f}"]
                           + [f"{v:.6f}" for v in mdepth] + [vt])
    return rows


def _mean_cols(entries):
    """entries: [(loss, [per-depth losses])] -> (mean loss, [mean per depth])."""
    n = len(entries)
    mloss = sum(e[0] for e in entries) / n
    depths = np.array([e[1] for e in entries])
    return mloss, [float(v) for v in depths.mean(axis=0)]
