"""Single-layer draft over fused inputs: slot embeddings (IPE), depth
embeddings (SPE), an item gate and a context-driven step gate, all riding on
the target's frozen embedding/head.

Input pairing convention: the pair at position t couples the token embedding
e_{x_t} with the feature at the previous position f_{t-1} (zeros at t=0); the
layer output at that pair estimates the target feature f_t, and the frozen
head over it scores x_{t+1}.
"""

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from padrec.errors import ConfigError, RangeError, StructureError
from padrec.numkit import kernels
from padrec.numkit import tensor as T
from padrec.numkit.rng import Rng, derive
from padrec.model.config import DraftConfig
from padrec.model.layers import (
    INIT_STD,
    KvCache,
    LayerView,
    init_layer_tensors,
    run_rows,
)
from padrec.model.target import probs_f64

ABLATIONS = ("full", "no-ipe", "no-spe", "no-both-gates", "no-ipe-gate", "no-spe-gate", "baseline")


def _uses_ipe(mode: str) -> bool:
    return mode not in ("no-ipe", "baseline")


def _uses_spe(mode: str) -> bool:
    return mode not in ("no-spe", "baseline")


def _item_gate_fixed(mode: str) -> bool:
    return mode in ("no-ipe-gate", "no-both-gates")


def _step_gate_fixed(mode: str) -> bool:
    return mode in ("no-spe-gate", "no-both-gates")


class DraftModel:
    """Trainable add-on parameters plus a read-only view of the target."""

    def __init__(self, config: DraftConfig, target, slot_table: np.ndarray, params):
        if config.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {config.ablation!r}")
        self.config = config
        self.target = target
        self.slot_table = np.asarray(slot_table, dtype=np.int64)
        if self.slot_table.shape[0] != target.config.vocab_size:
            raise ConfigError("slot table does not cover the vocabulary")
        if self.slot_table.max() >= config.n_slots:
            raise ConfigError("slot table points past the IPE table")
        self.params = params
        self.d = target.config.d_model
        self.n_heads = target.config.n_heads
        self.vocab_size = target.config.vocab_size
        self._view = LayerView(params, "draft.layer.")

    # -- construction --------------------------------------------------------

    @classmethod
    def from_tensors(cls, config: DraftConfig, target, slot_table, arrays: dict) -> "DraftModel":
        params: "OrderedDict[str, T.Tensor]" = OrderedDict()
        for name, arr in arrays.items():
            params[name] = T.param(arr, dtype=arr.dtype)
        return cls(config, target, slot_table, params)

    def trainable(self) -> list:
        return list(self.params.items())

    def param_groups(self) -> dict:
        """Named parameter groups for gradient checks and reporting."""
        layer = [(n, t) for n, t in self.params.items()
                 if n.startswith("draft.layer.") or n == "draft.out_norm"]
        return {
            "draft-layer": layer,
            "ipe": [("draft.ipe", self.params["draft.ipe"])],
            "spe": [("draft.spe", self.params["draft.spe"])],
            "g_item_raw": [("draft.g_item_raw", self.params["draft.g_item_raw"])],
            "w": [("draft.w", self.params["draft.w"])],
            "fc_cat": [("draft.fc_cat.weight", self.params["draft.fc_cat.weight"]),
                       ("draft.fc_cat.bias", self.params["draft.fc_cat.bias"])],
        }

    def addon_param_count(self) -> int:
        """IPE + SPE + both gates (the positional-awareness overhead)."""
        names = ("draft.ipe", "draft.spe", "draft.g_item_raw", "draft.w")
        return sum(self.params[n].data.size for n in names)

    def core_param_count(self) -> int:
        return sum(t.data.size for n, t in self.params.items()
                   if n not in ("draft.ipe", "draft.spe", "draft.g_item_raw", "draft.w"))

    def g_item(self) -> float:
        if _item_gate_fixed(self.config.ablation):
            return 1.0
        return float(kernels.sigmoid(self.params["draft.g_item_raw"].data)[0])

    # -- input fusion ---------------------------------------------------------

    def _check_depth(self, depth: int) -> None:
        if not (1 <= depth <= self.config.b_train):
            raise RangeError(f"depth {depth} outside SPE rows 1..{self.config.b_train}")

    def fuse_np(self, e: np.ndarray, f_prev: np.ndarray, slots: np.ndarray, depth: int):
        """Array fusion for decoding; returns (fused (n,d), g_step (n,))."""
        self._check_depth(depth)
        mode = self.config.ablation
        p = self.params
        left = e
        if _uses_ipe(mode):
            v = p["draft.ipe"].data[np.asarray(slots, dtype=np.int64)]
            left = e + v * np.asarray(self.g_item(), dtype=e.dtype)
        cat = np.concatenate([left, f_prev], axis=1)
        z = kernels.mm(cat, p["draft.fc_cat.weight"].data) + p["draft.fc_cat.bias"].data[None, :]
        raw_gate = kernels.sigmoid(kernels.mm(z, p["draft.w"].data))  # (n,1)
        if not _uses_spe(mode):
            return z, raw_gate[:, 0]
        s_row = p["draft.spe"].data[depth - 1:depth]  # (1,d)
        if _step_gate_fixed(mode):
            return z + s_row, np.ones(z.shape[0], dtype=z.dtype)
        return z + kernels.mm(raw_gate, s_row), raw_gate[:, 0]

    def fuse_tape(self, e: T.Tensor, f_prev: T.Tensor, slots: np.ndarray, depth: int):
        """Tape twin of fuse_np (same kernels, gradients attached)."""
        self._check_depth(depth)
        mode = self.config.ablation
        p = self.params
        left = e
        if _uses_ipe(mode):
            v = T.take_rows(p["draft.ipe"], np.asarray(slots, dtype=np.int64))
            if _item_gate_fixed(mode):
                left = T.add(e, v)
            else:
                left = T.add(e, T.scale_by(v, T.sigmoid(p["draft.g_item_raw"])))
        z = T.add_rowvec(
            T.matmul(T.concat_cols(left, f_prev), p["draft.fc_cat.weight"]),
            p["draft.fc_cat.bias"],
        )
        raw_gate = T.sigmoid(T.matmul(z, p["draft.w"]))  # (n,1)
        if not _uses_spe(mode):
            return z, raw_gate
        s_row = T.take_rows(p["draft.spe"], np.array([depth - 1]))
        if _step_gate_fixed(mode):
            return T.add_rowvec(z, T.reshape(s_row, (self.d,))), raw_gate
        return T.add(z, T.matmul(raw_gate, s_row)), raw_gate

    # -- decoding -------------------------------------------------------------

    def new_cache(self) -> KvCache:
        c = self.target.config
        return KvCache(1, c.max_len, c.n_heads, c.d_head)

    def head_logits(self, feats: np.ndarray) -> np.ndarray:
        return kernels.mm(feats, self.target.head_t())

    def run_pairs(self, fused: np.ndarray, cache: KvCache, spec_kv=None, allow_tail=None,
                  write: bool = False):
        """Draft layer + output norm over fused rows -> (features, staged kv)."""
        y, staged = run_rows([self._view], fused, self.n_heads, cache,
                             spec_kv=spec_kv, allow_tail=allow_tail, write=write)
        feats, _ = kernels.rmsnorm_rows(y, self.params["draft.out_norm"].data)
        return feats, staged


def init_draft(target, config: DraftConfig, slot_table: np.ndarray, seed: int) -> DraftModel:
    """IPE/SPE at N(0,0.02^2); zero gate params so both gates start at 0.5."""
    rng = derive(seed, "draft-init")
    d, d_ff = target.config.d_model, target.config.d_ff
    params: "OrderedDict[str, T.Tensor]" = OrderedDict()
    params["draft.ipe"] = T.param(rng.normals((config.n_slots, d), INIT_STD))
    params["draft.spe"] = T.param(rng.normals((config.b_train, d), INIT_STD))
    params["draft.g_item_raw"] = T.param(np.zeros(1))
    params["draft.w"] = T.param(np.zeros((d, 1)))
    params["draft.fc_cat.weight"] = T.param(rng.normals((2 * d, d), INIT_STD))
    params["draft.fc_cat.bias"] = T.param(np.zeros(d))
    for name, tensor in init_layer_tensors(rng, d, d_ff).items():
        params[f"draft.layer.{name}"] = tensor
    params["draft.out_norm"] = T.param(np.ones(d))
    return DraftModel(config, target, slot_table, params)


# ---------------------------------------------------------------------------
# candidate trees and the per-session decoding state
# ---------------------------------------------------------------------------


@dataclass
class CandidateTree:
    """Level-wise beam tree. Node 0 is the root: the pending (last committed)
    token whose target KV row is not yet in the cache. feat[i] holds the pair
    f_prev used when node i is expanded; q[i]/sampled[i] exist for expanded
    nodes and drive stochastic verification."""

    tokens: np.ndarray  # (n,) int64
    parent: np.ndarray  # (n,) int64, -1 at root
    depth: np.ndarray   # (n,) int64, 0 at root
    logq: np.ndarray    # (n,) f64 own proposal log-prob, 0 at root
    cum: np.ndarray     # (n,) f64 cumulative from root
    feat: np.ndarray    # (n, d) f32 pair f_prev per node
    q: dict = field(default_factory=dict)        # node -> (S,) f64 proposal law
    sampled: dict = field(default_factory=dict)  # node -> [(token, child idx or -1)]

    @property
    def n(self) -> int:
        return int(self.tokens.shape[0])

    def children_of(self, i: int) -> list:
        return [j for j in range(self.n) if self.parent[j] == i]

    def ancestor_allow(self) -> np.ndarray:
        """(n,n) mask: each row sees its root path and itself."""
        allow = np.zeros((self.n, self.n), dtype=bool)
        for i in range(self.n):
            j = i
            while j >= 0:
                allow[i, j] = True
                j = int(self.parent[j])
        return allow


class DraftSession:
    """Draft-side decoding state: committed pair cache + in-round staged rows."""

    def __init__(self, draft: DraftModel):
        self.draft = draft
        self.cache = draft.new_cache()
        self._spec_parts = []  # [(k (n,H,dh), v)] per staged batch, single layer
        self._m = 0

    # -- staging helpers ------------------------------------------------------

    def _spec_kv(self):
        if not self._spec_parts:
            return None
        ks = np.concatenate([p[0] for p in self._spec_parts])
        vs = np.concatenate([p[1] for p in self._spec_parts])
        return [(ks, vs)]

    def reset_round(self) -> None:
        self._spec_parts = []
        self._m = 0

    # -- committed pairs ------------------------------------------------------

    def append_pairs(self, tokens, f_prev: np.ndarray) -> np.ndarray:
        """Fuse + run committed pairs (depth row 1) into the cache, chain-masked.

        Returns the draft output features (useful in tests)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            return np.zeros((0, self.draft.d), dtype=np.float32)
        e = self.draft.target.emb.data[tokens]
        slots = self.draft.slot_table[tokens]
        fused, _ = self.draft.fuse_np(e, f_prev, slots, depth=1)
        feats, _ = self.draft.run_pairs(fused, self.cache, write=True)
        return feats

    def prefill(self, tokens, teacher_feats: np.ndarray) -> None:
        """Committed-prefix pairs: token t fused with the teacher feature at
        t-1 (zeros for the first row)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            return
        f_prev = np.zeros((tokens.shape[0], self.draft.d), dtype=np.float32)
        if tokens.shape[0] > 1:
            f_prev[1:] = teacher_feats[:-1]
        self.append_pairs(tokens, f_prev)

    # -- tree proposal --------------------------------------------------------

    def propose_tree(self, root_token: int, root_feature: np.ndarray, B: int, width: int,
                     temperature: float, rng: Rng) -> CandidateTree:
        """Level-wise beam: expand each frontier node's children, keep the
        global top-`width` per depth by cumulative proposal log-prob."""
        if B < 1 or width < 1:
            raise RangeError(f"need B >= 1 and width >= 1, got {B}, {width}")
        if temperature < 0.0:
            raise RangeError(f"temperature must be >= 0, got {temperature}")
        self.draft._check_depth(B)
        self.reset_round()
        tokens = [int(root_token)]
        parent = [-1]
        depth = [0]
        logq = [0.0]
        cum = [0.0]
        feat = [np.asarray(root_feature, dtype=np.float32)]
        q_map: dict = {}
        sampled: dict = {}
        staged_row = {}  # node idx -> staged spec row
        frontier = [0]
        for j in range(1, B + 1):
            n = len(frontier)
            toks = np.array([tokens[i] for i in frontier], dtype=np.int64)
            f_prev = np.stack([feat[i] for i in frontier])
            slots = self.draft.slot_table[toks]
            e = self.draft.target.emb.data[toks]
            fused, _ = self.draft.fuse_np(e, f_prev, slots, depth=j)
            allow_tail = np.zeros((n, self._m + n), dtype=bool)
            for row, node in enumerate(frontier):
                allow_tail[row, self._m + row] = True
                a = int(parent[node])
                while a >= 0:
                    allow_tail[row, staged_row[a]] = True
                    a = int(parent[a])
            out_feats, staged = self.draft.run_pairs(
                fused, self.cache, spec_kv=self._spec_kv(), allow_tail=allow_tail)
            logits = self.draft.head_logits(out_feats)
            row_of = {node: row for row, node in enumerate(frontier)}
            for row, node in enumerate(frontier):
                staged_row[node] = self._m + row
            self._spec_parts.append(staged[0])
            self._m += n
            # gather this level's candidate children
            pool = []  # (cum, creation order, token, parent node, own logq)
            order = 0
            for row, node in enumerate(frontier):
                law = probs_f64(logits[row], temperature if temperature > 0.0 else 1.0)
                q_map[node] = law
                sampled[node] = []
                if temperature == 0.0:
                    kids = np.argsort(-logits[row], kind="stable")[:width]
                else:
                    kids = []
                    masked = law.copy()
                    for _ in range(width):
                        total = masked.sum()
                        if total <= 0.0:
                            break
                        tok = kernels.sample_from_probs(masked / total, rng.uniform())
                        kids.append(tok)
                        masked[tok] = 0.0
                for c in kids:
                    lq = math.log(max(law[int(c)], 1e-300))
                    pool.append((cum[node] + lq, order, int(c), node, lq))
                    order += 1
            ranked = sorted(pool, key=lambda item: (-item[0], item[1]))
            kept_order = {}
            frontier = []
            for cu, _, tok, node, lq in ranked[:width]:
                idx = len(tokens)
                tokens.append(tok)
                parent.append(node)
                depth.append(j)
                logq.append(lq)
                cum.append(cu)
                feat.append(out_feats[row_of[node]])
                kept_order[(node, tok)] = idx
                frontier.append(idx)
            # pool keeps creation order, i.e. per-parent sampling order
            for _, _, tok, node, _ in pool:
                sampled[node].append((tok, kept_order.get((node, tok), -1)))
        tree = CandidateTree(
            tokens=np.array(tokens, dtype=np.int64),
            parent=np.array(parent, dtype=np.int64),
            depth=np.array(depth, dtype=np.int64),
            logq=np.array(logq, dtype=np.float64),
            cum=np.array(cum, dtype=np.float64),
            feat=np.stack(feat),
            q=q_map,
            sampled=sampled,
        )
        return tree

    # -- commit ---------------------------------------------------------------

    def commit(self, accepted_tokens, parent_feats: np.ndarray) -> None:
        """Adopt the root pair's staged row (it already carries the exact
        teacher feature and the depth-1 fusion), then run re-fused pairs for
        the accepted tokens; drop the rest of the speculation."""
        spec = self._spec_kv()
        if spec is None:
            raise StructureError("commit before any tree was proposed")
        self.cache.append_staged(spec, [0])
        self.append_pairs(accepted_tokens, parent_feats)
        self.reset_round()
