"""Speculative decoding runtime: the per-round loop that proposes a candidate
tree with the draft, scores every node in one batched target call, walks the
tree to find the committed prefix, and compacts both KV caches.

Greedy walks are exact: the committed stream is bitwise the autoregressive
one. Stochastic walks verify each parent's sampled children in sampling
order against a shrinking residual law, so accepted tokens follow the target
law; pruning at depth >= 2 can only shorten the verifiable prefix, never
skew it, because the walk stops at the first pruned candidate.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from padrec.errors import InvariantError, RangeError
from padrec.model import CandidateTree, DraftSession, probs_f64
from padrec.numkit import kernels
from padrec.numkit.rng import Rng
from padrec.tokenspace import EOS

__all__ = [
    "CandidateTree",
    "RoundStats",
    "SessionReport",
    "run_session",
    "verify_greedy",
    "verify_stochastic",
]


# ---------------------------------------------------------------------------
# tree verification
# ---------------------------------------------------------------------------


def verify_greedy(tree: CandidateTree, logits: np.ndarray, eos: int = EOS):
    """Walk from the root along target-argmax matches.

    logits: (n, S) target rows aligned with tree nodes. Returns (accepted
    node indices root-to-leaf, bonus token or None). The bonus is dropped
    when the walk accepts an eos token."""
    accepted = []
    cur = 0
    while True:
        want = int(np.argmax(logits[cur]))
        nxt = -1
        for child in tree.children_of(cur):
            if int(tree.tokens[child]) == want:
                nxt = child
                break
        if nxt < 0:
            return accepted, want
        accepted.append(nxt)
        if int(tree.tokens[nxt]) == eos:
            return accepted, None
        cur = nxt


def verify_stochastic(tree: CandidateTree, logits: np.ndarray, temperature: float,
                      rng: Rng, eos: int = EOS):
    """Walk from the root accepting sampled children against the target law.

    Each parent's children are tried in sampling order; try i uses the
    proposal law with earlier tries zeroed out and renormalized, against the
    running residual of the target law. A pruned child ends the tryable
    prefix. Returns (accepted node indices, bonus token or None)."""
    if temperature <= 0.0:
        raise RangeError("stochastic verification needs temperature > 0")
    accepted = []
    cur = 0
    while True:
        r = probs_f64(logits[cur], temperature)
        entries = tree.sampled.get(cur)
        if entries is None:  # leaf: nothing proposed past here
            bonus = kernels.sample_from_probs(r, rng.uniform())
            return accepted, int(bonus)
        q_full = tree.q[cur]
        tried = []
        moved = False
        for tok, child in entries:
            if child < 0:
                break  # pruned: later tries can no longer be verified
            q_i = q_full.copy()
            if tried:
                q_i[tried] = 0.0
                q_i = q_i / q_i.sum()
            if rng.uniform() < r[tok] / q_i[tok]:
                accepted.append(child)
                if int(tree.tokens[child]) == eos:
                    return accepted, None
                cur = child
                moved = True
                break
            resid = np.maximum(r - q_i, 0.0)
            tried.append(tok)
            resid[tried] = 0.0
            total = resid.sum()
            if total <= 0.0:
                raise InvariantError("empty residual after rejection")
            r = resid / total
        if not moved:
            bonus = kernels.sample_from_probs(r, rng.uniform())
            return accepted, int(bonus)


# ---------------------------------------------------------------------------
# session loop
# ---------------------------------------------------------------------------


@dataclass
class RoundStats:
    proposed: int   # nodes in the tree beyond the root
    accepted: int   # accepted path length
    committed: int  # tokens emitted this round (after truncation)


@dataclass
class SessionReport:
    tokens: np.ndarray        # committed continuation, (m,) int64
    rounds: int
    target_calls: int
    draft_calls: int
    committed: int
    wall_ms: float
    rounds_detail: list = field(default_factory=list)

    @property
    def tau(self) -> float:
        return self.committed / self.rounds if self.rounds else 0.0


def run_session(target, draft, prompt, max_new: int, depth: int, width: int,
                temperature: float, rng: Rng, eos: int = EOS,
                keep_rounds: bool = False) -> SessionReport:
    """Speculative generation of up to max_new tokens after prompt.

    One target call per round scores the root (the still-uncached last
    committed token) plus the whole candidate tree; each round commits the
    accepted path and one bonus token unless eos or the budget cuts in."""
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.size == 0:
        raise RangeError("prompt must hold at least one token")
    if max_new < 1:
        raise RangeError(f"max_new must be >= 1, got {max_new}")

    tcache = target.new_cache()
    pre = target.prefill(tcache, prompt[:-1])
    sess = DraftSession(draft)
    sess.prefill(prompt[:-1], pre.feature)
    pending = int(prompt[-1])
    root_feature = pre.feature[-1] if prompt.size > 1 else np.zeros(draft.d, dtype=np.float32)

    emitted = []
    rounds = 0
    draft_calls = 0
    detail = []
    t_start = time.perf_counter()
    while len(emitted) < max_new:
        tree = sess.propose_tree(pending, root_feature, depth, width, temperature, rng)
        draft_calls += depth
        positions = tcache.length + tree.depth
        vout, staged = target.verify_batch(tree.tokens, tree.ancestor_allow(),
                                           positions, tcache)
        rounds += 1
        if temperature == 0.0:
            accepted, bonus = verify_greedy(tree, vout.logits, eos=eos)
        else:
            accepted, bonus = verify_stochastic(tree, vout.logits, temperature, rng, eos=eos)

        toks = [int(tree.tokens[a]) for a in accepted]
        if bonus is not None:
            toks.append(int(bonus))
        room = max_new - len(emitted)
        if len(toks) > room:
            toks = toks[:room]
            if bonus is not None and len(toks) < len(accepted) + 1:
                bonus = None
            accepted = accepted[:len(toks) if bonus is None else len(toks) - 1]

        tcache.append_staged(staged, [0] + accepted)
        parent_rows = [0] + accepted[:-1]
        sess.commit([int(tree.tokens[a]) for a in accepted],
                    vout.feature[parent_rows[:len(accepted)]])
        emitted.extend(toks)
        if keep_rounds:
            detail.append(RoundStats(proposed=tree.n - 1, accepted=len(accepted),
                                     committed=len(toks)))
        if (toks and toks[-1] == eos) or bonus is None:
            break
        pending = int(bonus)
        root_feature = vout.feature[accepted[-1] if accepted else 0]
    wall_ms = (time.perf_counter() - t_start) * 1000.0

    return SessionReport(tokens=np.array(emitted, dtype=np.int64), rounds=rounds,
                         target_calls=rounds, draft_calls=draft_calls,
                         committed=len(emitted), wall_ms=wall_ms, rounds_detail=detail)
