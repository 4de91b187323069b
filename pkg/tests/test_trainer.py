"""Trainer tests: response-region CE, feature collection, the unrolled
multi-pass draft loss (mask provenance, bitwise parity with inference,
gradient checks), and both training loops end to end on tiny models."""

import math
from types import SimpleNamespace as NS

import numpy as np
import pytest

from padrec.errors import InvariantError, RangeError
from padrec.model import (
    DraftConfig,
    DraftModel,
    DraftSession,
    TargetConfig,
    TargetModel,
    init_draft,
    init_target,
)
from padrec.numkit.fdcheck import finite_diff_check
from padrec.trainer import (
    collect_features,
    draft_unrolled_loss,
    evaluate_ppl,
    measure_tau,
    response_rows,
    target_stream_loss,
    train_draft,
    train_target,
)

S, D = 12, 8


def tiny_target(seed=3, n_layers=2):
    cfg = TargetConfig(vocab_size=S, d_model=D, n_layers=n_layers, n_heads=2,
                       d_ff=16, max_len=64)
    return init_target(cfg, seed)


def tiny_draft(target, b_train=3, seed=5, ablation="full"):
    table = np.zeros(S, dtype=np.int64)
    table[4:] = np.arange(S - 4) % 3
    return init_draft(target, DraftConfig(n_slots=6, b_train=b_train, ablation=ablation),
                      table, seed)


def random_streams(n, length=16, t0=8, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        toks = np.concatenate([[1], rng.integers(3, S, size=length - 2), [2]])
        out.append(NS(tokens=tuple(int(t) for t in toks), t0=t0))
    return out


def patterned_streams(n, seed=0):
    """Learnable data: the response cycles a fixed token pattern."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        prefix = np.concatenate([[1], rng.integers(3, S, size=5)])
        resp = [4, 5, 6, 7] * 2
        toks = np.concatenate([prefix, resp, [2]])
        out.append(NS(tokens=tuple(int(t) for t in toks), t0=len(prefix)))
    return out


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------


def test_response_rows():
    assert np.array_equal(response_rows(8, 16), np.arange(7, 15))
    assert np.array_equal(response_rows(1, 3), np.array([0, 1]))
    with pytest.raises(RangeError):
        response_rows(0, 5)
    with pytest.raises(RangeError):
        response_rows(5, 5)


def test_collect_features_matches_training_forward():
    tgt = tiny_target()
    streams = random_streams(2)
    bank = collect_features(tgt, streams)
    for s, sf in zip(streams, bank):
        toks = np.asarray(s.tokens)
        logits, feats = tgt.forward_train(toks)
        assert np.array_equal(sf.features, feats.data)
        rows = response_rows(s.t0, toks.size)
        assert np.array_equal(sf.resp_logits, logits.data[rows])
    again = collect_features(tgt, streams)
    for a, b in zip(bank, again):
        assert np.array_equal(a.features, b.features)


def test_evaluate_ppl_identity():
    tgt = tiny_target()
    s = random_streams(1)[0]
    toks = np.asarray(s.tokens)
    logits, _ = tgt.forward_train(toks)
    rows = response_rows(s.t0, toks.size)
    p = np.exp(logits.data[rows].astype(np.float64))
    p = p / p.sum(axis=1, keepdims=True)
    want = math.exp(float(-np.log(p[np.arange(rows.size), toks[rows + 1]]).mean()))
    got = evaluate_ppl(tgt, [s])
    assert abs(got - want) < 1e-6


# ---------------------------------------------------------------------------
# target training
# ---------------------------------------------------------------------------


def test_target_learns_pattern():
    tgt = tiny_target(seed=1)
    streams = patterned_streams(16)
    before = evaluate_ppl(tgt, streams)
    train_target(tgt, streams, streams[:4], epochs=3, lr=3e-3, seed=0, log_every=50)
    after = evaluate_ppl(tgt, streams)
    assert after < 0.5 * before


def test_target_training_deterministic():
    streams = patterned_streams(6)
    a = tiny_target(seed=2)
    b = tiny_target(seed=2)
    train_target(a, streams, [], epochs=1, lr=1e-3, seed=9)
    train_target(b, streams, [], epochs=1, lr=1e-3, seed=9)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_target_log_format(tmp_path):
    tgt = tiny_target()
    streams = random_streams(5)
    path = tmp_path / "target_log.csv"
    train_target(tgt, streams, streams[:2], epochs=1, lr=1e-3, log_path=path, log_every=2)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,step,loss,val_ppl"
    last = lines[-1].split(",")
    assert last[0] == "1" and last[1] == "5" and float(last[3]) > 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_target_diverge_aborts():
    tgt = tiny_target()
    streams = random_streams(4)
    with pytest.raises(InvariantError):
        train_target(tgt, streams, [], epochs=3, lr=1e12, seed=0)


# ---------------------------------------------------------------------------
# draft loss
# ---------------------------------------------------------------------------


def test_draft_loss_starts_near_uniform():
    """A fresh draft scores like a uniform predictor: ln S plus ln k for the
    restricted term."""
    tgt = tiny_target()
    bank = collect_features(tgt, random_streams(1))
    drf = tiny_draft(tgt)
    total, per_depth, _ = draft_unrolled_loss(drf, bank[0], lam=1.0, k_aux=8)
    want = math.log(S) + math.log(8)
    assert abs(float(total.data) - want) < 0.1
    assert len(per_depth) == 3
    assert abs(float(total.data) - np.mean(per_depth)) < 1e-9


def test_draft_loss_mask_provenance():
    """Pass j replaces exactly j-1 features behind each response query and
    keeps within-pass attention self-only past pass 1."""
    tgt = tiny_target()
    bank = collect_features(tgt, random_streams(1, length=18, t0=9))
    drf = tiny_draft(tgt, b_train=4)
    _, _, info = draft_unrolled_loss(drf, bank[0], audit=True)
    n_p = info["n_pairs"]
    resp = response_rows(9, 18)
    for pp in info["per_pass"]:
        j = pp["depth"]
        allow = pp["allow"]
        assert allow.shape == (n_p, j * n_p)
        replaced = allow[:, n_p:].sum(axis=1)  # keys from passes 2..j
        assert (replaced[resp] == j - 1).all()
        total_keys = allow.sum(axis=1)
        assert (total_keys == np.arange(n_p) + 1).all()  # one key per offset
        if j >= 2:
            own = allow[:, (j - 1) * n_p:]
            assert np.array_equal(own, np.eye(n_p, dtype=bool))


def test_draft_pass_features_match_inference_chain():
    """Pass-j output rows are bitwise what speculative decoding computes at
    depth j with staged keys."""
    tgt = tiny_target()
    bank = collect_features(tgt, random_streams(1))
    sf = bank[0]
    toks = sf.tokens
    drf = tiny_draft(tgt)
    _, _, info = draft_unrolled_loss(drf, sf, audit=True)
    feats_by_pass = [pp["feats"] for pp in info["per_pass"]]

    t = 9  # root position in pair space
    sess = DraftSession(drf)
    pre = sess.append_pairs(toks[:t], np.concatenate(
        [np.zeros((1, D), np.float32), sf.features[:t - 1]]))
    assert np.array_equal(pre, feats_by_pass[0][:t])

    spec_parts = []
    f_prev = sf.features[t - 1:t].copy()
    for depth in (1, 2, 3):
        pos = t + depth - 1
        e = drf.target.emb.data[np.array([toks[pos]])]
        sl = drf.slot_table[np.array([toks[pos]])]
        fused, _ = drf.fuse_np(e, f_prev, sl, depth)
        allow = np.ones((1, len(spec_parts) + 1), dtype=bool)
        kv = None
        if spec_parts:
            kv = [(np.concatenate([p[0] for p in spec_parts]),
                   np.concatenate([p[1] for p in spec_parts]))]
        feats, staged = drf.run_pairs(fused, sess.cache, spec_kv=kv, allow_tail=allow)
        assert np.array_equal(feats[0], feats_by_pass[depth - 1][pos])
        spec_parts.append(staged[0])
        f_prev = feats


def test_draft_loss_is_causal():
    """Flipping the last non-final token leaves every earlier per-row CE
    bitwise unchanged in every pass."""
    tgt = tiny_target()
    bank = collect_features(tgt, random_streams(1))
    sf = bank[0]
    drf = tiny_draft(tgt)
    _, _, a = draft_unrolled_loss(drf, sf, audit=True)
    toks = sf.tokens.copy()
    toks[-2] = 3 if toks[-2] != 3 else 4
    flipped = type(sf)(tokens=toks, t0=sf.t0, features=sf.features,
                       resp_logits=sf.resp_logits)
    _, _, b = draft_unrolled_loss(drf, flipped, audit=True)
    for pa, pb in zip(a["per_pass"], b["per_pass"]):
        assert np.array_equal(pa["ce"][:-1], pb["ce"][:-1])
        assert pa["ce"][-1] != pb["ce"][-1]


def test_depth_one_loss_touches_only_first_depth_row():
    tgt = tiny_target()
    bank = collect_features(tgt, random_streams(1))
    drf = tiny_draft(tgt, b_train=3)
    _, _, info = draft_unrolled_loss(drf, bank[0], audit=True)
    info["per_pass"][0]["loss_tensor"].backward()
    g = drf.params["draft.spe"].grad
    assert g is not None
    assert np.abs(g[0]).max() > 0
    assert np.array_equal(g[1:], np.zeros_like(g[1:]))


def test_full_loss_reaches_every_depth_row():
    tgt = tiny_target()
    tgt.set_trainable(False)
    bank = collect_features(tgt, random_streams(1))
    drf = tiny_draft(tgt, b_train=3)
    total, _, _ = draft_unrolled_loss(drf, bank[0])
    total.backward()
    g = drf.params["draft.spe"].grad
    assert (np.abs(g).max(axis=1) > 0).all()
    assert drf.target.emb.grad is None  # frozen teacher


def test_draft_loss_gradients_pass_fd():
    """Central differences on a float64 twin of the whole stack."""
    cfg = TargetConfig(vocab_size=10, d_model=8, n_layers=1, n_heads=2, d_ff=12, max_len=32)
    t32 = init_target(cfg, 7)
    t64 = TargetModel.from_tensors(cfg, {n: p.data.astype(np.float64)
                                         for n, p in t32.params.items()})
    t64.set_trainable(False)
    streams = [NS(tokens=(1, 4, 5, 6, 7, 8, 4, 5, 2), t0=4)]
    bank = collect_features(t64, streams)
    assert bank[0].features.dtype == np.float64
    table = np.zeros(10, dtype=np.int64)
    table[4:] = np.arange(6) % 3
    d32 = init_draft(t32, DraftConfig(n_slots=6, b_train=2), table, 5)
    d64 = DraftModel.from_tensors(DraftConfig(n_slots=6, b_train=2), t64, table,
                                  {n: p.data.astype(np.float64)
                                   for n, p in d32.params.items()})

    def closure():
        total, _, _ = draft_unrolled_loss(d64, bank[0])
        return total

    report = finite_diff_check(closure, d64.params, tol=1e-4, h=1e-5, n_sample=48, seed=2)
    assert report.passed, report.per_param


# ---------------------------------------------------------------------------
# draft training loop
# ---------------------------------------------------------------------------


def test_draft_training_improves_and_freezes_target():
    tgt = tiny_target(seed=1)
    streams = patterned_streams(12)
    train_target(tgt, streams, [], epochs=2, lr=3e-3, seed=0)
    bank = collect_features(tgt, streams)
    drf = tiny_draft(tgt)
    before = float(draft_unrolled_loss(drf, bank[0])[0].data)
    snap = {n: p.data.copy() for n, p in tgt.params.items()}
    train_draft(drf, bank, epochs=2, lr=3e-3, seed=0)
    after = float(draft_unrolled_loss(drf, bank[0])[0].data)
    assert after < before
    for n, arr in snap.items():
        assert np.array_equal(arr, tgt.params[n].data)


def test_draft_training_deterministic():
    tgt = tiny_target(seed=1)
    bank = collect_features(tgt, random_streams(4))
    a = tiny_draft(tgt, seed=6)
    b = tiny_draft(tgt, seed=6)
    train_draft(a, bank, epochs=1, lr=1e-3, seed=4)
    train_draft(b, bank, epochs=1, lr=1e-3, seed=4)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_draft_log_format(tmp_path):
    tgt = tiny_target()
    streams = random_streams(4)
    bank = collect_features(tgt, streams)
    drf = tiny_draft(tgt, b_train=2)
    path = tmp_path / "draft_log.csv"
    train_draft(drf, bank, epochs=1, lr=1e-3, log_path=path, log_every=2,
                val_streams=streams[:2])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,step,loss,loss_depth_1,loss_depth_2,val_tau"
    last = lines[-1].split(",")
    assert last[0] == "1" and float(last[-1]) >= 1.0


def test_measure_tau_bounds():
    tgt = tiny_target()
    streams = random_streams(3)
    drf = tiny_draft(tgt, b_train=3)
    tau = measure_tau(tgt, drf, streams, depth=3, width=2, limit=3)
    assert 1.0 <= tau <= 4.0


def test_target_stream_loss_matches_manual():
    tgt = tiny_target()
    s = random_streams(1)[0]
    toks = np.asarray(s.tokens)
    loss = float(target_stream_loss(tgt, toks, s.t0).data)
    logits, _ = tgt.forward_train(toks)
    rows = response_rows(s.t0, toks.size)
    lg = logits.data[rows].astype(np.float64)
    lg = lg - lg.max(axis=1, keepdims=True)
    logp = lg - np.log(np.exp(lg).sum(axis=1, keepdims=True))
    want = float(-logp[np.arange(rows.size), toks[rows + 1]].mean())
    assert abs(loss - want) < 1e-6
