"""Token layout, stream encoding, and parse round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padrec.errors import ConfigError, RangeError, UsageError
from padrec.tokenspace import (
    BOS,
    EOS,
    PAD,
    SEP,
    PromptTemplate,
    build_vocab,
    default_template,
    encode_stream,
    parse_response,
    read_manifest,
    slot_of,
    write_manifest,
)

V = build_vocab(K=4, C=32, n_ctx=16)
EMPTY = PromptTemplate((), ())


# ---------------------------------------------------------------------------
# layout oracles
# ---------------------------------------------------------------------------


def test_default_layout_size():
    # 4 + 16 + 4*32, computed by hand
    assert V.S == 148


def test_tiny_layout():
    tiny = build_vocab(K=1, C=2, n_ctx=0)
    assert tiny.S == 6
    assert tiny.sem_id(1, 0) == 4
    assert tiny.sem_id(1, 1) == 5


def test_sem_id_oracle():
    # 4 + 16 + (2-1)*32 + 0
    assert V.sem_id(2, 0) == 52


def test_specials_are_fixed():
    assert (PAD, BOS, EOS, SEP) == (0, 1, 2, 3)


def test_sem_id_range_errors():
    with pytest.raises(RangeError):
        V.sem_id(0, 0)
    with pytest.raises(RangeError):
        V.sem_id(5, 0)
    with pytest.raises(RangeError):
        V.sem_id(1, 32)


def test_build_vocab_rejects_bad_config():
    with pytest.raises(ConfigError):
        build_vocab(K=0, C=32, n_ctx=16)
    with pytest.raises(ConfigError):
        build_vocab(K=4, C=1, n_ctx=16)
    with pytest.raises(ConfigError):
        build_vocab(K=4, C=32, n_ctx=-1)
    with pytest.raises(ConfigError):
        build_vocab(K=2 ** 20, C=2 ** 20, n_ctx=0)


@given(
    k=st.integers(1, 6),
    c=st.integers(2, 40),
    n_ctx=st.integers(0, 20),
    data=st.data(),
)
@settings(max_examples=60)
def test_sem_id_roundtrips(k, c, n_ctx, data):
    vb = build_vocab(k, c, n_ctx)
    level = data.draw(st.integers(1, k))
    code = data.draw(st.integers(0, c - 1))
    tid = vb.sem_id(level, code)
    assert 4 + n_ctx <= tid < vb.S
    assert vb.sem_level_code(tid) == (level, code)


def test_sem_ids_are_collision_free():
    seen = set()
    for level in range(1, V.K + 1):
        for code in range(V.C):
            seen.add(V.sem_id(level, code))
    assert len(seen) == V.K * V.C
    assert min(seen) == 4 + V.n_ctx and max(seen) == V.S - 1


# ---------------------------------------------------------------------------
# slot labels
# ---------------------------------------------------------------------------


def test_slot_of_cases():
    assert slot_of(SEP, V) == V.slot_sep == 4
    assert slot_of(BOS, V) == V.slot_ctx == 5
    assert slot_of(PAD, V) == V.slot_ctx
    assert slot_of(7, V) == V.slot_ctx  # context word
    assert slot_of(V.sem_id(1, 5), V) == 0
    assert slot_of(52, V) == 1  # level-2 token
    assert slot_of(V.sem_id(4, 31), V) == 3


def test_slot_of_total_on_vocab():
    rows = {slot_of(t, V) for t in range(V.S)}
    assert rows == set(range(V.n_slots))


def test_slot_of_out_of_range():
    with pytest.raises(RangeError):
        slot_of(V.S, V)
    with pytest.raises(RangeError):
        slot_of(-1, V)


# ---------------------------------------------------------------------------
# stream encoding
# ---------------------------------------------------------------------------


def test_encode_minimal_stream():
    stream = encode_stream([], [(0, 0, 0, 0)], V, EMPTY)
    want = [BOS, V.sem_id(1, 0), V.sem_id(2, 0), V.sem_id(3, 0), V.sem_id(4, 0), EOS]
    assert stream.tokens.tolist() == want
    assert stream.t0 == 1


def test_encode_layout_with_template_and_history():
    tpl = default_template(V)
    assert tpl.prefix == tuple(range(4, 12)) and tpl.suffix == tuple(range(12, 16))
    hist = [(1, 2, 3, 4), (5, 6, 7, 8)]
    tgt = [(9, 10, 11, 12), (13, 14, 15, 16)]
    stream = encode_stream(hist, tgt, V, tpl)
    toks = stream.tokens.tolist()
    assert toks[0] == BOS
    assert toks[1:9] == list(tpl.prefix)
    # history: item, SEP, item
    assert toks[9:13] == [V.sem_id(k + 1, c) for k, c in enumerate(hist[0])]
    assert toks[13] == SEP
    assert toks[14:18] == [V.sem_id(k + 1, c) for k, c in enumerate(hist[1])]
    assert toks[18:22] == list(tpl.suffix)
    assert stream.t0 == 22
    assert toks[-1] == EOS
    # exactly one SEP inside the response, never adjacent to EOS
    resp = toks[stream.t0:]
    assert resp.count(SEP) == 1 and resp[0] != SEP and resp[-2] != SEP


def test_encode_requires_target():
    with pytest.raises(UsageError):
        encode_stream([], [], V, EMPTY)


def test_encode_rejects_short_item():
    with pytest.raises(UsageError):
        encode_stream([], [(1, 2)], V, EMPTY)


def test_labels_align_with_slot_of():
    stream = encode_stream([(1, 2, 3, 4)], [(5, 6, 7, 8)], V, default_template(V))
    for tid, lab in zip(stream.tokens.tolist(), stream.labels.tolist()):
        assert lab == slot_of(tid, V)


# ---------------------------------------------------------------------------
# response parsing
# ---------------------------------------------------------------------------

items_strategy = st.lists(
    st.tuples(*[st.integers(0, V.C - 1) for _ in range(V.K)]), min_size=1, max_size=10
)


@given(history=st.lists(st.tuples(*[st.integers(0, V.C - 1) for _ in range(V.K)]), max_size=5),
       target=items_strategy)
@settings(max_examples=60)
def test_parse_roundtrips_encode(history, target):
    stream = encode_stream(history, target, V, default_template(V))
    items, ok = parse_response(stream.tokens[stream.t0:], V)
    assert ok
    assert items == target


def test_parse_ten_items():
    target = [(i % 32, (i + 1) % 32, (i + 2) % 32, (i + 3) % 32) for i in range(10)]
    stream = encode_stream([], target, V, EMPTY)
    items, ok = parse_response(stream.tokens[stream.t0:], V)
    assert ok and len(items) == 10


def test_parse_level_order_violation():
    good = [V.sem_id(1, 0), V.sem_id(2, 1), V.sem_id(3, 2), V.sem_id(4, 3)]
    bad_third = [V.sem_id(1, 0), V.sem_id(2, 1), V.sem_id(2, 1), V.sem_id(4, 3)]
    toks = good + [SEP] + good + [SEP] + bad_third + [EOS]
    items, ok = parse_response(toks, V)
    assert not ok
    assert len(items) == 2


def test_parse_truncated_response():
    # no EOS: items so far, flagged malformed
    target = [(1, 2, 3, 4), (5, 6, 7, 8)]
    stream = encode_stream([], target, V, EMPTY)
    items, ok = parse_response(stream.tokens[stream.t0:-1], V)
    assert not ok and items == target


def test_parse_eos_inside_item():
    toks = [V.sem_id(1, 0), V.sem_id(2, 0), EOS]
    items, ok = parse_response(toks, V)
    assert not ok and items == []


def test_parse_rejects_foreign_tokens():
    toks = [V.sem_id(1, 0), 4, EOS]  # context word mid-item
    items, ok = parse_response(toks, V)
    assert not ok and items == []


def test_parse_skips_leading_sep():
    good = [V.sem_id(k, 0) for k in range(1, 5)]
    items, ok = parse_response([SEP] + good + [EOS], V)
    assert ok and items == [(0, 0, 0, 0)]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def test_manifest_roundtrip(tmp_path):
    path = tmp_path / "vocab.txt"
    write_manifest(path, V)
    text = path.read_text()
    assert text == "k=4\nc=32\nn_ctx=16\nversion=1\n"
    back = read_manifest(path)
    assert back == V


def test_manifest_rejects_bad_version(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("k=4\nc=32\nn_ctx=16\nversion=9\n")
    with pytest.raises(ConfigError):
        read_manifest(path)


def test_manifest_rejects_missing_key(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("k=4\nc=32\nversion=1\n")
    with pytest.raises(ConfigError):
        read_manifest(path)
