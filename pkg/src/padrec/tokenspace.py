"""Token-id layout for semantic-ID items, stream encoding, and slot labels.

Layout: id 0 PAD, 1 BOS, 2 EOS, 3 SEP; ids [4, 4+n_ctx) are context words;
the semantic token for (level k in 1..K, code c in 0..C) sits at
4 + n_ctx + (k-1)*C + c. Slot labels double as IPE row indices:
rows 0..K-1 are Slot(1..K), row K is Sep, row K+1 is Ctx.
"""

from dataclasses import dataclass

import numpy as np

from padrec.errors import ConfigError, RangeError, UsageError

PAD, BOS, EOS, SEP = 0, 1, 2, 3

_MAX_IDS = 2 ** 31 - 1  # ids and dims travel as 32-bit values in files


@dataclass(frozen=True)
class Vocabulary:
    """Sole authority for the token-id layout; derived size S = 4 + n_ctx + K*C."""

    K: int
    C: int
    n_ctx: int

    @property
    def S(self) -> int:
        return 4 + self.n_ctx + self.K * self.C

    @property
    def slot_sep(self) -> int:
        return self.K

    @property
    def slot_ctx(self) -> int:
        return self.K + 1

    @property
    def n_slots(self) -> int:
        return self.K + 2

    def sem_id(self, level: int, code: int) -> int:
        """Token id of (level, code); levels count from 1."""
        if not (1 <= level <= self.K) or not (0 <= code < self.C):
            raise RangeError(f"semantic ({level},{code}) outside K={self.K} C={self.C}")
        return 4 + self.n_ctx + (level - 1) * self.C + code

    def is_semantic(self, tid: int) -> bool:
        return 4 + self.n_ctx <= tid < self.S

    def sem_level_code(self, tid: int) -> tuple[int, int]:
        """Inverse of sem_id; exact round trip."""
        if not self.is_semantic(tid):
            raise RangeError(f"id {tid} is not a semantic token")
        rel = tid - 4 - self.n_ctx
        return rel // self.C + 1, rel % self.C


def build_vocab(K: int, C: int, n_ctx: int) -> Vocabulary:
    """Validated vocabulary construction."""
    if K < 1 or C < 2 or n_ctx < 0:
        raise ConfigError(f"bad vocab config K={K} C={C} n_ctx={n_ctx}")
    if 4 + n_ctx + K * C > _MAX_IDS:
        raise ConfigError("token id space overflow")
    return Vocabulary(K=K, C=C, n_ctx=n_ctx)


def slot_of(tid: int, vocab: Vocabulary) -> int:
    """Slot label (IPE row) of a token id: Slot(k) -> k-1, SEP -> K, rest Ctx."""
    if not (0 <= tid < vocab.S):
        raise RangeError(f"id {tid} outside vocab size {vocab.S}")
    if tid == SEP:
        return vocab.slot_sep
    if vocab.is_semantic(tid):
        return vocab.sem_level_code(tid)[0] - 1
    return vocab.slot_ctx


def slots_of(tokens: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Vectorized slot_of over a token array."""
    return np.array([slot_of(int(t), vocab) for t in tokens], dtype=np.int64)


# ---------------------------------------------------------------------------
# streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    """Fixed context-word ids around the history block."""

    prefix: tuple
    suffix: tuple


def default_template(vocab: Vocabulary) -> PromptTemplate:
    """First 8 context words as instruction, next 4 as the pre-response cue."""
    n_pre = min(8, vocab.n_ctx)
    n_suf = min(4, max(0, vocab.n_ctx - n_pre))
    first = 4
    prefix = tuple(range(first, first + n_pre))
    suffix = tuple(range(first + n_pre, first + n_pre + n_suf))
    return PromptTemplate(prefix=prefix, suffix=suffix)


@dataclass(frozen=True)
class TokenStream:
    """Flattened prompt+response token sequence with response boundary t0."""

    tokens: np.ndarray  # int64
    t0: int
    labels: np.ndarray  # int64 slot labels, aligned with tokens

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


def _item_tokens(item: tuple, vocab: Vocabulary) -> list:
    if len(item) != vocab.K:
        raise UsageError(f"item tuple has {len(item)} codes, K={vocab.K}")
    return [vocab.sem_id(k + 1, c) for k, c in enumerate(item)]


def encode_stream(history, target, vocab: Vocabulary, template: PromptTemplate) -> TokenStream:
    """BOS . prefix . history items . suffix . target items . EOS, SEP between items."""
    if not target:
        raise UsageError("encode_stream needs a non-empty target list")
    toks: list = [BOS]
    toks.extend(template.prefix)
    for i, item in enumerate(history):
        if i:
            toks.append(SEP)
        toks.extend(_item_tokens(item, vocab))
    toks.extend(template.suffix)
    t0 = len(toks)
    for i, item in enumerate(target):
        if i:
            toks.append(SEP)
        toks.extend(_item_tokens(item, vocab))
    toks.append(EOS)
    arr = np.array(toks, dtype=np.int64)
    return TokenStream(tokens=arr, t0=t0, labels=slots_of(arr, vocab))


def parse_response(tokens, vocab: Vocabulary) -> tuple[list, bool]:
    """Tolerant greedy parse of a response region into item tuples.

    Consumes runs of K semantic tokens in level order 1..K, skips SEP, stops at
    EOS or the first structural violation. well_formed is True only when the
    region terminates at EOS on an item boundary.
    """
    items: list = []
    current: list = []
    for tid in np.asarray(tokens, dtype=np.int64):
        tid = int(tid)
        if tid == EOS:
            return items, not current
        if tid == SEP:
            if current:
                return items, False  # separator inside an item
            continue
        if not vocab.is_semantic(tid):
            return items, False
        level, code = vocab.sem_level_code(tid)
        if level != len(current) + 1:
            return items, False
        current.append(code)
        if len(current) == vocab.K:
            items.append(tuple(current))
            current = []
    return items, False  # ran out without EOS


# ---------------------------------------------------------------------------
# manifest io
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


def write_manifest(path, vocab: Vocabulary) -> None:
    """Plain-text vocabulary manifest, one key=value per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"k={vocab.K}\n")
        fh.write(f"c={vocab.C}\n")
        fh.write(f"n_ctx={vocab.n_ctx}\n")
        fh.write(f"version={MANIFEST_VERSION}\n")


def read_manifest(path) -> Vocabulary:
    fields = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key] = value
    try:
        if int(fields["version"]) != MANIFEST_VERSION:
            raise ConfigError(f"unsupported manifest version {fields['version']}")
        return build_vocab(int(fields["k"]), int(fields["c"]), int(fields["n_ctx"]))
    except KeyError as exc:
        raise ConfigError(f"manifest missing key {exc}") from exc
