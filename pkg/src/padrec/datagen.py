"""Synthetic corpus: semantic-ID catalog, cluster-Markov user histories, splits.

Items live in clusters keyed by their level-1 code; a user walks a Markov
chain over clusters (stay probability 0.8, otherwise jump uniformly to a
different cluster) and picks items uniformly inside the current cluster.
The most recent 10 items of each user are the target list.
"""

import os
from dataclasses import dataclass

import numpy as np

from padrec.errors import CapacityError, ConfigError
from padrec.numkit.rng import derive
from padrec.tokenspace import (
    PromptTemplate,
    TokenStream,
    Vocabulary,
    default_template,
    encode_stream,
    read_manifest,
    write_manifest,
)

N_TARGET = 10


@dataclass(frozen=True, eq=False)
class Catalog:
    """Item semantic-ID table; cluster of an item is its level-1 code."""

    codes: np.ndarray  # (n_items, K) int64

    @property
    def n_items(self) -> int:
        return int(self.codes.shape[0])

    def item_tuple(self, item: int) -> tuple:
        return tuple(int(c) for c in self.codes[item])

    def cluster_of(self, item: int) -> int:
        return int(self.codes[item, 0])


@dataclass(frozen=True)
class UserRecord:
    user_id: int
    history: tuple  # item ids, chronological
    target: tuple  # item ids, length N_TARGET


@dataclass(frozen=True)
class SplitSet:
    train: tuple
    valid: tuple
    test: tuple


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def gen_catalog(seed: int, n_items: int, vocab: Vocabulary) -> Catalog:
    """Round-robin level-1 codes, uniform deeper codes, no duplicate tuples."""
    cap = vocab.C ** vocab.K
    if n_items > cap:
        raise CapacityError(f"{n_items} items exceed C^K = {cap}")
    if n_items < vocab.C:
        raise ConfigError(f"need at least C={vocab.C} items so every cluster is non-empty")
    rng = derive(seed, "catalog")
    codes = np.zeros((n_items, vocab.K), dtype=np.int64)
    seen = set()
    for i in range(n_items):
        codes[i, 0] = i % vocab.C
        while True:
            for k in range(1, vocab.K):
                codes[i, k] = rng.randint(vocab.C)
            tup = tuple(codes[i])
            if tup not in seen:
                seen.add(tup)
                break
    return Catalog(codes=codes)


def cluster_members(catalog: Catalog) -> list:
    """Item ids per cluster, ascending cluster order."""
    n_clusters = int(catalog.codes[:, 0].max()) + 1
    return [np.nonzero(catalog.codes[:, 0] == c)[0] for c in range(n_clusters)]


def gen_user_sequences(
    seed: int,
    n_users: int,
    catalog: Catalog,
    len_range=(15, 40),
    stay_prob: float = 0.8,
) -> list:
    """One cluster-Markov walk per user; per-user derived rng streams."""
    lo, hi = int(len_range[0]), int(len_range[1])
    if lo < N_TARGET + 1:
        raise ConfigError(f"minimum sequence length {lo} leaves no history")
    if hi < lo:
        raise ConfigError("empty length range")
    members = cluster_members(catalog)
    n_clusters = len(members)
    records = []
    for uid in range(n_users):
        rng = derive(seed, "user", uid)
        length = lo + rng.randint(hi - lo + 1)
        cluster = rng.randint(n_clusters)
        items = []
        for _ in range(length):
            pool = members[cluster]
            items.append(int(pool[rng.randint(len(pool))]))
            if rng.uniform() >= stay_prob and n_clusters > 1:
                jump = rng.randint(n_clusters - 1)
                cluster = jump + 1 if jump >= cluster else jump
        records.append(
            UserRecord(user_id=uid, history=tuple(items[:-N_TARGET]), target=tuple(items[-N_TARGET:]))
        )
    return records


def build_splits(seed: int, users) -> SplitSet:
    """Seeded shuffle, then an 8:1:1 user-level partition."""
    ids = [int(u) for u in users]
    if len(ids) < 10:
        raise ConfigError(f"need at least 10 users to split, got {len(ids)}")
    rng = derive(seed, "splits")
    rng.shuffle(ids)
    n = len(ids)
    n_train = (8 * n) // 10
    n_valid = n // 10
    return SplitSet(
        train=tuple(sorted(ids[:n_train])),
        valid=tuple(sorted(ids[n_train:n_train + n_valid])),
        test=tuple(sorted(ids[n_train + n_valid:])),
    )


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

STREAMS_FILE = "streams.tsv"
MANIFEST_FILE = "vocab.txt"
SPLIT_FILES = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}


def encode_records(records, catalog: Catalog, vocab: Vocabulary, template: PromptTemplate) -> dict:
    """user-id -> TokenStream for every record."""
    streams = {}
    for rec in records:
        hist = [catalog.item_tuple(i) for i in rec.history]
        tgt = [catalog.item_tuple(i) for i in rec.target]
        streams[rec.user_id] = encode_stream(hist, tgt, vocab, template)
    return streams


def write_dataset(out_dir, vocab: Vocabulary, streams: dict, splits: SplitSet) -> None:
    """Manifest + streams.tsv + one user-id-per-line split files."""
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(os.path.join(out_dir, MANIFEST_FILE), vocab)
    with open(os.path.join(out_dir, STREAMS_FILE), "w", encoding="ascii") as fh:
        for uid in sorted(streams):
            s = streams[uid]
            toks = " ".join(str(int(t)) for t in s.tokens)
            fh.write(f"{uid}\t{s.t0}\t{toks}\n")
    for name, fname in SPLIT_FILES.items():
        with open(os.path.join(out_dir, fname), "w", encoding="ascii") as fh:
            for uid in getattr(splits, name):
                fh.write(f"{uid}\n")


@dataclass(frozen=True)
class Dataset:
    vocab: Vocabulary
    streams: dict  # user-id -> TokenStream
    splits: SplitSet

    def split_streams(self, name: str) -> list:
        return [self.streams[uid] for uid in getattr(self.splits, name)]


def load_dataset(data_dir) -> Dataset:
    from padrec.tokenspace import slots_of

    vocab = read_manifest(os.path.join(data_dir, MANIFEST_FILE))
    streams = {}
    with open(os.path.join(data_dir, STREAMS_FILE), "r", encoding="ascii") as fh:
        for line in fh:
            uid_s, t0_s, toks_s = line.rstrip("\n").split("\t")
            tokens = np.array([int(t) for t in toks_s.split(" ")], dtype=np.int64)
            streams[int(uid_s)] = TokenStream(
                tokens=tokens, t0=int(t0_s), labels=slots_of(tokens, vocab)
            )
    parts = {}
    for name, fname in SPLIT_FILES.items():
        with open(os.path.join(data_dir, fname), "r", encoding="ascii") as fh:
            parts[name] = tuple(int(line) for line in fh if line.strip())
    return Dataset(vocab=vocab, streams=streams, splits=SplitSet(**parts))


def generate_dataset(
    out_dir,
    seed: int,
    n_items: int,
    n_users: int,
    vocab: Vocabulary,
    len_range=(15, 40),
    stay_prob: float = 0.8,
) -> Dataset:
    """Full pipeline: catalog -> walks -> splits -> files on disk."""
    catalog = gen_catalog(seed, n_items, vocab)
    records = gen_user_sequences(seed, n_users, catalog, len_range, stay_prob)
    splits = build_splits(seed, [r.user_id for r in records])
    streams = encode_records(records, catalog, vocab, default_template(vocab))
    write_dataset(out_dir, vocab, streams, splits)
    return Dataset(vocab=vocab, streams=streams, splits=splits)
