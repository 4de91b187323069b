"""Benchmark harness: matched AR/SD runs over test prompts, CSV reports.

One report row per (configuration, seed); per-user results are averaged
inside the row. AR rows carry depth=0/width=0 and leave the SD wall and
speedup columns empty; SD rows repeat the matched AR wall so the speedup
column can be re-derived from the file alone. All floats are written with
full repr precision, which keeps re-runs byte-identical (timing excluded)
and parse-back division exact.
"""

import os
from dataclasses import dataclass

import numpy as np

from padrec.errors import ConfigError, InvariantError, RangeError
from padrec.metrics import ndcg_at_10, recall_at_10
from padrec.numkit.rng import derive
from padrec.specdec import run_session
from padrec.tokenspace import parse_response

COLUMNS = (
    "config_id", "seed", "ablation", "temperature", "depth", "width",
    "tau", "target_calls", "draft_calls", "committed",
    "wall_ms_sd", "wall_ms_ar", "speedup",
    "recall_at_10", "ndcg_at_10", "flag_rate",
)


@dataclass(frozen=True)
class GridPoint:
    """One SD configuration: sampling temperature, tree depth, beam width."""

    temperature: float
    depth: int
    width: int


@dataclass(frozen=True)
class BenchRow:
    config_id: str
    seed: int
    ablation: str        # draft ablation mode; "" on AR rows
    temperature: float
    depth: int           # 0 on AR rows
    width: int           # 0 on AR rows
    tau: float
    target_calls: float
    draft_calls: float
    committed: float
    wall_ms_sd: float    # None when timing is off or on AR rows
    wall_ms_ar: float    # None when timing is off
    speedup: float       # wall_ms_ar / wall_ms_sd; None when unavailable
    recall_at_10: float
    ndcg_at_10: float
    flag_rate: float     # fraction of outputs that fail the response parse


@dataclass(frozen=True)
class PromptCase:
    """One test user: encoded prompt, generation budget, ground-truth items."""

    user_id: int
    prompt: np.ndarray   # tokens up to the response start, (t0,) int64
    max_new: int         # true response length incl. EOS
    truth: list          # ground-truth item tuples (the held-out last 10)


# ---------------------------------------------------------------------------
# prompt extraction
# ---------------------------------------------------------------------------


def prompt_cases(dataset, limit=None) -> list:
    """PromptCase per test-split user, in split order (optionally capped)."""
    uids = dataset.splits.test if limit is None else dataset.splits.test[:limit]
    cases = []
    for uid in uids:
        s = dataset.streams[uid]
        items, ok = parse_response(s.tokens[s.t0:], dataset.vocab)
        if not ok:
            raise InvariantError(f"ground-truth response of user {uid} does not parse")
        cases.append(PromptCase(
            user_id=int(uid),
            prompt=s.tokens[:s.t0].copy(),
            max_new=int(len(s.tokens) - s.t0),
            truth=items,
        ))
    if not cases:
        raise RangeError("no test prompts")
    return cases


def _quality(tokens, truth, vocab):
    items, ok = parse_response(tokens, vocab)
    return recall_at_10(items, truth), ndcg_at_10(items, truth), (0.0 if ok else 1.0)


def _mean(vals) -> float:
    return float(np.mean(np.asarray(vals, dtype=np.float64)))


# ---------------------------------------------------------------------------
# measurement legs
# ---------------------------------------------------------------------------


def _ar_leg(target, cases, temperature: float, seed: int, vocab) -> dict:
    """Plain autoregressive decoding over every case; the baseline leg."""
    calls, committed, wall, rec, ndcg, flag = [], [], [], [], [], []
    for c in cases:
        rng = derive(seed, "bench", c.user_id)
        g = target.generate_ar(c.prompt, c.max_new, temperature, rng)
        r, n, fl = _quality(g.tokens, c.truth, vocab)
        calls.append(g.target_calls)
        committed.append(len(g.tokens))
        wall.append(g.wall_ms)
        rec.append(r)
        ndcg.append(n)
        flag.append(fl)
    return {"calls": calls, "committed": committed, "wall": wall,
            "recall": rec, "ndcg": ndcg, "flag": flag}


def _sd_leg(target, draft, cases, point: GridPoint, seed: int, vocab) -> dict:
    """Speculative decoding with the same per-user rng derivation as AR."""
    tau, tcalls, dcalls, committed, wall = [], [], [], [], []
    rec, ndcg, flag = [], [], []
    for c in cases:
        rng = derive(seed, "bench", c.user_id)
        rep = run_session(target, draft, c.prompt, c.max_new,
                          point.depth, point.width, point.temperature, rng)
        r, n, fl = _quality(rep.tokens, c.truth, vocab)
        tau.append(rep.tau)
        tcalls.append(rep.target_calls)
        dcalls.append(rep.draft_calls)
        committed.append(rep.committed)
        wall.append(rep.wall_ms)
        rec.append(r)
        ndcg.append(n)
        flag.append(fl)
    return {"tau": tau, "calls": tcalls, "draft_calls": dcalls,
            "committed": committed, "wall": wall,
            "recall": rec, "ndcg": ndcg, "flag": flag}


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


def _tag(temperature: float) -> str:
    return f"{temperature:g}"


def _ar_row(leg, temperature, seed, timing) -> BenchRow:
    return BenchRow(
        config_id=f"ar-t{_tag(temperature)}", seed=seed, ablation="",
        temperature=temperature, depth=0, width=0,
        tau=1.0,
        target_calls=_mean(leg["calls"]),
        draft_calls=0.0,
        committed=_mean(leg["committed"]),
        wall_ms_sd=None,
        wall_ms_ar=_mean(leg["wall"]) if timing else None,
        speedup=None,
        recall_at_10=_mean(leg["recall"]),
        ndcg_at_10=_mean(leg["ndcg"]),
        flag_rate=_mean(leg["flag"]),
    )


def _sd_row(leg, ar_leg, point, seed, ablation, timing) -> BenchRow:
    wall_sd = _mean(leg["wall"]) if timing else None
    wall_ar = _mean(ar_leg["wall"]) if timing else None
    speedup = (wall_ar / wall_sd) if timing else None
    return BenchRow(
        config_id=f"sd-b{point.depth}-w{point.width}-t{_tag(point.temperature)}",
        seed=seed, ablation=ablation,
        temperature=point.temperature, depth=point.depth, width=point.width,
        tau=_mean(leg["tau"]),
        target_calls=_mean(leg["calls"]),
        draft_calls=_mean(leg["draft_calls"]),
        committed=_mean(leg["committed"]),
        wall_ms_sd=wall_sd,
        wall_ms_ar=wall_ar,
        speedup=speedup,
        recall_at_10=_mean(leg["recall"]),
        ndcg_at_10=_mean(leg["ndcg"]),
        flag_rate=_mean(leg["flag"]),
    )


def _check_compatible(dataset, target, draft) -> None:
    S = dataset.vocab.S
    if target.config.vocab_size != S:
        raise ConfigError(f"target vocab {target.config.vocab_size} != dataset vocab {S}")
    if draft is not None and draft.vocab_size != S:
        raise ConfigError(f"draft vocab {draft.vocab_size} != dataset vocab {S}")


def run_benchmark(dataset, target, draft, points, seeds,
                  max_users=None, timing: bool = True) -> list:
    """AR + SD rows for every (grid point, seed) over the test split.

    AR runs once per (temperature, seed) and its wall time is reused as the
    matched denominator for every SD row at that temperature."""
    _check_compatible(dataset, target, draft)
    points = list(points)
    if not points:
        raise RangeError("empty benchmark grid")
    for pt in points:
        if pt.depth < 1 or pt.width < 1:
            raise RangeError(f"depth/width must be >= 1, got {pt}")
        if pt.depth > draft.config.b_train:
            raise ConfigError(
                f"depth {pt.depth} exceeds the draft's trained depth {draft.config.b_train}")
    cases = prompt_cases(dataset, max_users)
    rows = []
    for seed in seeds:
        ar_legs = {}
        for pt in points:
            if pt.temperature not in ar_legs:
                leg = _ar_leg(target, cases, pt.temperature, seed, dataset.vocab)
                ar_legs[pt.temperature] = leg
                rows.append(_ar_row(leg, pt.temperature, seed, timing))
            sd = _sd_leg(target, draft, cases, pt, seed, dataset.vocab)
            rows.append(_sd_row(sd, ar_legs[pt.temperature], pt, seed,
                                draft.config.ablation, timing))
    return rows


def depth_sweep(dataset, target, draft, depths, seeds=(0,), width: int = 10,
                max_users=None, timing: bool = True) -> list:
    """T=0 benchmark rows across tree depths (one SD row per depth and seed)."""
    depths = [int(b) for b in depths]
    if not depths:
        raise RangeError("empty depth list")
    if max(depths) > draft.config.b_train:
        raise ConfigError(
            f"sweep depth {max(depths)} exceeds the draft's trained depth {draft.config.b_train}")
    points = [GridPoint(temperature=0.0, depth=b, width=width) for b in depths]
    return run_benchmark(dataset, target, draft, points, seeds,
                         max_users=max_users, timing=timing)


# ---------------------------------------------------------------------------
# csv io
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_report(rows, path) -> None:
    """CSV with the exact COLUMNS order; empty cells for missing timing."""
    if not rows:
        raise RangeError("refusing to write an empty report")
    lines = [",".join(COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in COLUMNS))
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> list:
    """Parse a report CSV back into BenchRow values ("" -> None)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != ",".join(COLUMNS):
        raise ConfigError(f"unrecognized report header in {path}")
    def num(s):
        return None if s == "" else float(s)
    rows = []
    for ln in lines[1:]:
        f = ln.split(",")
        if len(f) != len(COLUMNS):
            raise ConfigError(f"bad report row: {ln!r}")
        rows.append(BenchRow(
            config_id=f[0], seed=int(f[1]), ablation=f[2], temperature=float(f[3]),
            depth=int(f[4]), width=int(f[5]), tau=float(f[6]),
            target_calls=float(f[7]), draft_calls=float(f[8]), committed=float(f[9]),
            wall_ms_sd=num(f[10]), wall_ms_ar=num(f[11]), speedup=num(f[12]),
            recall_at_10=float(f[13]), ndcg_at_10=float(f[14]), flag_rate=float(f[15]),
        ))
    return rows
