"""Command-line front end: data generation, training, benchmarks, plots.

Exit codes: 0 success, 1 usage error, 2 invariant violation, 3 I/O error.
Heavy imports stay inside the command bodies so --help is instant.
"""

import argparse
import sys

from padrec.errors import InvariantError, UsageError

ABLATION_CHOICES = ("full", "no-ipe", "no-spe", "no-both-gates",
                    "no-ipe-gate", "no-spe-gate", "baseline")


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns exit codes."""

    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list:
    try:
        vals = [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise UsageError(f"expected at least one integer in {text!r}")
    return vals


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------


def _load_data(data_dir):
    from padrec.datagen import load_dataset

    return load_dataset(data_dir)


def _load_pair(dataset, target_path, draft_path):
    import numpy as np

    from padrec.model.checkpoint import load_draft, load_target
    from padrec.tokenspace import slots_of

    target = load_target(target_path)
    slot_table = slots_of(np.arange(dataset.vocab.S), dataset.vocab)
    draft = load_draft(draft_path, target, slot_table)
    return target, draft


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    from padrec.datagen import generate_dataset
    from padrec.tokenspace import build_vocab

    vocab = build_vocab(args.k, args.codebook, args.ctx_words)
    generate_dataset(args.out, args.seed, args.items, args.users, vocab)
    print(f"wrote dataset ({args.items} items, {args.users} users, "
          f"vocab {vocab.S}) to {args.out}")
    return 0


def _cmd_train_target(args) -> int:
    from padrec.datagen import load_dataset
    from padrec.model.checkpoint import save_target
    from padrec.model.config import TargetConfig, heavy_target_config
    from padrec.model.target import init_target
    from padrec.trainer import train_target

    ds = load_dataset(args.data)
    cfg = (heavy_target_config(ds.vocab.S) if args.heavy
           else TargetConfig(vocab_size=ds.vocab.S))
    model = init_target(cfg, args.seed)
    train_target(model, ds.split_streams("train"), ds.split_streams("valid"),
                 epochs=args.epochs, lr=args.lr, seed=args.seed,
                 batch=args.batch, log_path=args.out + ".train.csv")
    save_target(args.out, model)
    print(f"saved target checkpoint to {args.out}")
    return 0


def _cmd_train_draft(args) -> int:
    import numpy as np

    from padrec.datagen import load_dataset
    from padrec.model.checkpoint import load_target, save_draft
    from padrec.model.config import DraftConfig
    from padrec.model.draft import init_draft
    from padrec.tokenspace import slots_of
    from padrec.trainer import collect_features, train_draft

    ds = load_dataset(args.data)
    target = load_target(args.target)
    slot_table = slots_of(np.arange(ds.vocab.S), ds.vocab)
    cfg = DraftConfig(n_slots=ds.vocab.n_slots, b_train=args.depth_train,
                      ablation=args.ablation)
    draft = init_draft(target, cfg, slot_table, args.seed)
    bank = collect_features(target, ds.split_streams("train"))
    train_draft(draft, bank, epochs=args.epochs, lr=args.lr, seed=args.seed,
                lam=args.aux_weight, k_aux=args.topk_aux,
                log_path=args.out + ".train.csv",
                val_streams=ds.split_streams("valid"))
    save_draft(args.out, draft)
    print(f"saved draft checkpoint ({args.ablation}) to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    from padrec.bench import GridPoint, run_benchmark, write_report

    if args.depth < 1 or args.width < 1:
        raise UsageError("--depth and --width must be >= 1")
    if args.temperature < 0:
        raise UsageError("--temperature must be >= 0")
    ds = _load_data(args.data)
    target, draft = _load_pair(ds, args.target, args.draft)
    point = GridPoint(temperature=args.temperature, depth=args.depth, width=args.width)
    rows = run_benchmark(ds, target, draft, [point], _int_list(args.seeds),
                         max_users=args.max_users, timing=not args.no_timing)
    write_report(rows, args.out)
    print(f"wrote {len(rows)} report rows to {args.out}")
    return 0


def _cmd_sweep_depth(args) -> int:
    import os

    from padrec.bench import depth_sweep, write_report
    from padrec.svgplot import sweep_chart, write_svg

    depths = _int_list(args.depths)
    if min(depths) < 1 or args.width < 1:
        raise UsageError("depths and --width must be >= 1")
    ds = _load_data(args.data)
    target, draft = _load_pair(ds, args.target, args.draft)
    rows = depth_sweep(ds, target, draft, depths, seeds=_int_list(args.seeds),
                       width=args.width, max_users=args.max_users,
                       timing=not args.no_timing)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    svg_path = os.path.join(args.out, "sweep.svg")
    write_report(rows, csv_path)
    write_svg(sweep_chart(rows), svg_path)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def _cmd_plot(args) -> int:
    from padrec.bench import read_report
    from padrec.svgplot import plot_report

    files = plot_report(read_report(args.report), args.out)
    for f in files:
        print(f"wrote {f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="padrec",
                description="speculative decoding for list-wise recommendation streams")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic interaction corpus")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--items", type=int, default=500)
    g.add_argument("--users", type=int, default=2000)
    g.add_argument("--k", type=int, default=4, help="semantic-id levels per item")
    g.add_argument("--codebook", type=int, default=32, help="codes per level")
    g.add_argument("--ctx-words", type=int, default=16)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train-target", help="train the target transformer")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--epochs", type=int, default=2)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--heavy", action="store_true",
                   help="scaled-up config for the relative speedup study")
    t.set_defaults(func=_cmd_train_target)

    d = sub.add_parser("train-draft", help="train the one-layer draft add-on")
    d.add_argument("--data", required=True)
    d.add_argument("--target", required=True, help="target checkpoint path")
    d.add_argument("--out", required=True, help="draft checkpoint path")
    d.add_argument("--depth-train", type=int, default=6)
    d.add_argument("--topk-aux", type=int, default=8)
    d.add_argument("--aux-weight", type=float, default=1.0)
    d.add_argument("--ablation", choices=ABLATION_CHOICES, default="full")
    d.add_argument("--lr", type=float, default=1e-3)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--epochs", type=int, default=2)
    d.set_defaults(func=_cmd_train_draft)

    b = sub.add_parser("bench", help="matched AR/SD benchmark over the test split")
    b.add_argument("--data", required=True)
    b.add_argument("--target", required=True)
    b.add_argument("--draft", required=True)
    b.add_argument("--depth", type=int, default=6)
    b.add_argument("--width", type=int, default=10)
    b.add_argument("--temperature", type=float, default=0.0)
    b.add_argument("--seeds", default="0", help="comma-separated seed list")
    b.add_argument("--out", required=True, help="report CSV path")
    b.add_argument("--max-users", type=int, default=None)
    b.add_argument("--no-timing", action="store_true",
                   help="leave wall/speedup columns empty (byte-reproducible CSV)")
    b.set_defaults(func=_cmd_bench)

    s = sub.add_parser("sweep-depth", help="tau/speedup across tree depths")
    s.add_argument("--data", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--draft", required=True)
    s.add_argument("--depths", default="1,2,4,6,8,10,12")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seeds", default="0")
    s.add_argument("--width", type=int, default=10)
    s.add_argument("--max-users", type=int, default=None)
    s.add_argument("--no-timing", action="store_true")
    s.set_defaults(func=_cmd_sweep_depth)

    pl = sub.add_parser("plot", help="render SVG charts from a report CSV")
    pl.add_argument("--report", required=True)
    pl.add_argument("--out", required=True, help="output directory")
    pl.set_defaults(func=_cmd_plot)

    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
