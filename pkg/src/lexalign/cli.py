"""Command-line pipeline: synth -> train -> refine -> evaluate / translate / export.

Every command accepts ``--config FILE`` with flat ``key = value`` lines
(keys are flag names without the leading dashes, ``-`` or ``_`` both
accepted); explicit flags override the file.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import adversarial as adv
from .embeddings import (
    EmbeddingFormatError,
    generate_synthetic_pair,
    load_text_embeddings,
    save_text_embeddings,
)
from .evaluation import (
    DictionaryFormatError,
    error_analysis,
    export_vectors,
    format_report,
    load_dictionary,
    precision_at_k,
    save_dictionary,
    translate,
    write_report_csv,
)
from .procrustes import refine, refine_inverse, save_induced_dictionary
from .similarity import parse_metric

logger = logging.getLogger("lexalign")

# exit codes, one per diagnostic class
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_DIMENSION = 5
EXIT_DIVERGED = 6


class DimensionMismatch(ValueError):
    pass


class UsageError(ValueError):
    pass


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def write_config(path, values):
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(values):
            if values[key] is not None:
                f.write(f"{key} = {values[key]}\n")


# --------------------------------------------------------------------------
# argument parsing

def _common(p):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _spaces(p, dictionary=False):
    p.add_argument("--source", help="source embeddings (word2vec text)")
    p.add_argument("--target", help="target embeddings (word2vec text)")
    p.add_argument("--max-vocab", type=int, default=None)
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=True)
    if dictionary:
        p.add_argument("--dict", help="bilingual dictionary, 'source target' per line")


def _metric(p, default="csls"):
    p.add_argument("--metric", choices=["ip", "csls"], default=default)
    p.add_argument("--csls-t", type=int, default=10)


def build_parser():
    parser = argparse.ArgumentParser(prog="lexalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic language pair")
    _common(p)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--clusters", type=int, default=0,
                   help="Gaussian mixture components (0: isotropic Gaussian)")
    p.add_argument("--cluster-spread", type=float, default=0.5)
    p.add_argument("--no-shuffle", dest="shuffle", action="store_false", default=True)
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=True)

    p = sub.add_parser("train", help="two-way adversarial training")
    _common(p)
    _spaces(p)
    _metric(p)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--steps-per-epoch", type=int, default=1000)
    p.add_argument("--disc-steps", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lr-decay", type=float, default=0.95)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--hidden-dim", type=int, default=2048)
    p.add_argument("--leaky-slope", type=float, default=0.2)
    p.add_argument("--sample-vocab-limit", type=int, default=None)
    p.add_argument("--criterion-k", type=int, default=10000)
    p.add_argument("--w-schedule", choices=["both", "alternate"], default="both")
    p.add_argument("--restarts", type=int, default=1,
                   help="independent initialisations; keep the best by criterion")

    p = sub.add_parser("refine", help="Procrustes refinement of a checkpoint")
    _common(p)
    _spaces(p)
    _metric(p)
    p.add_argument("--map", help="checkpoint to refine (default: OUT/map.txt)")
    p.add_argument("--query-limit", type=int, default=10000)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--reuse-dictionary", action="store_true",
                   help="refine Z on the transposed forward dictionary instead of re-inducing")

    p = sub.add_parser("translate", help="print top-k translations")
    _common(p)
    _spaces(p)
    _metric(p)
    p.add_argument("--map", help="checkpoint (default: OUT/refined.txt)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--inverse", action="store_true", help="translate target words with Z")
    p.add_argument("--words", help="file with one query word per line (default: stdin)")

    p = sub.add_parser("evaluate", help="P@k against a dictionary")
    _common(p)
    _spaces(p, dictionary=True)
    _metric(p)
    p.add_argument("--map", help="checkpoint (default: OUT/refined.txt)")
    p.add_argument("--errors", type=int, default=8, help="number of misses to list")

    p = sub.add_parser("export", help="vector CSV for plotting")
    _common(p)
    _spaces(p, dictionary=True)
    p.add_argument("--map", help="checkpoint (default: OUT/refined.txt)")
    p.add_argument("--limit", type=int, default=1500, help="dictionary words to export")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {args.config}: {exc}") from exc
        explicit = _explicit_dests(parser, args.command, argv)
        valid = {k: v for k, v in vars(args).items()}
        for key, raw in cfg.items():
            if key not in valid or key in ("command", "config"):
                raise UsageError(f"unknown config key {key!r}")
            if key in explicit:
                continue
            setattr(args, key, _coerce(raw, valid[key], parser, args.command, key))
    return args


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        return action.choices[command]


def _explicit_dests(parser, command, argv):
    sp = _subparser(parser, command)
    given = set()
    for action in sp._actions:
        if any(opt in argv or any(a.startswith(opt + "=") for a in argv) for opt in action.option_strings):
            given.add(action.dest)
    return given


def _coerce(raw, current, parser, command, key):
    sp = _subparser(parser, command)
    action = next(a for a in sp._actions if a.dest == key)
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return raw.lower() in ("1", "true", "yes", "on")
    if action.type is not None and raw.lower() != "none":
        return action.type(raw)
    if raw.lower() == "none":
        return None
    if action.choices and raw not in action.choices:
        raise UsageError(f"config {key} = {raw!r} not in {sorted(action.choices)}")
    return raw


# --------------------------------------------------------------------------
# commands

def _load_spaces(args):
    if not args.source or not args.target:
        raise UsageError("--source and --target are required")
    src = load_text_embeddings(args.source, args.max_vocab, args.normalize, lang_id="src")
    tgt = load_text_embeddings(args.target, args.max_vocab, args.normalize, lang_id="tgt")
    if src.dim != tgt.dim:
        raise DimensionMismatch(f"source dim {src.dim} != target dim {tgt.dim}")
    return src, tgt


def _load_map(args, default_name, d):
    path = args.map or os.path.join(args.out, default_name)
    w, z = adv.load_checkpoint(path)
    if w.shape[0] != d:
        raise DimensionMismatch(f"checkpoint dim {w.shape[0]} != embedding dim {d}")
    return w, z


def cmd_synth(args):
    pair = generate_synthetic_pair(args.seed, args.n, args.d, args.noise, args.shuffle, args.normalize,
                                   clusters=args.clusters, cluster_spread=args.cluster_spread)
    os.makedirs(args.out, exist_ok=True)
    save_text_embeddings(pair.source, os.path.join(args.out, "src.vec"))
    save_text_embeddings(pair.target, os.path.join(args.out, "tgt.vec"))
    save_dictionary(pair.ground_truth_dictionary, os.path.join(args.out, "dict.txt"))
    q = pair.ground_truth_rotation
    adv.save_checkpoint(os.path.join(args.out, "truth.txt"), q, q.T)
    print(f"wrote synthetic pair n={args.n} d={args.d} noise={args.noise} to {args.out}")


def trainer_config(args):
    return adv.TrainerConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        disc_steps=args.disc_steps,
        lr0=args.lr,
        lr_decay_per_epoch=args.lr_decay,
        beta=args.beta,
        sample_vocab_limit=args.sample_vocab_limit,
        criterion_k=args.criterion_k,
        criterion_metric=parse_metric(args.metric, args.csls_t),
        leaky_slope=args.leaky_slope,
        hidden_dim=args.hidden_dim,
        seed=args.seed,
        w_schedule=args.w_schedule,
        restarts=args.restarts,
    )


def cmd_train(args):
    src, tgt = _load_spaces(args)
    cfg = trainer_config(args)
    os.makedirs(args.out, exist_ok=True)
    state = adv.train(cfg, src, tgt,
                      callback=lambda st, rec: print(f"epoch {rec.epoch}: criterion {rec.criterion:.6f}"))
    adv.save_checkpoint(os.path.join(args.out, "map.txt"), state.best_w, state.best_z)
    adv.write_history_csv(os.path.join(args.out, "history.csv"), state.history)
    print(f"best epoch {state.best_epoch} criterion {state.best_criterion:.6f}")


def cmd_refine(args):
    src, tgt = _load_spaces(args)
    w0, z0 = _load_map(args, "map.txt", src.dim)
    metric = parse_metric(args.metric, args.csls_t)
    fwd = refine(w0, src, tgt, metric, args.query_limit, args.iterations)
    inv = refine_inverse(z0, src, tgt, metric, args.query_limit, args.iterations,
                         reuse_dictionary=fwd.dictionary if args.reuse_dictionary else None)
    os.makedirs(args.out, exist_ok=True)
    adv.save_checkpoint(os.path.join(args.out, "refined.txt"), fwd.w, inv.w)
    if fwd.dictionary is not None:
        save_induced_dictionary(fwd.dictionary, src.vocab, tgt.vocab, os.path.join(args.out, "induced_fwd.txt"))
    if inv.dictionary is not None:
        save_induced_dictionary(inv.dictionary, tgt.vocab, src.vocab, os.path.join(args.out, "induced_inv.txt"))
    print(f"forward dictionary sizes {fwd.dictionary_sizes}; inverse {inv.dictionary_sizes}")
    if fwd.aborted or inv.aborted:
        print("warning: refinement stopped early (no mutual nearest neighbors)", file=sys.stderr)


def cmd_translate(args):
    src, tgt = _load_spaces(args)
    w, z = _load_map(args, "refined.txt", src.dim)
    metric = parse_metric(args.metric, args.csls_t)
    if args.inverse:
        src, tgt, w = tgt, src, z
    if args.words:
        with open(args.words, encoding="utf-8") as f:
            words = [ln.strip() for ln in f if ln.strip()]
    else:
        words = [ln.strip() for ln in sys.stdin if ln.strip()]
    known = [wd for wd in words if wd in src]
    for wd in words:
        if wd not in src:
            print(f"{wd}\t<unknown>")
    if not known:
        return
    k = min(args.k, tgt.n)
    idx, _ = translate(w, src, tgt, [src.index(wd) for wd in known], metric, k)
    for wd, row in zip(known, idx):
        print(wd + "\t" + " ".join(tgt.vocab[j] for j in row))


def cmd_evaluate(args):
    src, tgt = _load_spaces(args)
    if not args.dict:
        raise UsageError("--dict is required")
    w, z = _load_map(args, "refined.txt", src.dim)
    metric = parse_metric(args.metric, args.csls_t)
    dictionary = load_dictionary(args.dict)
    os.makedirs(args.out, exist_ok=True)
    blocks = []
    for name, m, a, b, d in (("forward", w, src, tgt, dictionary),
                             ("inverse", z, tgt, src, dictionary.inverted())):
        rep = precision_at_k(m, a, b, d, metric)
        write_report_csv(rep, os.path.join(args.out, f"report_{name}.csv"))
        text = format_report(rep, f"[{name}]")
        misses = error_analysis(rep, args.errors)
        if misses:
            text += "\nsource\tpredicted\tacceptable\trank"
            for r in misses:
                rank = r.rank if r.rank is not None else f">{rep.rank_depth}"
                text += f"\n{r.source}\t{r.predicted}\t{','.join(sorted(r.acceptable))}\t{rank}"
        blocks.append(text)
    report = "\n\n".join(blocks)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report + "\n")
    print(report)


def cmd_export(args):
    src, tgt = _load_spaces(args)
    w, _ = _load_map(args, "refined.txt", src.dim)
    if args.dict:
        dictionary = load_dictionary(args.dict)
        pairs = [(s, sorted(t)[0]) for s, t in dictionary.items() if s in src and sorted(t)[0] in tgt]
        pairs = pairs[:args.limit]
        words = [[s for s, _ in pairs], list(dict.fromkeys(t for _, t in pairs))]
    else:
        words = [list(src.vocab[:args.limit]), list(tgt.vocab[:args.limit])]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "vectors.csv")
    n = export_vectors(path, [src, tgt], [w, None], words)
    print(f"wrote {n} rows to {path}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "refine": cmd_refine,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
        if args.command in ("train", "refine", "synth"):
            write_config(os.path.join(args.out, f"{args.command}.config"),
                         {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")})
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EmbeddingFormatError, DictionaryFormatError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DimensionMismatch as exc:
        print(f"dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except adv.TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
