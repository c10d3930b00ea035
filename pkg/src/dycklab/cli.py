"""``dycklab`` command-line entry point.

Every subcommand writes into a run directory together with the manifest
that produced it. Structured config files (JSON, keyed by option name, or a
previous run's ``manifest.json``) are accepted via ``--config``; explicit
flags override file values.

Exit codes: 0 success, 1 domain failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import random
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import DyckLabError

log = logging.getLogger("dycklab")

PRESETS = {"unbounded": "unbounded", "bounded-depth": "bounded_depth", "bounded-length": "bounded_length"}
STOCHASTIC = {"gen", "verify", "precision-sweep", "train", "eval", "sweep", "robustness", "probe-depth",
              "probe-stack", "dump-states"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _out_dir(args) -> Path:
    root = Path(os.environ.get("DYCKLAB_OUT", "runs"))
    path = Path(args.out) if getattr(args, "out", None) else root / args.command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest_args(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "config") and not k.startswith("_")}


def _write_manifest(out: Path, args, **extra) -> None:
    manifest = {
        "command": args.command,
        "version": __version__,
        "args": _manifest_args(args),
        "experiment": getattr(args, "experiment", None),
        "n": getattr(args, "n", None),
        "seed": getattr(args, "seed", None),
        "output": str(out),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _parse_bits(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        return list(range(int(lo), int(hi) + 1)) if sep else [int(lo)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO..HI, got {text!r}") from None


def _load_dpda(args):
    from .dyck import Vocab
    from .pda import build_dyck_dpda, load_dpda

    target = args.against
    if target.startswith("dyck") and target[4:].isdigit():
        n = int(target[4:])
        return build_dyck_dpda(n), Vocab(n)
    return load_dpda(target), None


def _model_config(args, vocab_size: int):
    from .models import ModelConfig

    return ModelConfig(kind=args.model, hidden=args.hidden, layers=args.layers, heads=args.heads,
                       use_positional=not args.no_positional, vocab_size=vocab_size, seed=args.seed)


def _experiment(args):
    from .ncp import build_experiment

    return build_experiment(args.experiment, args.n, seed=args.data_seed if args.data_seed is not None else args.seed,
                            train_size=args.train_size, bin_size=args.bin_size)


def _read_words(path: str, vocab):
    from .dyck import read_dataset

    data = read_dataset(path)
    if data.vocab.n != vocab.n:
        raise UsageError(f"{path} holds Dyck-{data.vocab.n} words, expected Dyck-{vocab.n}")
    return data.words


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    from .dyck import BinSpec, SamplerParams, Vocab, sample_bin, write_dataset
    from .ncp import experiment_specs

    vocab = Vocab(args.n)
    params = SamplerParams(p=args.p, q=args.q, seed=args.seed)
    out = _out_dir(args)
    if args.preset:
        name = PRESETS[args.preset]
        train, bins = experiment_specs(name, args.train_size, args.bin_size)
        specs = [train] + bins
    else:
        if not args.length:
            raise UsageError("gen needs --preset or --length LO HI")
        specs = [BinSpec(args.size, tuple(args.length), tuple(args.depth) if args.depth else None, "custom")]
        name = "custom"
    counts = {}
    for spec in specs:
        words = sample_bin(spec, params, vocab, rng=random.Random(f"{args.seed}:{name}:{spec.name}"))
        write_dataset(out / f"{spec.name}.txt", words, vocab, params, args.seed)
        counts[spec.name] = len(words)
    _write_manifest(out, args, sampler=asdict(params))
    _emit({"output": str(out), "files": counts})
    return 0


def cmd_enumerate(args) -> int:
    from .dyck import Vocab, enumerate_words, write_dataset

    vocab = Vocab(args.n)
    t0 = time.perf_counter()
    words = enumerate_words(vocab, args.max_len)
    if args.words_out:
        write_dataset(args.words_out, words, vocab)
    if args.print_words:
        for w in words:
            print(vocab.render(w, sep="") or "<empty>")
    log.info("enumerated %d words in %.3fs", len(words), time.perf_counter() - t0)
    print(len(words))
    return 0


def cmd_compile(args) -> int:
    from .construction import compile_dpda, save_rnn
    from .pda import build_dyck_dpda, load_dpda

    if (args.dyck is None) == (args.spec is None):
        raise UsageError("give exactly one of --dyck N or --spec FILE")
    dpda = build_dyck_dpda(args.dyck) if args.dyck is not None else load_dpda(args.spec)
    rnn = compile_dpda(dpda)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_rnn(rnn, out)
    _emit({"weights": str(out), "dims": rnn.dims, "states": list(rnn.states), "hidden_dim": rnn.hidden_dim})
    return 0


def _verify_corpus(dpda, vocab, args):
    from .dyck import BinSpec, SamplerParams, corrupt_word, sample_bin

    rng = random.Random(args.seed)
    if vocab is None:
        # generic automaton: uniform random strings
        return [[rng.randrange(len(dpda.alphabet)) for _ in range(rng.randint(0, args.max_len))]
                for _ in range(args.trials)]
    half = args.trials // 2
    pos = sample_bin(BinSpec(args.trials - half, (2, args.max_len), (1, args.max_depth)),
                     SamplerParams(seed=args.seed), vocab, rng=rng)
    neg = [corrupt_word(w, vocab, rng) for w in pos[:half]]
    return pos + neg


def cmd_verify(args) -> int:
    from .construction import load_rnn, verify_exhaustive, verify_words

    rnn = load_rnn(args.weights)
    dpda, vocab = _load_dpda(args)
    if tuple(rnn.alphabet) != tuple(dpda.alphabet):
        raise UsageError("weight file and automaton use different alphabets")
    t0 = time.perf_counter()
    rep = verify_words(rnn, dpda, _verify_corpus(dpda, vocab, args))
    if args.exhaustive:
        rep = rep.merge(verify_exhaustive(rnn, dpda, args.exhaustive, valid_only=False))
    out = _out_dir(args)
    report = {"words": rep.words, "steps": rep.steps, "verdict_agree": rep.verdict_agree,
              "trace_agree": rep.trace_agree, "accepted": rep.accepted, "ok": rep.ok,
              "agreement": rep.trace_agree / rep.words if rep.words else 1.0,
              "mismatches": rep.mismatches, "seconds": round(time.perf_counter() - t0, 3)}
    (out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(out, args)
    _emit(report)
    return 0 if rep.ok else 1


def cmd_precision(args) -> int:
    from .construction import load_rnn, precision_sweep
    from .dyck import BinSpec, SamplerParams, sample_bin

    rnn = load_rnn(args.weights)
    dpda, vocab = _load_dpda(args)
    if vocab is None:
        raise UsageError("precision-sweep needs a dyckN automaton to sample words")
    words = sample_bin(BinSpec(args.words, (2, args.max_len), (1, args.max_depth)),
                       SamplerParams(seed=args.seed), vocab, rng=random.Random(args.seed))
    rows = precision_sweep(rnn, dpda, words, args.bits)
    out = _out_dir(args)
    with open(out / "precision.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("bits", "max_height", "words", "agree", "rate"))
        for r in rows:
            w.writerow((r.bits, r.max_height, r.words, r.agree, repr(r.rate)))
    _write_manifest(out, args)
    _emit({"csv": str(out / "precision.csv"), "rows": len(rows)})
    return 0


def cmd_train(args) -> int:
    from .models import build_model
    from .ncp import TrainConfig, train, write_bin_profile_csv, write_history_csv

    ex = _experiment(args)
    mcfg = _model_config(args, ex.vocab.size)
    tcfg = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, lr=args.lr, seed=args.seed)
    out = _out_dir(args)
    res = train(build_model(mcfg), ex.train_set, ex.bins, tcfg)
    res.model.save(out / "model.ckpt", {"train": asdict(tcfg), "experiment": args.experiment, "n": args.n})
    write_history_csv(out / "history.csv", res.history)
    write_bin_profile_csv(out / "bins.csv", res.model, ex)
    report = {"final": res.final, "epochs": len(res.history), "stopped_early": res.stopped_early}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(out, args, model=asdict(mcfg), train=asdict(tcfg))
    _emit(report)
    return 0


def cmd_eval(args) -> int:
    from .models import load_model
    from .ncp import evaluate

    model, meta = load_model(args.checkpoint)
    args.n = args.n or model.config.vocab_size // 2
    ex = _experiment(args)
    acc = {name: evaluate(model, samples).accuracy for name, samples in ex.bins.items()}
    out = _out_dir(args)
    with open(out / "eval.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("bin", "count", "accuracy"))
        for name, samples in ex.bins.items():
            w.writerow((name, len(samples), repr(acc[name])))
    _write_manifest(out, args)
    _emit(acc)
    return 0


def cmd_sweep(args) -> int:
    from .ncp import default_grid, sweep

    ex = _experiment(args)
    grid = default_grid(args.model)
    out = _out_dir(args)
    board = sweep(ex, args.model, grid, seed=args.seed, epochs=args.epochs, top_k=args.top_k,
                  max_runs=args.max_runs, out_dir=out)
    _write_manifest(out, args)
    _emit(board.to_json()["top_mean"])
    return 0


def cmd_robustness(args) -> int:
    from .models import load_model
    from .ncp import robustness_eval

    model, _ = load_model(args.checkpoint)
    n = model.config.vocab_size // 2
    res = robustness_eval(model, n, size=args.size, seed=args.seed)
    out = _out_dir(args)
    with open(out / "robustness.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("p", "q", "accuracy"))
        for (p, q), acc in res.items():
            w.writerow((p, q, repr(acc)))
    _write_manifest(out, args)
    _emit({f"p={p},q={q}": acc for (p, q), acc in res.items()})
    return 0


def _sample_words(vocab, size, lengths, depths, seed, tag):
    from .dyck import BinSpec, SamplerParams, sample_bin

    return sample_bin(BinSpec(size, lengths, depths), SamplerParams(seed=seed), vocab,
                      rng=random.Random(f"{seed}:{tag}"))


def cmd_probe_depth(args) -> int:
    from .dyck import Vocab
    from .models import load_model
    from .probing import ProbeConfig, train_depth_probe

    model, _ = load_model(args.checkpoint)
    vocab = Vocab(model.config.vocab_size // 2)
    train_w = _sample_words(vocab, args.train_words, (2, 50), (1, args.max_depth), args.seed, "probe-train")
    val_w = _sample_words(vocab, args.val_words, (2, 50), (1, args.max_depth), args.seed, "probe-val")
    cfg = ProbeConfig(num_classes=args.max_depth + 1, lr=args.lr, epochs=args.epochs, seed=args.seed)
    res = train_depth_probe(model, train_w, val_w, vocab, cfg, which=args.which)
    out = _out_dir(args)
    report = {"accuracy": res.accuracy, "step_accuracy": res.step_accuracy, "losses": res.losses}
    (out / "probe_depth.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(out, args)
    _emit(report)
    return 0


def cmd_probe_stack(args) -> int:
    from .dyck import Vocab
    from .models import ModelConfig
    from .ncp import TrainConfig, make_dataset
    from .probing import eval_stack_extraction, train_with_stack_aux

    vocab = Vocab(args.n)
    train_w = _sample_words(vocab, args.train_size, (2, 50), (1, 10), args.seed, "stack-train")
    bins = {"[2,50]": _sample_words(vocab, args.bin_size, (2, 50), (1, 10), args.seed, "stack-val"),
            "[52,150]": _sample_words(vocab, args.bin_size, (52, 150), (1, 10), args.seed, "stack-long")}
    mcfg = ModelConfig(kind="lstm", hidden=args.hidden, layers=args.layers, vocab_size=vocab.size, seed=args.seed)
    sm, res = train_with_stack_aux(mcfg, make_dataset(train_w, vocab),
                                   {"[2,50]": make_dataset(bins["[2,50]"], vocab)}, vocab, lam=args.lam,
                                   cfg=TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed))
    report = {}
    for name, words in bins.items():
        rep = eval_stack_extraction(sm.predict_stack, words, vocab)
        report[name] = {"accuracy": rep.accuracy, "recall": rep.recall, "support": rep.support}
    out = _out_dir(args)
    sm.model.save(out / "model.ckpt")
    (out / "probe_stack.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(out, args)
    _emit(report)
    return 0


def cmd_dump_states(args) -> int:
    from .dyck import Vocab
    from .models import load_model
    from .probing import dump_states

    model, _ = load_model(args.checkpoint)
    vocab = Vocab(model.config.vocab_size // 2)
    if args.input:
        words = _read_words(args.input, vocab)
    else:
        words = _sample_words(vocab, args.words, (2, 50), (1, 10), args.seed, "dump")
    out = _out_dir(args)
    rows = dump_states(model, words, vocab, out / "states.csv", which=args.which)
    _write_manifest(out, args)
    _emit({"csv": str(out / "states.csv"), "rows": rows})
    return 0


def cmd_generate_all(args) -> int:
    from .dyck import Vocab, enumerate_words, write_dataset
    from .models import OracleModel, generate_all, load_model

    if args.checkpoint:
        model, _ = load_model(args.checkpoint)
        vocab = Vocab(model.config.vocab_size // 2)
    else:
        vocab = Vocab(args.n)
        model = OracleModel(vocab)
    words = generate_all(model, vocab, args.max_len, args.threshold)
    truth = {tuple(w) for w in enumerate_words(vocab, args.max_len)}
    got = {tuple(w) for w in words}
    out = _out_dir(args)
    write_dataset(out / "generated.txt", words, vocab)
    _write_manifest(out, args)
    _emit({"generated": len(words), "valid_total": len(truth), "missing": len(truth - got),
           "extra": len(got - truth), "exact": got == truth})
    return 0


# --------------------------------------------------------------------------
# parser


def _add_common(p, seed=True):
    p.add_argument("--config", help="JSON file of option values (flags override)")
    p.add_argument("--out", help="run directory (default: $DYCKLAB_OUT/<command>)")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="random seed")


def _add_experiment(p):
    p.add_argument("--experiment", choices=("unbounded", "bounded_depth", "bounded_length"), default="bounded_depth")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--train-size", type=int, default=10_000)
    p.add_argument("--bin-size", type=int, default=1_000)
    p.add_argument("--data-seed", type=int, default=None, help="seed for sampling data (default: --seed)")


def _add_model(p):
    p.add_argument("--model", choices=("lstm", "rnn_tanh", "rnn_relu", "transformer"), default="lstm")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--no-positional", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dycklab", description="Dyck-language recognition laboratory.")
    parser.add_argument("--version", action="version", version=f"dycklab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample dataset files")
    _add_common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--q", type=float, default=0.25)
    p.add_argument("--train-size", type=int, default=10_000)
    p.add_argument("--bin-size", type=int, default=1_000)
    p.add_argument("--length", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--depth", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--size", type=int, default=1_000)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("enumerate", help="list every Dyck-n word up to a length")
    _add_common(p, seed=False)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--max-len", type=int, required=True)
    p.add_argument("--words-out", help="write the words to this file")
    p.add_argument("--print-words", action="store_true")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("compile-dpda", help="compile an automaton into exact RNN weights")
    _add_common(p, seed=False)
    p.add_argument("--dyck", type=int)
    p.add_argument("--spec", help="automaton spec file")
    p.set_defaults(func=cmd_compile, out="weights.rnn")

    p = sub.add_parser("verify", help="check compiled weights against the automaton")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--against", required=True, help="dyckN or an automaton spec file")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=40)
    p.add_argument("--exhaustive", type=int, default=0, metavar="LEN",
                   help="also check every string up to this length")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("precision-sweep", help="fixed-point agreement versus bits and stack height")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--against", default="dyck2")
    p.add_argument("--bits", type=_parse_bits, default=_parse_bits("2..64"))
    p.add_argument("--words", type=int, default=500)
    p.add_argument("--max-len", type=int, default=60)
    p.add_argument("--max-depth", type=int, default=20)
    p.set_defaults(func=cmd_precision)

    p = sub.add_parser("train", help="train one model on an experiment preset")
    _add_common(p)
    _add_experiment(p)
    _add_model(p)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an experiment's bins")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval, n=None)

    p = sub.add_parser("sweep", help="hyperparameter sweep with top-k averaging")
    _add_common(p)
    _add_experiment(p)
    p.add_argument("--model", choices=("lstm", "rnn_tanh", "rnn_relu", "transformer"), default="lstm")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--max-runs", type=int, default=None)
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("robustness", help="accuracy under alternative sampling distributions")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--size", type=int, default=1_000)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("probe-depth", help="train a depth probe on frozen LSTM states")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=("cell", "hidden"), default="cell")
    p.add_argument("--train-words", type=int, default=5_000)
    p.add_argument("--val-words", type=int, default=1_000)
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_probe_depth)

    p = sub.add_parser("probe-stack", help="co-train stack-extraction heads and score them")
    _add_common(p)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--lam", type=float, default=1 / 20)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--train-size", type=int, default=5_000)
    p.add_argument("--bin-size", type=int, default=500)
    p.set_defaults(func=cmd_probe_stack)

    p = sub.add_parser("dump-states", help="write labeled hidden or cell states to CSV")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=("cell", "hidden"), default="hidden")
    p.add_argument("--input", help="dataset file of words (default: sample --words words)")
    p.add_argument("--words", type=int, default=200)
    p.set_defaults(func=cmd_dump_states)

    p = sub.add_parser("generate-all", help="exhaustively generate from a model's predictions")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", help="trained model (default: the exact oracle)")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_generate_all)
    return parser


def _load_config(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data.get("args", data) if "command" in data and "args" in data else data


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        values = _load_config(args.config)
        values.pop("command", None)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known - {"verbose"})
        if unknown:
            parser.error(f"unknown option(s) in {args.config}: {', '.join(unknown)}")
        sub.set_defaults(**{k: v for k, v in values.items() if k in known})
        args = parser.parse_args(argv)
    if args.command in STOCHASTIC and os.environ.get("CI") and args.seed is None:
        parser.error("--seed is required in CI mode")
    if getattr(args, "seed", 0) is None:
        args.seed = 0
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"dycklab {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (DyckLabError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
