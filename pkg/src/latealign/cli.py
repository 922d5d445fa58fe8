"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, stretch-pe, score-pair.
Exit codes: 0 success, 1 usage or parameter error, 2 IO or file-format
error, 3 numeric failure.  Machine output goes to stdout or --out
paths; diagnostics go to stderr.  Every flag may also be supplied via
--config JSON (keyed by flag destination name); explicit flags win.
Randomized subcommands require --seed, so no run depends on ambient
entropy.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import corpus as corpus_io
from .binio import atomic_write
from .errors import FormatError, NumericError
from .evaluation import evaluate, report_json
from .posembed import PositionalTable, stretch
from .scoring import combined_score, coarse_score, fine_score
from .trainer import (TrainConfig, full_gradient_check, load_checkpoint,
                      model_from_arrays, save_checkpoint, scoring_sets, train)

_UNSET = object()
_REQUIRED = object()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class _Opt:
    flag: str
    dest: str
    default: object
    help: str
    type: Optional[Callable] = None
    boolean: bool = False
    choices: Optional[tuple] = None


def _add(parser: _Parser, opt: _Opt):
    if opt.default is _REQUIRED:
        note = " (required)"
    else:
        note = f" (default: {opt.default})"
    if opt.boolean:
        parser.add_argument(opt.flag, dest=opt.dest, default=_UNSET,
                            action=argparse.BooleanOptionalAction,
                            help=opt.help + note)
    else:
        parser.add_argument(opt.flag, dest=opt.dest, default=_UNSET,
                            type=opt.type, choices=opt.choices,
                            help=opt.help + note)


_MODE_OPTS = [
    _Opt("--aggregate-image", "aggregate_image", True,
         "aggregate image tokens before scoring", boolean=True),
    _Opt("--aggregate-text", "aggregate_text", True,
         "aggregate text tokens before scoring", boolean=True),
    _Opt("--include-global", "include_global", True,
         "keep the global rows inside the fine token sets", boolean=True),
]

_OPTS: Dict[str, List[_Opt]] = {
    "gen-data": [
        _Opt("--seed", "seed", _REQUIRED, "generator seed", type=int),
        _Opt("--pairs", "pairs", _REQUIRED, "number of image/text pairs", type=int),
        _Opt("--p", "p", 16, "image tokens per pair", type=int),
        _Opt("--m", "m", 12, "maximum text tokens per pair", type=int),
        _Opt("--din", "din", 32, "input feature dimension", type=int),
        _Opt("--concepts", "concepts", 6, "planted shared tokens per pair", type=int),
        _Opt("--noise", "noise", 0.05, "Gaussian perturbation scale", type=float),
        _Opt("--distractors", "distractors", 4,
             "pool tokens appended to each text", type=int),
        _Opt("--out", "out", _REQUIRED, "output corpus path (FLCP)"),
    ],
    "train": [
        _Opt("--seed", "seed", _REQUIRED, "training seed", type=int),
        _Opt("--corpus", "corpus", _REQUIRED, "input corpus path (FLCP)"),
        _Opt("--out", "out", _REQUIRED, "checkpoint output path (FLCK)"),
        _Opt("--metrics", "metrics", None,
             "metrics JSONL path; stdout when omitted"),
        _Opt("--epochs", "epochs", 40, "training epochs", type=int),
        _Opt("--batch-size", "batch_size", 32, "pairs per batch", type=int),
        _Opt("--ratio", "ratio", 0.2, "aggregation ratio", type=float),
        _Opt("--alpha", "alpha", 0.2, "triplet margin", type=float),
        _Opt("--lr-encoder", "lr_encoder", 1e-3, "encoder learning rate", type=float),
        _Opt("--lr-aggregator", "lr_aggregator", 1e-2,
             "aggregator learning rate", type=float),
        *_MODE_OPTS,
        _Opt("--loss", "loss", "triplet", "training objective",
             choices=("triplet", "contrastive")),
        _Opt("--lambda", "combine_weight", 0.5,
             "combined-score weight on the fine part", type=float),
        _Opt("--temperature", "temperature", 0.07,
             "contrastive softmax temperature", type=float),
        _Opt("--d", "d", 16, "encoder output dimension", type=int),
        _Opt("--dk", "dk", 8, "aggregator key dimension", type=int),
        _Opt("--base-pos-len", "base_pos_len", 16,
             "length of the base positional table before stretching", type=int),
        _Opt("--keep", "keep", 4, "preserved positional prefix (toy scale)", type=int),
        _Opt("--factor", "factor", 4, "positional stretch factor", type=int),
        _Opt("--train-pos", "train_pos", True,
             "update the positional tables during training", boolean=True),
        _Opt("--holdout", "holdout", 64, "pairs held out for recall logging", type=int),
    ],
    "eval": [
        _Opt("--corpus", "corpus", _REQUIRED, "corpus path (FLCP)"),
        _Opt("--model", "model", _REQUIRED, "checkpoint path (FLCK)"),
        _Opt("--out", "out", None, "report path; stdout when omitted"),
        _Opt("--lambda", "combine_weight", 0.5,
             "combined-score weight on the fine part", type=float),
        *_MODE_OPTS,
    ],
    "gradcheck": [
        _Opt("--seed", "seed", _REQUIRED, "instance seed", type=int),
        _Opt("--batch", "batch", 4, "batch size", type=int),
        _Opt("--d", "d", 8, "encoder output dimension", type=int),
        _Opt("--dk", "dk", 4, "aggregator key dimension", type=int),
        _Opt("--p", "p", 12, "image tokens", type=int),
        _Opt("--m", "m", 10, "text tokens", type=int),
        _Opt("--din", "din", 8, "input feature dimension", type=int),
        _Opt("--epsilon", "epsilon", 1e-5, "central-difference step", type=float),
    ],
    "stretch-pe": [
        _Opt("--in", "infile", _REQUIRED, "input table path (FLCK, one entry)"),
        _Opt("--out", "out", _REQUIRED, "output table path (FLCK)"),
        _Opt("--keep", "keep", 20, "rows preserved verbatim", type=int),
        _Opt("--factor", "factor", 4, "stretch factor", type=int),
    ],
    "score-pair": [
        _Opt("--corpus", "corpus", _REQUIRED, "corpus path (FLCP)"),
        _Opt("--model", "model", _REQUIRED, "checkpoint path (FLCK)"),
        _Opt("--image", "image", _REQUIRED, "image index", type=int),
        _Opt("--text", "text", _REQUIRED, "text index", type=int),
        _Opt("--out", "out", None, "output path; stdout when omitted"),
        _Opt("--lambda", "combine_weight", 0.5,
             "combined-score weight on the fine part", type=float),
        *_MODE_OPTS,
    ],
}

_DESCRIPTIONS = {
    "gen-data": "generate a synthetic planted-correspondence corpus",
    "train": "train a model on a corpus and write a checkpoint",
    "eval": "report Recall@{1,5,10} for fine, coarse and combined scoring",
    "gradcheck": "check the full pipeline gradient by central differences",
    "stretch-pe": "stretch a positional table to a longer context",
    "score-pair": "score one image/text pair under all three modes",
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="latealign", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    for name, opts in _OPTS.items():
        p = sub.add_parser(name, help=_DESCRIPTIONS[name], description=_DESCRIPTIONS[name])
        p.add_argument("--config", default=None,
                       help="JSON file supplying flag values; explicit flags win")
        for opt in opts:
            _add(p, opt)
    return parser


def _resolve(args: argparse.Namespace, opts: List[_Opt]) -> argparse.Namespace:
    file_values = {}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                file_values = json.load(fh)
            except json.JSONDecodeError as e:
                raise UsageError(f"invalid --config JSON: {e}") from e
        if not isinstance(file_values, dict):
            raise UsageError("--config must hold a JSON object")
    out = {}
    for opt in opts:
        value = getattr(args, opt.dest)
        if value is _UNSET:
            if opt.dest in file_values:
                value = file_values[opt.dest]
            elif opt.default is _REQUIRED:
                raise UsageError(f"{opt.flag} is required")
            else:
                value = opt.default
        out[opt.dest] = value
    return argparse.Namespace(**out)


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write(path, text.encode("utf-8"))


def _cmd_gen_data(ns) -> int:
    c = corpus_io.generate_synthetic(
        seed=ns.seed, n_pairs=ns.pairs, p=ns.p, m_max=ns.m, d_in=ns.din,
        n_concepts=ns.concepts, noise_sigma=ns.noise, n_distractors=ns.distractors)
    corpus_io.save(c, ns.out)
    print(f"wrote {c.n_pairs} pairs to {ns.out}", file=sys.stderr)
    return 0


def _train_config(ns, c: corpus_io.PairCorpus) -> TrainConfig:
    return TrainConfig(
        seed=ns.seed, epochs=ns.epochs, batch_size=ns.batch_size,
        ratio=ns.ratio, alpha=ns.alpha,
        lr_encoder=ns.lr_encoder, lr_aggregator=ns.lr_aggregator,
        aggregate_image=ns.aggregate_image, aggregate_text=ns.aggregate_text,
        include_global=ns.include_global, loss=ns.loss,
        combine_weight=ns.combine_weight, temperature=ns.temperature,
        d_in=c.d_in, d=ns.d, d_k=ns.dk, p=c.p, m_max=c.m_max,
        base_pos_len=ns.base_pos_len, keep=ns.keep, factor=ns.factor,
        train_pos=ns.train_pos, holdout=ns.holdout)


def _cmd_train(ns) -> int:
    c = corpus_io.load(ns.corpus)
    config = _train_config(ns, c)
    _, metrics = train(config, c, checkpoint_path=ns.out)
    lines = "".join(json.dumps(m) + "\n" for m in metrics)
    _emit(lines, ns.metrics)
    print(f"wrote checkpoint to {ns.out}", file=sys.stderr)
    return 0


def _eval_config(ns, c, model) -> TrainConfig:
    return TrainConfig(
        seed=0, epochs=0,
        aggregate_image=ns.aggregate_image, aggregate_text=ns.aggregate_text,
        include_global=ns.include_global, combine_weight=ns.combine_weight,
        d_in=c.d_in, d=model.image_encoder.proj.shape[1],
        d_k=model.image_aggregator.w_k.shape[1], p=c.p, m_max=c.m_max)


def _cmd_eval(ns) -> int:
    c = corpus_io.load(ns.corpus)
    model = model_from_arrays(load_checkpoint(ns.model))
    report = evaluate(model, c, _eval_config(ns, c, model))
    _emit(report_json(report) + "\n", ns.out)
    return 0


def _cmd_gradcheck(ns) -> int:
    config = TrainConfig(seed=ns.seed, epochs=0, batch_size=ns.batch,
                         d_in=ns.din, d=ns.d, d_k=ns.dk, p=ns.p, m_max=ns.m,
                         holdout=0)
    err = full_gradient_check(config, seed=ns.seed, epsilon=ns.epsilon)
    print(f"max relative error: {err:.6e}")
    if err >= 1e-6:
        print("gradient check failed (threshold 1e-6)", file=sys.stderr)
        return 3
    return 0


def _cmd_stretch_pe(ns) -> int:
    arrays = load_checkpoint(ns.infile)
    if len(arrays) != 1:
        raise FormatError("expected exactly one table in the file")
    name, entries = next(iter(arrays.items()))
    if entries.ndim != 2:
        raise FormatError("positional table entry must be 2-D")
    out = stretch(PositionalTable(entries), ns.keep, ns.factor)
    save_checkpoint({name: out.entries}, ns.out)
    print(f"stretched {entries.shape[0]} rows to {out.length}", file=sys.stderr)
    return 0


def _cmd_score_pair(ns) -> int:
    c = corpus_io.load(ns.corpus)
    model = model_from_arrays(load_checkpoint(ns.model))
    if not (0 <= ns.image < c.n_pairs and 0 <= ns.text < c.n_pairs):
        raise UsageError("pair index out of range")
    config = _eval_config(ns, c, model)
    sets_v, _ = scoring_sets(model, c.image_tokens[[ns.image]],
                             [c.text_tokens[ns.image]], config)
    _, sets_t = scoring_sets(model, c.image_tokens[[ns.text]],
                             [c.text_tokens[ns.text]], config)
    fine = fine_score(sets_v[0].tokens, sets_t[0].tokens)
    coarse = coarse_score(sets_v[0].global_vec, sets_t[0].global_vec)
    payload = {
        "image_index": ns.image,
        "text_index": ns.text,
        "fine": fine,
        "coarse": coarse,
        "combined": combined_score(fine, coarse, ns.combine_weight),
    }
    _emit(json.dumps(payload, sort_keys=True) + "\n", ns.out)
    return 0


_DISPATCH = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "stretch-pe": _cmd_stretch_pe,
    "score-pair": _cmd_score_pair,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        ns = _resolve(args, _OPTS[args.command])
        return _DISPATCH[args.command](ns)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"parameter error: {e}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
