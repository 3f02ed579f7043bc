"""Command-line entry point.

Subcommands: gen-data, train, eval, sweep, collisions, bench. Machine-
readable results go to stdout (single-line JSON, or CSV where tabular);
diagnostics go to stderr. Exit codes: 0 ok, 1 usage/config, 2 data error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchSpec, reports_to_csv, run_bench, sweep_table_sizes
from .config import TrainConfig, build_train_config, read_config_file
from .data import load_tsv, split_temporal, synth_generate
from .errors import ConfigError, DataError, DivergenceError
from .metrics import collision_stats, roc_auc
from .model import (
    build_model,
    load_model,
    predict_scores,
    save_model,
    train,
)
from .schemes import make_scheme

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3

_BOOL_FIELDS = ("freeze_alpha",)


class _Parser(argparse.ArgumentParser):
    # the exit-code contract reserves 2 for data errors, so usage errors
    # must not use argparse's default status
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed; fills per-purpose seeds not set "
                             "explicitly")
    parser.add_argument("--config", default=None,
                        help="key=value config file")
    parser.add_argument("--json", action="store_true",
                        help="force single-line JSON output")


def _add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _BOOL_FIELDS:
            parser.add_argument(flag, dest=f.name,
                                action=argparse.BooleanOptionalAction,
                                default=None)
        else:
            parser.add_argument(flag, dest=f.name, default=None)


def _train_config_from_args(args) -> TrainConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(TrainConfig)
        if getattr(args, f.name, None) is not None
    }
    if args.seed is not None:
        for key, offset in (("hash_seed", 0), ("init_seed", 1),
                            ("shuffle_seed", 2)):
            if key not in overrides and key not in file_values:
                overrides[key] = args.seed + offset
    return build_train_config(file_values, overrides)


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated integer list, "
                          f"got {text!r}") from None


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else 0
    data = synth_generate(seed, args.rows, args.fields, args.vocab,
                          args.signal)
    out = Path(args.out)
    written = []
    if args.split:
        parts = args.split.split(",")
        if len(parts) != 2:
            raise ConfigError("--split expects 'train_frac,val_frac'")
        train_frac, val_frac = float(parts[0]), float(parts[1])
        if train_frac < 0 or val_frac < 0 or train_frac + val_frac > 1:
            raise ConfigError("--split fractions must be nonnegative and "
                              "sum to at most 1")
        lines = list(data.lines())
        n = len(lines)
        n_train = int(n * train_frac)
        n_val = int(n * val_frac)
        pieces = {
            "train": lines[:n_train],
            "val": lines[n_train:n_train + n_val],
            "test": lines[n_train + n_val:],
        }
        for part, chunk in pieces.items():
            path = out.with_name(f"{out.stem}.{part}{out.suffix or '.tsv'}")
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(line + "\n" for line in chunk)
            written.append(str(path))
    else:
        data.write_tsv(out)
        written.append(str(out))
    _emit({
        "rows": args.rows,
        "fields": args.fields,
        "vocab_per_field": args.vocab,
        "signal_strength": args.signal,
        "seed": seed,
        "label_rate": float(np.mean(data.labels)),
        "files": written,
    })
    return EXIT_OK


# ---------------------------------------------------------------- train


def _build_and_train(cfg: TrainConfig, dataset, val_dataset):
    scheme = make_scheme(
        cfg.embedding_scheme,
        l=cfg.l,
        cfg=cfg.encoder_config(),
        init_seed=cfg.init_seed,
        hashtrick_rows=cfg.hashtrick_rows,
        qr_buckets=cfg.qr_buckets,
        freeze_alpha=cfg.freeze_alpha,
    )
    scheme.build(dataset.sparse)
    params = build_model(scheme, dataset.num_dense, dataset.num_fields,
                         cfg.bot_sizes(), cfg.top_sizes(), cfg.init_seed)
    history = train(
        params, dataset,
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
        shuffle_seed=cfg.shuffle_seed,
        val_dataset=val_dataset if (val_dataset and val_dataset.num_rows) else None,
    )
    return params, history


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    if not cfg.train_path:
        raise ConfigError("train_path is required (config key or "
                          "--train-path)")
    dataset = load_tsv(cfg.train_path, num_dense=cfg.num_dense)
    train_ds, val_ds, _ = split_temporal(dataset, cfg.train_frac, cfg.val_frac)
    if train_ds.num_rows == 0:
        raise DataError(f"{cfg.train_path}: train split is empty")
    params, history = _build_and_train(cfg, train_ds, val_ds)
    with open(cfg.metrics_out, "w", encoding="utf-8", newline="\n") as fh:
        for stats in history:
            fh.write(stats.log_line() + "\n")
    save_model(params, cfg.checkpoint_out)
    _emit({
        "checkpoint": cfg.checkpoint_out,
        "metrics": cfg.metrics_out,
        "epochs": cfg.epochs,
        "embedding_scheme": cfg.embedding_scheme,
        "train_rows": train_ds.num_rows,
        "val_rows": val_ds.num_rows,
        "final_train_loss": history[-1].train_loss,
        # nan (no validation split) is not valid JSON
        "final_val_auc": (
            None if np.isnan(history[-1].val_auc) else history[-1].val_auc
        ),
        "embedding_params": params.embedding.param_count(),
        "total_params": params.param_count(),
    })
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    params = load_model(args.checkpoint)
    dataset = load_tsv(args.data, num_dense=params.num_dense)
    if dataset.num_fields != params.num_sparse_fields:
        raise DataError(
            f"{args.data}: {dataset.num_fields} sparse fields, checkpoint "
            f"expects {params.num_sparse_fields}"
        )
    scores = predict_scores(params, dataset)
    _emit({
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "num_rows": dataset.num_rows,
        "auc": roc_auc(scores, dataset.labels),
    })
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def cmd_sweep(args) -> int:
    cfg = _train_config_from_args(args)
    if not cfg.train_path:
        raise ConfigError("train_path is required (config key or "
                          "--train-path)")
    grid_k = _int_list(args.grid_k, "--grid-k") if args.grid_k else [cfg.k]
    grid_kp = (_int_list(args.grid_k_prime, "--grid-k-prime")
               if args.grid_k_prime else [cfg.k_prime])
    grid_d = _int_list(args.grid_d, "--grid-d") if args.grid_d else [cfg.d]
    grid_l = _int_list(args.grid_l, "--grid-l") if args.grid_l else [cfg.l]

    dataset = load_tsv(cfg.train_path, num_dense=cfg.num_dense)
    train_ds, val_ds, _ = split_temporal(dataset, cfg.train_frac, cfg.val_frac)
    if val_ds.num_rows == 0:
        raise ConfigError("sweep needs a nonempty validation split "
                          "(val_frac > 0)")
    rows = ["k,k_prime,d,d_prime,l,embedding_params,total_params,"
            "final_train_loss,val_auc"]
    for k in grid_k:
        for kp in grid_kp:
            for d in grid_d:
                for l in grid_l:
                    point = replace(
                        cfg, k=k, k_prime=kp, d=d, d_prime=d, l=l,
                        mlp_bot="",  # rederive the bottom chain for this l
                    ).validate()
                    params, history = _build_and_train(point, train_ds, val_ds)
                    rows.append(
                        f"{k},{kp},{d},{d},{l},"
                        f"{params.embedding.param_count()},"
                        f"{params.param_count()},"
                        f"{history[-1].train_loss:.6f},"
                        f"{history[-1].val_auc:.6f}"
                    )
                    logger.info("sweep point %s", rows[-1])
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit({"out": args.out, "points": len(rows) - 1})
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- collisions


def cmd_collisions(args) -> int:
    cfg = _train_config_from_args(args).encoder_config()
    if args.vocab_file:
        path = Path(args.vocab_file)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"cannot read vocab file {path}: {exc}") from exc
        tokens = [ln.strip().encode("utf-8") for ln in lines if ln.strip()]
    else:
        tokens = [b"%08x" % i for i in range(args.vocab_size)]
    if len(tokens) < 2:
        raise DataError("need at least two tokens for collision stats")
    stats = collision_stats(cfg, tokens, field_id=args.field)
    stats["per_bit_load_histogram"] = {
        str(k): v for k, v in stats["per_bit_load_histogram"].items()
    }
    stats.update(k=cfg.k, k_prime=cfg.k_prime, d=cfg.d, d_prime=cfg.d_prime,
                 hash_seed=cfg.hash_seed)
    _emit(stats)
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    seed = args.seed if args.seed is not None else 0
    base = BenchSpec(
        table_rows=args.table_rows or max(args.pooling_factor, 1),
        row_len=args.row_len,
        pooling_factor=args.pooling_factor,
        num_queries=args.num_queries,
        num_threads=args.threads,
        seed=seed,
        access_distribution=args.dist,
        include_hashing=args.include_hashing,
    )
    if args.sizes:
        reports = sweep_table_sizes(base, _int_list(args.sizes, "--sizes"))
    else:
        if not args.table_rows:
            raise ConfigError("either --table-rows or --sizes is required")
        reports = [run_bench(base)]
    if args.json:
        payload = [r.as_row() for r in reports]
        _emit(payload[0] if len(payload) == 1 else payload)
    else:
        sys.stdout.write(reports_to_csv(reports))
    return EXIT_OK


# ---------------------------------------------------------------- wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="memrec",
                     description="Compressed categorical embeddings: "
                                 "training, baselines, and benchmarks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic CTR dataset")
    _add_common(p)
    p.add_argument("--rows", type=int, default=10000)
    p.add_argument("--fields", type=int, default=8)
    p.add_argument("--vocab", type=int, default=1000,
                   help="vocabulary size per field")
    p.add_argument("--signal", type=float, default=1.0,
                   help="strength of the planted per-token signal")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None,
                   help="write .train/.val/.test files, e.g. 0.8,0.1")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a config")
    _add_common(p)
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a TSV dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid sweep over k, k_prime, d, l")
    _add_common(p)
    _add_train_config_flags(p)
    p.add_argument("--grid-k", default=None)
    p.add_argument("--grid-k-prime", default=None)
    p.add_argument("--grid-d", default=None)
    p.add_argument("--grid-l", default=None)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("collisions", help="collision statistics for a vocab")
    _add_common(p)
    _add_train_config_flags(p)
    p.add_argument("--vocab-size", type=int, default=10000)
    p.add_argument("--vocab-file", default=None,
                   help="file with one token per line")
    p.add_argument("--field", type=int, default=0)
    p.set_defaults(func=cmd_collisions)

    p = sub.add_parser("bench", help="pooled-lookup latency microbenchmark")
    _add_common(p)
    p.add_argument("--table-rows", type=int, default=None)
    p.add_argument("--row-len", type=int, default=128)
    p.add_argument("--pooling-factor", type=int, default=120)
    p.add_argument("--num-queries", type=int, default=1000)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dist", choices=("uniform", "zipf"), default="uniform")
    p.add_argument("--include-hashing", action="store_true",
                   help="time token hashing inside the measured kernel")
    p.add_argument("--sizes", default=None,
                   help="comma list of table sizes: sweep and emit CSV")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse help/usage paths
        code = exc.code
        if code is None:
            return EXIT_OK
        return code if isinstance(code, int) else EXIT_USAGE
    except ConfigError as exc:
        print(f"memrec: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"memrec: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except DataError as exc:
        print(f"memrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"memrec: i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
