"""Command-line surface.

Subcommands: gen-data, train, laplace-fit, eval, diagnose stable-rank,
diagnose jensen-gap. Machine-readable JSON goes to stdout, human diagnostics
to stderr. Exit codes: 0 ok, 2 usage, 3 I/O, 4 runtime failure. Flags override
config-file values; every training value has a default so a config file is
optional.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import checkpoint as ckpt
from . import laplace as laplace_mod
from . import metrics
from .data import SynthSpec, gen_gaussian_mixture, load_jsonl, save_jsonl
from .errors import (
    CheckpointError,
    DimMismatch,
    EmptyDataset,
    LabelOutOfRange,
    ParseError,
    PolarBayesError,
)
from .numerics import Rng
from .predict import batched_probs, evaluate_checkpoint
from .train import TrainConfig, Trainer
from .vbll import VbllHead

_CONFIG_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj))


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(doc) - _CONFIG_KEYS - {"data", "out", "log"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="polarbayes", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--overlap", type=float, default=0.6, help="class separation / noise std")
    p.add_argument("--shift", default=None, help='translation "v1,v2,..." applied to every input')
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train adapters and head", formatter_class=fmt)
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--data", default=None, help="training JSONL path")
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.add_argument("--log", default=None, help="JSONL training log path")
    defaults = TrainConfig()
    p.add_argument("--steps", type=int, default=None, help=f"training steps (default {defaults.steps})")
    p.add_argument("--batch", type=int, default=None, help=f"mini-batch size (default {defaults.batch})")
    p.add_argument("--lr-polar", type=float, default=None, help=f"adapter learning rate (default {defaults.lr_polar})")
    p.add_argument("--lr-vbll", type=float, default=None, help=f"head learning rate (default {defaults.lr_vbll})")
    p.add_argument("--landing-lambda", type=float, default=None, help=f"infeasibility penalty weight (default {defaults.landing_lambda})")
    p.add_argument("--prior-var", type=float, default=None, help=f"prior variance (default {defaults.prior_var})")
    p.add_argument("--kl-weight", type=float, default=None, help="KL weight (default 1/N)")
    p.add_argument("--adapter", choices=["polar", "lora"], default=None, help=f"adapter kind (default {defaults.adapter})")
    p.add_argument("--head", choices=["vbll", "mle"], default=None, help=f"head kind (default {defaults.head})")
    p.add_argument("--rank", type=int, default=None, help=f"adapter rank (default {defaults.rank})")
    p.add_argument("--alpha", type=float, default=None, help=f"adapter output scale numerator (default {defaults.alpha})")
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {defaults.seed})")
    p.add_argument("--scheduler", choices=["cosine-restarts", "constant"], default=None, help=f"LR schedule (default {defaults.scheduler})")
    p.add_argument("--eval-every", type=int, default=None, help=f"log period in steps (default {defaults.eval_every})")
    p.add_argument("--hidden-dim", type=int, default=None, help=f"extractor hidden width (default {defaults.hidden_dim})")
    p.add_argument("--feature-dim", type=int, default=None, help=f"extractor output width (default {defaults.feature_dim})")

    p = sub.add_parser("laplace-fit", help="refine head covariances post hoc", formatter_class=fmt)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["exact-full", "block-diagonal"], default="exact-full")

    p = sub.add_parser("eval", help="metrics on a dataset", formatter_class=fmt)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=10, help="posterior draws per batch")
    p.add_argument("--posterior", choices=["variational", "laplace", "mean"], default="variational")
    p.add_argument("--bins", type=int, default=metrics.DEFAULT_ECE_BINS, help="ECE bin count")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("diagnose", help="geometry and bound diagnostics", formatter_class=fmt)
    dsub = p.add_subparsers(dest="diagnostic", required=True)
    d = dsub.add_parser("stable-rank", help="per-layer stable ranks of adapter deltas", formatter_class=fmt)
    d.add_argument("--ckpt", required=True)
    d = dsub.add_parser("jensen-gap", help="surrogate vs Monte Carlo loss on a probe batch", formatter_class=fmt)
    d.add_argument("--ckpt", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--samples", type=int, default=50)
    d.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_gen_data(args) -> int:
    if args.overlap <= 0:
        raise UsageError("--overlap must be positive")
    if args.classes < 2 or args.per_class < 1 or args.dim < 1:
        raise UsageError("--classes >= 2, --per-class >= 1, --dim >= 1 required")
    shift_vec = None
    if args.shift is not None:
        try:
            shift_vec = np.array([float(v) for v in args.shift.split(",")])
        except ValueError as exc:
            raise UsageError(f"bad --shift: {exc}") from exc
        if shift_vec.shape[0] != args.dim:
            raise UsageError(f"--shift needs {args.dim} components")
    spec = SynthSpec(
        classes=args.classes,
        dim=args.dim,
        per_class=args.per_class,
        overlap=args.overlap,
        seed=args.seed,
        shift=shift_vec,
    )
    ds = gen_gaussian_mixture(spec)
    save_jsonl(ds, args.out)
    _emit(
        {
            "n": int(ds.x.shape[0]),
            "classes": ds.num_classes,
            "dim": ds.input_dim,
            "per_class": args.per_class,
            "overlap": args.overlap,
            "seed": args.seed,
            "shifted": shift_vec is not None,
            "out": args.out,
        }
    )
    return 0


def _cmd_train(args) -> int:
    file_values = _load_config_file(args.config) if args.config else {}
    data_path = args.data if args.data is not None else file_values.get("data")
    out_path = args.out if args.out is not None else file_values.get("out")
    log_path = args.log if args.log is not None else file_values.get("log")
    if data_path is None:
        raise UsageError("no training data: pass --data or put 'data' in the config")
    if out_path is None:
        raise UsageError("no output path: pass --out or put 'out' in the config")

    values = {k: v for k, v in file_values.items() if k in _CONFIG_KEYS}
    flag_map = {
        "steps": args.steps,
        "batch": args.batch,
        "lr_polar": args.lr_polar,
        "lr_vbll": args.lr_vbll,
        "landing_lambda": args.landing_lambda,
        "prior_var": args.prior_var,
        "kl_weight": args.kl_weight,
        "adapter": args.adapter,
        "head": args.head,
        "rank": args.rank,
        "alpha": args.alpha,
        "seed": args.seed,
        "scheduler": args.scheduler,
        "eval_every": args.eval_every,
        "hidden_dim": args.hidden_dim,
        "feature_dim": args.feature_dim,
    }
    values.update({k: v for k, v in flag_map.items() if v is not None})
    try:
        config = TrainConfig(**values)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    dataset = load_jsonl(data_path)
    trainer = Trainer(config, dataset)
    trainer.run()
    state = trainer.snapshot()
    ckpt.save(state, out_path)
    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            for rec in trainer.log:
                fh.write(json.dumps(rec) + "\n")
    final = trainer.log[-1] if trainer.log else None
    _emit(
        {
            "out": out_path,
            "steps": config.steps,
            "final_loss": final["loss"] if final else None,
            "final_feas_u": final["feas_u"] if final else None,
            "final_feas_v": final["feas_v"] if final else None,
            "log_records": len(trainer.log),
        }
    )
    return 0


def _cmd_laplace_fit(args) -> int:
    state = ckpt.load(args.ckpt)
    if not isinstance(state.head, VbllHead):
        raise TypeError("laplace refinement needs a variational head checkpoint")
    dataset = load_jsonl(args.data)
    feats_chunks = []
    for start in range(0, dataset.x.shape[0], 1024):
        f, _ = state.extractor.forward(dataset.x[start : start + 1024])
        feats_chunks.append(f)
    feats = np.vstack(feats_chunks)
    refined = laplace_mod.refine(state.head, feats, mode=args.mode)
    state.laplace = refined
    ckpt.save(state, args.out)
    _emit(
        {
            "mode": args.mode,
            "trace_sigma": [float(np.trace(s)) for s in refined.sigmas],
            "out": args.out,
        }
    )
    return 0


def _cmd_eval(args) -> int:
    state = ckpt.load(args.ckpt)
    dataset = load_jsonl(args.data)
    if args.posterior == "laplace" and state.laplace is None:
        raise ValueError("checkpoint has no laplace section; run laplace-fit first")
    report = evaluate_checkpoint(
        state,
        dataset,
        k=args.samples,
        posterior_source=args.posterior,
        bins=args.bins,
        seed=args.seed,
    )
    _emit(report.to_json_dict())
    return 0


def _cmd_diagnose(args) -> int:
    state = ckpt.load(args.ckpt)
    if args.diagnostic == "stable-rank":
        report = metrics.stable_rank_report(state)
        _emit(report)
        if report["mean"] is None:
            _note("all adapter deltas are zero; stable rank undefined")
            return 4
        return 0
    dataset = load_jsonl(args.data)
    if not isinstance(state.head, VbllHead):
        raise TypeError("jensen-gap needs a variational head checkpoint")
    from .data import one_hot

    probe_n = min(256, dataset.x.shape[0])
    rec = metrics.jensen_gap_record(
        state.head,
        state.extractor,
        dataset.x[:probe_n],
        one_hot(dataset.y[:probe_n], dataset.num_classes),
        Rng(args.seed),
        args.samples,
    )
    rec["step"] = state.config.steps
    _emit(rec)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "laplace-fit":
            return _cmd_laplace_fit(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "diagnose":
            return _cmd_diagnose(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        _note(f"usage error: {exc}")
        return 2
    except (
        OSError,
        ParseError,
        CheckpointError,
        EmptyDataset,
        DimMismatch,
        LabelOutOfRange,
        json.JSONDecodeError,
    ) as exc:
        _note(f"i/o error: {exc}")
        return 3
    except (PolarBayesError, ValueError, TypeError) as exc:
        _note(f"runtime error: {exc}")
        return 4


def entrypoint() -> None:
    raise SystemExit(main())
