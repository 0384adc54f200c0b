"""``amemnet`` command line: synth, train, eval, fuse and gradcheck."""
from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import data, evalfuse, gradcheck
from .config import RunConfig, load_config
from .exceptions import ConfigError
from .training import train

THREADS_ENV = "AMEMNET_THREADS"


def _pair(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _config(args) -> RunConfig:
    overrides = dict(getattr(args, "set", None) or [])
    for key in ("seed", "epochs"):
        if getattr(args, key, None) is not None:
            overrides[key] = str(getattr(args, key))
    return load_config(getattr(args, "config", None), overrides)


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    for ds in data.generate_synthetic(cfg.synth_config()):
        data.save_dataset(ds, out / ds.stream)
        print(f"{ds.stream}: {len(ds)} records, {len(ds.train_ids)} train / "
              f"{len(ds.test_ids)} test samples -> {out / ds.stream}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = data.load_dataset(args.data)
    arch = cfg.architecture(ds.dim, ds.classes)
    model, report = train(ds, cfg.train_config(), arch)
    out = Path(args.out)
    data.save_model(model, out, {"stream": ds.stream, "lambda_cls": cfg.lambda_cls,
                                 "lambda_rec": cfg.lambda_rec, "epochs": cfg.epochs,
                                 "seed": cfg.seed})
    report.to_csv(out / "train_report.csv")
    (out / "config.txt").write_text(cfg.as_text(), encoding="utf-8")
    print(f"trained {ds.stream} for {cfg.epochs} epochs ({len(report)} steps) -> {out}")
    return 0


def cmd_eval(args) -> int:
    ds = data.load_dataset(args.data)
    model = data.load_model(args.model)
    if (model.arch.d, model.arch.classes) != (ds.dim, ds.classes):
        raise ConfigError(f"model (d={model.arch.d}, K={model.arch.classes}) does not match "
                          f"dataset (d={ds.dim}, K={ds.classes})")
    ids = ds.train_ids if args.split == "train" else ds.test_ids
    acc, table = evalfuse.evaluate_by_ratio(ds, model, ids)
    evalfuse.write_report(acc, args.report)
    if args.scores:
        evalfuse.write_scores(table, args.scores)
    for q, a in enumerate(acc, 1):
        print(f"ratio {q / len(acc):.1f}  accuracy {a:.4f}")
    return 0


def cmd_fuse(args) -> int:
    beta = args.beta if args.beta is not None else _config(args).beta
    fused, acc = evalfuse.fuse_streams(evalfuse.read_scores(args.rgb),
                                       evalfuse.read_scores(args.flow), beta)
    evalfuse.write_report(acc, args.report)
    if args.scores:
        evalfuse.write_scores(fused, args.scores)
    for q, a in enumerate(acc, 1):
        print(f"ratio {q / len(acc):.1f}  fused accuracy {a:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(args.seed)
    for r in results:
        label = "max rel err" if r.kind == "rel" else "max abs err"
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:<32} {label} {r.error:.3e} (tol {r.tolerance:.0e})")
    bad = [r for r in results if not r.ok]
    if bad:
        print(f"gradcheck: {len(bad)} of {len(results)} groups failed", file=sys.stderr)
        return 1
    print(f"gradcheck: all {len(results)} groups passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amemnet",
        description="Memory-augmented adversarial early action prediction on feature vectors.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def with_config(p):
        p.add_argument("--config", help="key = value run configuration file")
        p.add_argument("--set", action="append", type=_pair, metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("synth", help="write a synthetic two-stream benchmark")
    with_config(p)
    p.add_argument("--out", required=True, help="output directory (one subdirectory per stream)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one stream and save the model archive")
    with_config(p)
    p.add_argument("--data", required=True, help="stream dataset directory")
    p.add_argument("--out", required=True, help="model directory to write")
    p.add_argument("--epochs", type=int, help="override the config epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-ratio accuracy and class scores of a trained model")
    p.add_argument("--data", required=True, help="stream dataset directory")
    p.add_argument("--model", required=True, help="model directory written by train")
    p.add_argument("--report", required=True, help="output CSV: ratio,accuracy")
    p.add_argument("--scores", help="output CSV: sample_id,p,label,score_0..")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="late fusion of two score files: rgb + beta * flow")
    p.add_argument("--rgb", required=True, help="score CSV of the appearance stream")
    p.add_argument("--flow", required=True, help="score CSV of the motion stream")
    p.add_argument("--beta", type=float, help="fusion weight (default: config beta, 1.5)")
    p.add_argument("--config", help="run configuration supplying beta")
    p.add_argument("--report", required=True, help="output CSV: ratio,accuracy")
    p.add_argument("--scores", help="fused score CSV")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gradcheck", help="finite-difference check of both training objectives")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _thread_limit():
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0")
    return threadpool_limits(limits=n) if n else nullcontext()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"amemnet {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
