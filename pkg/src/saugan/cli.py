"""Single command-line entry point.

Subcommands: gradcheck, oracle-check, bench, make-data, train, infer,
export-ppm. Exit codes: 0 success / all checks passed, 1 verification
failure, 2 usage error. All randomness derives from --seed (or the
config's seed); every run prints its resolved configuration to stderr.
CSV reports carry a ``# schema=1`` header comment. The SAU_THREADS
environment variable caps BLAS worker threads.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

_thread_limiter = None


def _configure_threads() -> None:
    global _thread_limiter
    raw = os.environ.get("SAU_THREADS")
    if not raw:
        return
    try:
        from threadpoolctl import threadpool_limits

        _thread_limiter = threadpool_limits(limits=max(1, int(raw)))
    except ImportError:  # best effort; BLAS keeps its default
        os.environ.setdefault("OMP_NUM_THREADS", raw)


def _print_config(cfg, seed=None) -> None:
    from .config import format_config

    for line in format_config(cfg).strip().splitlines():
        print(f"# {line}", file=sys.stderr)
    if seed is not None:
        print(f"# seed={seed}", file=sys.stderr)


def _load_run_config(args):
    from .config import RunConfig, load_config, parse_config

    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    overrides = "\n".join(getattr(args, "set", None) or [])
    if overrides:
        cfg = parse_config(overrides, base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg = parse_config(f"seed={args.seed}", base=cfg)
    return cfg


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_registry

    print(f"# seed={args.seed} tol={args.tol}"
          + (f" ops={','.join(args.op)}" if args.op else ""), file=sys.stderr)
    reports = run_registry(names=args.op or None, seed=args.seed, tol=args.tol)
    print("# schema=1")
    print("op,input,max_rel_err,pass")
    ok = True
    for report in reports:
        for op, name, err, passed in report.rows():
            print(f"{op},{name},{err:.3e},{int(passed)}")
            ok = ok and passed
    return 0 if ok else 1


def cmd_oracle_check(args) -> int:
    from .sau import oracle_sweep

    print(f"# seed={args.seed} cases={args.cases} tol={args.tol}", file=sys.stderr)
    results = oracle_sweep(args.cases, args.seed)
    print("# schema=1")
    print("case,shape,max_abs_err,pass")
    ok = True
    for i, (desc, err) in enumerate(results):
        passed = err <= args.tol
        print(f"{i},{desc},{err:.3e},{int(passed)}")
        ok = ok and passed
    return 0 if ok else 1


def _parse_shape(text: str) -> tuple[int, int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"shape must be NxCxHxW, got {text!r}")
    return tuple(int(p) for p in parts)


def cmd_bench(args) -> int:
    from .rng import make_rng
    from .sau import SauConfig, init_sau_params, sau_forward, sau_naive

    n, c, h, w = args.shape
    dtype = np.float32 if args.dtype == "f32" else np.float64
    cfg = SauConfig(channels=c, compressed=min(64, c), k=args.k, s=args.s)
    rng = make_rng(args.seed)
    f = rng.normal(size=(n, c, h, w)).astype(dtype)
    params = init_sau_params(cfg, rng, dtype=dtype)
    print(f"# seed={args.seed} shape={n}x{c}x{h}x{w} k={args.k} s={args.s} "
          f"iters={args.iters} warmup={args.warmup} dtype={args.dtype}", file=sys.stderr)
    impls = {"naive": sau_naive, "optimized": sau_forward}
    print("# schema=1")
    print("impl,shape,k,s,wall_ns_per_iter,throughput_elems_per_s")
    out_elems = n * c * h * args.s * w * args.s
    for name in args.impl:
        fn = impls[name]
        for _ in range(args.warmup):
            fn(f, params, cfg)
        t0 = time.perf_counter_ns()
        for _ in range(args.iters):
            fn(f, params, cfg)
        ns = (time.perf_counter_ns() - t0) / args.iters
        print(f"{name},{n}x{c}x{h}x{w},{args.k},{args.s},{ns:.0f},{out_elems / (ns * 1e-9):.3e}")
    return 0


def cmd_make_data(args) -> int:
    from .data import dataset_iter, parse_scene_spec, save_sample, SceneSpec

    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = parse_scene_spec(fh.read())
    else:
        spec = SceneSpec()
    if args.seed is not None:
        spec = SceneSpec(**{**spec.__dict__, "seed": args.seed})
    for k, v in sorted(spec.__dict__.items()):
        print(f"# {k}={v}", file=sys.stderr)
    os.makedirs(args.out, exist_ok=True)
    for sample in dataset_iter(spec, args.count, with_cond=args.with_cond):
        save_sample(os.path.join(args.out, f"sample_{sample.index:06d}.stns"), sample, spec)
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import evaluate_palette_accuracy, run_training

    cfg = _load_run_config(args)
    _print_config(cfg, cfg.seed)
    out_dir = args.out or "train_out"

    def on_report(report):
        if args.log_every and report.step % args.log_every == 0:
            print(f"step {report.step}: {report.csv_row()}", file=sys.stderr)

    result = run_training(cfg, out_dir=out_dir, on_report=on_report)
    final_l1 = result.final_l1()
    print(f"trained {cfg.steps} steps in {result.wall_seconds:.1f}s; "
          f"final masked-L1 (10-step mean) {final_l1:.4f}")
    print(f"losses: {os.path.join(out_dir, 'losses.csv')}")
    print(f"checkpoint: {result.checkpoint_path}")
    if args.eval_count > 0:
        acc = evaluate_palette_accuracy(result.model, count=args.eval_count)
        print(f"held-out palette accuracy over {args.eval_count} layouts: {acc:.4f}")
    return 0


def cmd_infer(args) -> int:
    from .data import load_sample
    from .ppm import export_ppm
    from .stns import read
    from .data import SemanticLayout, to_onehot
    from .train import generate_image, load_checkpoint

    model, step = load_checkpoint(args.checkpoint)
    _print_config(model.cfg, model.cfg.seed)
    print(f"# checkpoint step={step}", file=sys.stderr)
    cond = None
    try:
        sample = load_sample(args.layout)
        layout, cond = sample.layout, sample.cond
    except (ValueError, KeyError):  # not a sample archive; try a bare labels tensor
        labels = read(args.layout)
        if labels.ndim != 2:
            raise ValueError(f"layout tensor must be rank 2, got rank {labels.ndim}")
        layout = SemanticLayout.from_labels(labels.astype(np.int64), model.cfg.n_classes)
    onehot = to_onehot(layout).astype(np.float32)[None]
    if model.cfg.mode == "crossview":
        if cond is None:
            raise ValueError("cross-view inference needs a sample archive with a cond view")
        image = generate_image(model, onehot, cond)
    else:
        image = generate_image(model, onehot)
    export_ppm(image, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_export_ppm(args) -> int:
    from .ppm import export_ppm
    from .stns import read

    tensor = read(args.input)
    export_ppm(tensor, args.out)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saugan",
        description="Semantic-aware upsampling and local/global GAN toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every registered backward")
    p.add_argument("--op", action="append", help="check only this op (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-check", help="compare optimized SAU against the loop oracle")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("bench", help="time SAU implementations")
    p.add_argument("--impl", action="append", choices=["naive", "optimized"], required=True)
    p.add_argument("--shape", type=_parse_shape, default=(1, 64, 32, 32), metavar="NxCxHxW")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-data", help="write procedural samples as STNS archives")
    p.add_argument("--spec", help="scene spec file (key=value lines)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-cond", action="store_true", help="include the conditional view")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train on the procedural dataset")
    p.add_argument("--config", help="config file (key=value lines)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory (default train_out)")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--eval-count", type=int, default=0,
                   help="after training, score this many held-out layouts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="render a layout with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layout", required=True,
                   help="sample archive or rank-2 labels tensor (.stns)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-ppm", help="quantize an image tensor to binary P6")
    p.add_argument("--input", required=True, help="STNS tensor, (1,3,H,W) or (3,H,W) in [0,1]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_ppm)

    return parser


def main(argv=None) -> int:
    _configure_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"saugan {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
