"""Command-line interface: ``nstbench transfer|bench|gradcheck|weights``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .errors import GeometryError, NSTError

SIZES = (64, 128, 256, 512)
DEFAULT_BUDGET = 4 * 2**30


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_float(text):
    v = _nonneg_float(text)
    if v == 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _list_of(choices, convert=str):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        out = []
        for item in items:
            try:
                value = convert(item)
            except ValueError:
                raise argparse.ArgumentTypeError(f"invalid entry {item!r}") from None
            if value not in choices:
                raise argparse.ArgumentTypeError(
                    f"invalid entry {item!r} (choose from {', '.join(map(str, choices))})")
            out.append(value)
        return tuple(out)
    return parse


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # show defaults only where there is one to show
    def _get_help_string(self, action):
        if action.required or action.default is None:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    from .models import KINDS

    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="nstbench", formatter_class=fmt,
                                     description="Neural style transfer engine and iterations-per-minute benchmark.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("transfer", formatter_class=fmt, help="run style transfer on two images")
    t.add_argument("--content", required=True, type=Path, metavar="PATH", help="content image (PNG or PPM)")
    t.add_argument("--style", required=True, type=Path, metavar="PATH", help="style image (PNG or PPM)")
    t.add_argument("--out", required=True, type=Path, metavar="PATH", help="output image (.png or .ppm)")
    t.add_argument("--model", default="vgg-desk", choices=KINDS, help="network architecture")
    t.add_argument("--size", default=128, type=int, metavar="PX", help="square working resolution: 64, 128, 256 or 512")
    t.add_argument("--iters", default=500, type=_positive_int, metavar="N", help="optimisation steps")
    t.add_argument("--backend", default="fast", choices=("naive", "fast"), help="kernel backend")
    t.add_argument("--seed", default=0, type=int, metavar="N", help="seed for weights and noise init")
    t.add_argument("--content-weight", default=1.0, type=_nonneg_float, metavar="F", help="content loss weight")
    t.add_argument("--style-weight", default=1e3, type=_nonneg_float, metavar="F", help="style loss weight")
    t.add_argument("--init", default="content", choices=("content", "noise"), help="starting image")
    t.add_argument("--snapshot-every", default=0, type=_nonneg_int, metavar="N",
                   help="write <out-stem>_iter<N> every N steps (0 = off)")
    t.add_argument("--weights", default=None, type=Path, metavar="PATH", help="weight file (default: seeded random init)")
    t.add_argument("--mem-budget", default=DEFAULT_BUDGET, type=_positive_int, metavar="BYTES",
                   help="refuse runs whose predicted peak memory exceeds this many bytes")

    b = sub.add_parser("bench", formatter_class=fmt, help="measure iterations per minute")
    b.add_argument("--models", default=",".join(KINDS), type=_list_of(KINDS), metavar="LIST", help="comma-separated model kinds")
    b.add_argument("--sizes", default="64,128,256", type=_list_of(SIZES, int), metavar="LIST", help="comma-separated resolutions")
    b.add_argument("--backends", default="naive,fast", type=_list_of(("naive", "fast")), metavar="LIST",
                   help="comma-separated backends")
    mode = b.add_mutually_exclusive_group()
    mode.add_argument("--seconds", default=None, type=_positive_float, metavar="F", help="measure each cell for this long")
    mode.add_argument("--iterations", default=50, type=_positive_int, metavar="N", help="measure this many steps per cell")
    b.add_argument("--warmup", default=3, type=_nonneg_int, metavar="N", help="unmeasured steps before each cell")
    b.add_argument("--seed", default=0, type=int, metavar="N", help="seed for the synthetic workload")
    b.add_argument("--mem-budget", default=DEFAULT_BUDGET, type=_positive_int, metavar="BYTES",
                   help="cells predicted above this many bytes are refused")
    b.add_argument("--csv", required=True, type=Path, metavar="PATH", help="CSV output path")
    b.add_argument("--report", default=None, type=Path, metavar="PATH",
                   help="markdown report path; PNG figures are written next to it")

    g = sub.add_parser("gradcheck", formatter_class=fmt, help="finite-difference gradient suite")
    g.add_argument("--seed", default=0, type=int, metavar="N", help="seed for random instances")

    w = sub.add_parser("weights", formatter_class=fmt, help="create or inspect weight files")
    wsub = w.add_subparsers(dest="action", required=True, metavar="ACTION")
    wi = wsub.add_parser("init", formatter_class=fmt, help="write seeded random weights")
    wi.add_argument("--model", required=True, choices=KINDS, help="network architecture")
    wi.add_argument("--seed", required=True, type=int, metavar="N", help="initialisation seed")
    wi.add_argument("--out", required=True, type=Path, metavar="PATH", help="weight file to write")
    ws = wsub.add_parser("inspect", formatter_class=fmt, help="describe a weight file")
    ws.add_argument("path", type=Path, help="weight file")
    parser.subcommands = {"transfer": t, "bench": b, "gradcheck": g, "weights": w}
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse and validate; usage problems exit with status 2."""
    from .models import build_model, check_resolution

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "transfer":
        sub = parser.subcommands["transfer"]
        try:
            check_resolution(build_model(args.model), args.size)
        except GeometryError as exc:
            sub.error(f"argument --size: {args.size} px is not a valid geometry for {args.model}: {exc}")
        if args.size not in SIZES:
            sub.error(f"argument --size: {args.size} is not one of {', '.join(map(str, SIZES))}")
        if args.content_weight + args.style_weight <= 0:
            sub.error("argument --content-weight/--style-weight: at least one weight must be positive")
    if args.command == "bench" and args.seconds is not None:
        args.iterations = None
    return args


def _err(msg: str) -> None:
    print(f"nstbench: error: {msg}", file=sys.stderr)


def cmd_transfer(args) -> int:
    from .bench import estimate_memory
    from .imageio import load_image, save_image
    from .models import build_model, init_weights
    from .plotting import plot_loss_trace
    from .style import StyleConfig, run
    from .weightfile import load_weights

    spec = build_model(args.model)
    est = estimate_memory(spec, args.size)
    if est.total > args.mem_budget:
        _err(f"predicted peak memory {est.total} bytes exceeds budget {args.mem_budget} "
             f"at {args.size} px; lower --size or raise --mem-budget")
        return 1
    content = load_image(args.content, args.size)
    style = load_image(args.style, args.size)
    if args.weights is not None:
        weights = load_weights(args.weights)
        weights.validate(spec)
    else:
        weights = init_weights(spec, args.seed)
    cfg = StyleConfig(content_weight=args.content_weight, style_weight=args.style_weight,
                      iterations=args.iters, init=args.init, snapshot_every=args.snapshot_every,
                      seed=args.seed)

    def progress(rec):
        if rec.iteration == 1 or rec.iteration % 50 == 0 or rec.iteration == cfg.iterations:
            print(f"iter {rec.iteration:5d}  total {rec.total:.6g}  content {rec.content:.6g}  "
                  f"style {rec.style:.6g}  ({rec.seconds * 1e3:.1f} ms)")

    image, report = run(content, style, spec, weights, cfg, args.backend, progress, args.out)
    save_image(image, args.out)
    trace = args.out.with_name(f"{args.out.stem}_trace.csv")
    with open(trace, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "content_loss", "style_loss", "total_loss", "seconds"])
        for r in report.records:
            w.writerow([r.iteration, repr(r.content), repr(r.style), repr(r.total), repr(r.seconds)])
    plot_loss_trace(report, trace.with_suffix(".png"))
    print(f"wrote {args.out}, {trace}")
    return 0


def cmd_bench(args) -> int:
    from .bench import BenchConfig, emit_csv, emit_report, run_bench

    cfg = BenchConfig(models=args.models, resolutions=args.sizes, backends=args.backends,
                      iterations=args.iterations, seconds=args.seconds, warmup=args.warmup,
                      seed=args.seed, memory_budget=args.mem_budget)

    def progress(rec):
        if rec.status == "ok":
            print(f"{rec.model:9s} {rec.backend:5s} {rec.resolution:4d} px  "
                  f"{rec.iters_per_min:10.1f} it/min  ({rec.iterations} in {rec.elapsed_s:.2f} s)")
        else:
            print(f"{rec.model:9s} {rec.backend:5s} {rec.resolution:4d} px  refused: "
                  f"predicted {rec.peak_mem_bytes} bytes > budget {cfg.memory_budget}")

    records = run_bench(cfg, progress=progress)
    emit_csv(records, args.csv)
    if args.report is not None:
        emit_report(records, args.report)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    results = run_suite(seed=args.seed)
    for r in results:
        extra = f"  skipped {r.skipped} kink-straddling coords" if r.skipped else ""
        print(f"{r.name:32s} max rel err {r.max_error:.3e}  over {r.instances} instances  "
              f"{'ok' if r.passed else 'FAIL'}{extra}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        _err(f"gradient check above {TOLERANCE:g}: {', '.join(failed)}")
        return 1
    return 0


def cmd_weights(args) -> int:
    from .models import build_model, init_weights
    from .weightfile import load_weights, save_weights

    if args.action == "init":
        save_weights(init_weights(build_model(args.model), args.seed), args.out)
        print(f"wrote {args.out}")
        return 0
    store = load_weights(args.path)
    total = sum(w.size + b.size for w, b in store.entries.values())
    print(f"kind: {store.kind}")
    print(f"conv layers: {len(store.entries)}")
    print(f"parameters: {total}")
    for idx, (w, b) in sorted(store.entries.items()):
        print(f"  layer {idx:2d}: weight {'x'.join(map(str, w.shape))}  bias {b.size}")
    return 0


COMMANDS = {"transfer": cmd_transfer, "bench": cmd_bench, "gradcheck": cmd_gradcheck,
            "weights": cmd_weights}


def dispatch(args) -> int:
    try:
        return COMMANDS[args.command](args)
    except NSTError as exc:
        _err(str(exc))
    except OSError as exc:
        _err(f"{exc.filename}: {exc.strerror}" if exc.filename else str(exc))
    return 1


def main(argv=None) -> int:
    return dispatch(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
