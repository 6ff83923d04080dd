"""Command-line entry point.

    swinmamba {selftest,gradcheck,scan-dump,bench,train,eval,ablate}
              [--config PATH] [--seed N] [--threads N] [--out DIR] [--precision {f64,f32}]
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import runconfig, scan
from .bench import format_table, run_bench
from .checks import FAULTS, GRAD_TOL, RESOLVED, run_gradcheck, run_properties
from .data import stack
from .metrics import ConfusionMatrix, miou
from .model import SwinMambaSeg
from .nn import set_num_threads, swmt
from .train import ablation_run, best_miou, make_datasets, train_loop


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value run configuration")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for data-parallel maps")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--precision", choices=("f64", "f32"), default="f64")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swinmamba", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selftest", help="run the property suite")
    _common(p)
    p.add_argument("--inject-fault", choices=FAULTS, help="test hook: corrupt one scan index")

    p = sub.add_parser("gradcheck", help="finite-difference check of backward passes")
    _common(p)
    p.add_argument("--scope", choices=("op", "block", "model"), default="op")

    p = sub.add_parser("scan-dump", help="write per-window, per-direction scan orders as CSV")
    _common(p)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--window", type=int, default=14)
    p.add_argument("--shift", type=int, default=0)
    p.add_argument("--mode", choices=("global", "window", "shifted", "boundary"), default="window")

    p = sub.add_parser("bench", help="global sequential vs windowed parallel S6 throughput")
    _common(p)
    p.add_argument("--resolutions", type=str, help="comma-separated input sides (overrides config)")
    p.add_argument("--window", type=int, help="window side (overrides config)")

    for name, text in (("train", "train on synthetic scenes"), ("eval", "evaluate a checkpoint"),
                       ("ablate", "scan-mode and window ablations")):
        _common(sub.add_parser(name, help=text))
    return parser


def _settings(args, command: str):
    values = runconfig.load(args.config)
    if args.seed is not None:
        values["seed"] = args.seed
    return runconfig.resolve(values, command)


def _out_dir(args, default: str) -> Path:
    return args.out if args.out is not None else Path(default)


def _require_f64(args, command: str) -> None:
    if args.precision != "f64":
        raise runconfig.ConfigError(f"{command}: 32-bit precision is only available for bench")


# -- commands --------------------------------------------------------------------------

def cmd_selftest(args) -> int:
    results = run_properties(args.seed or 0, args.inject_fault)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return 1 if failed else 0


def cmd_gradcheck(args) -> int:
    if args.precision != "f64":
        print("note: gradcheck always runs at 64-bit precision")
    reports = run_gradcheck(args.scope, args.seed or 0)
    print(f"{'target':<20} {'max rel err':>12} {'checked':>8} {'resolved rel':>13} "
          f"{'tiny |g|':>8} {'tiny abs err':>13}  status")
    bad = 0
    for r in reports:
        if r.max_rel_error is None:
            print(f"{r.name:<20} {'-':>12} {r.checked:>8} {'-':>13} {'-':>8} {'-':>13}  {r.note}")
            continue
        ok = r.passed
        bad += not ok
        print(f"{r.name:<20} {r.max_rel_error:>12.3e} {r.checked:>8} {r.resolved_rel_error:>13.3e} "
              f"{r.unresolved:>8} {r.unresolved_abs_error:>13.3e}  {'ok' if ok else 'FAIL'}")
    print(f"tolerance {GRAD_TOL:g} on max rel err: {'all pass' if not bad else f'{bad} target(s) failed'}")
    print(f"resolved rel: coordinates with |gradient| >= {RESOLVED:g}; tiny |g|: the rest")
    return 1 if bad else 0


def scan_dump_rows(h: int, w: int, window: int, shift: int, mode: str) -> List[list]:
    if h < 1 or w < 1:
        raise ValueError(f"map must be at least 1x1, got {h}x{w}")
    if mode != "global":
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        if mode == "shifted" and not 0 <= shift < min(h, w):
            raise ValueError(f"shift {shift} outside [0, {min(h, w)})")
        if mode == "boundary" and not 0 <= shift < window:
            raise ValueError(f"boundary shift {shift} outside [0, {window})")
    return [[wid, d] + idx.tolist() for wid, d, idx in scan.window_scan_indices(h, w, window, shift, mode)]


def cmd_scan_dump(args) -> int:
    rows = scan_dump_rows(args.h, args.w, args.window, args.shift, args.mode)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        fh = open(args.out / "scan_orders.csv", "w", newline="")
    else:
        fh = sys.stdout
    try:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_bench(args) -> int:
    cfg = _settings(args, "bench")
    out = _out_dir(args, "runs/bench")
    runconfig.echo(cfg, out)
    res = [int(v) for v in args.resolutions.split(",")] if args.resolutions else list(cfg["bench_resolutions"])
    window = args.window or cfg["window"]
    rows = run_bench(res, window, args.threads, args.precision, cfg["bench_dim"], cfg["d_state"],
                     cfg["bench_batch"], cfg["bench_trials"], cfg["bench_warmup"], cfg["seed"],
                     out / "bench.csv")
    print(format_table(rows))
    return 0


def _record_printer(rec: dict) -> None:
    if rec["kind"] == "eval":
        print(f"step {rec['step']:>5}  val mIoU {rec['miou']:.4f}  pixel acc {rec['pixel_acc']:.4f}", flush=True)


def cmd_train(args) -> int:
    _require_f64(args, "train")
    cfg = _settings(args, "train")
    out = _out_dir(args, "runs/train")
    runconfig.echo(cfg, out)
    tcfg = runconfig.train_config(cfg)
    train_set, val_set = make_datasets(tcfg)
    _, hist = train_loop(tcfg, train_set, val_set, out_dir=out, on_record=_record_printer)
    summary = {"best_miou": best_miou(hist), "steps": tcfg.steps, "checkpoint": str(out / "best.swmc")}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"best val mIoU {summary['best_miou']:.6f} -> {summary['checkpoint']}")
    return 0


def cmd_eval(args) -> int:
    _require_f64(args, "eval")
    cfg = _settings(args, "eval")
    out = _out_dir(args, "runs/eval")
    runconfig.echo(cfg, out)
    tcfg = runconfig.train_config(cfg)
    model = SwinMambaSeg(tcfg.model, seed=tcfg.seed)
    model.load(cfg["checkpoint"])
    _, val_set = make_datasets(tcfg)
    images, labels = stack(val_set)
    logits = model.predict_logits(images, tcfg.batch_size)
    pred = logits.argmax(axis=1).astype(np.uint8)
    cm = ConfusionMatrix(tcfg.model.num_classes).update(pred, labels)
    result = {"miou": miou(cm), "pixel_acc": float(np.trace(cm.counts) / cm.total), "n": len(val_set)}
    swmt.save_tensor(out / "logits.swmt", logits.astype(np.float64))
    swmt.save_tensor(out / "predictions.swmt", pred)
    (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n")
    print(f"val mIoU {result['miou']:.6f}  pixel acc {result['pixel_acc']:.4f}  ({result['n']} scenes)")
    return 0


def cmd_ablate(args) -> int:
    _require_f64(args, "ablate")
    cfg = _settings(args, "ablate")
    out = _out_dir(args, "runs/ablate")
    runconfig.echo(cfg, out)
    tcfg = runconfig.train_config(cfg)
    ablation_run(tcfg, out, steps=cfg["ablate_steps"])
    print(f"tables written to {out / 'ablation_scan_modes.csv'} and {out / 'ablation_window.csv'}")
    return 0


COMMANDS = {
    "selftest": cmd_selftest, "gradcheck": cmd_gradcheck, "scan-dump": cmd_scan_dump, "bench": cmd_bench,
    "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        set_num_threads(args.threads)
        # BLAS stays single-threaded so reductions never depend on its scheduling
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except (runconfig.ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
