"""Command-line entry point.

Exit codes: 0 success, 2 usage or config problem (including unreadable or
malformed input files), 3 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import ConfigError, FormatError, InvalidArgumentError, NumericDomainError, TrainingError
from .inversion import write_trajectory_csv
from .preference import read_pairs, write_pairs, write_pool_csv

log = logging.getLogger("invdpo")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc.strerror}") from None


def _load_pairs(path):
    try:
        return read_pairs(path)
    except OSError as exc:
        raise UsageError(f"cannot read pair file {path}: {exc.strerror}") from None


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = _outdir(args.out)
    model, s, report = ex.run_pretrain(cfg)
    save_checkpoint(model, s, out / "base.idpo")
    report.write_csv(out / "pretrain_report.csv")
    final = report.summary["final_loss"]
    if not report.summary["gate_passed"]:
        log.warning("final loss %.4f is above the gate %.4f", final, cfg["pretrain.loss_gate"])
    print(f"pretrain: final loss {final:.5f} -> {out / 'base.idpo'}")
    return EXIT_OK


def cmd_pairgen(args) -> int:
    cfg = _config(args)
    model, s = _load_ckpt(args.checkpoint)
    pools, pairs = ex.run_pairgen(cfg, model, s)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pairs(out, pairs, dim=model.data_dim)
    write_pool_csv(out.with_suffix(".csv"), pools)
    print(f"pairgen: {len(pools)} pools, {len(pairs)} pairs -> {out}")
    return EXIT_OK


def cmd_posttrain(args) -> int:
    cfg = _config(args)
    if args.steps is not None:
        cfg["posttrain.steps"] = args.steps
    model, s = _load_ckpt(args.checkpoint)
    if args.inversion_steps is not None:
        s = ex.schedule_from(cfg, args.inversion_steps)
    pairs = _load_pairs(args.pairs)
    out = _outdir(args.out)
    trained, report = ex.run_posttrain(cfg, model, s, pairs, variant=args.variant or cfg["dpo.variant"])
    save_checkpoint(trained, s, out / "posttrained.idpo")
    report.write_csv(out / "posttrain_report.csv")
    last = report.records[-1]
    print(f"posttrain: held-out accuracy {last.pair_accuracy:.3f}, margin {last.margin_mean:.4g}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    model, s = _load_ckpt(args.checkpoint)
    out = _outdir(args.out)
    res = ex.run_diagnose(cfg, model, s)
    _write_rows(out / "diagnose.csv", ["T", "metric", "value"], res.rows)
    for T, (inv, fwd) in res.trajectories.items():
        write_trajectory_csv(inv, out / f"trajectory_T{T}_inverted.csv", label=f"T{T}")
        write_trajectory_csv(fwd, out / f"trajectory_T{T}_sampled.csv", label=f"T{T}")
    for T, metric, value in res.rows:
        print(f"T={T:4d} {metric:18s} {value:.6g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    model, s = _load_ckpt(args.checkpoint)
    pairs = _load_pairs(args.pairs)
    out = _outdir(args.out)
    rows, summary = ex.run_compare(cfg, model, s, pairs, steps=args.steps)
    _write_rows(out / "compare.csv", ["variant", "step", "metric", "value"], rows)
    keys = ["variant", "steps_to_threshold", "threshold", "base_reward", "final_reward_mean", "final_pair_accuracy"]
    _write_rows(
        out / "compare_summary.csv",
        keys,
        [[ex.fmt_steps(r[k]) if k == "steps_to_threshold" else r[k] for k in keys] for r in summary],
    )
    for r in summary:
        print(
            f"{r['variant']:24s} steps-to-threshold {ex.fmt_steps(r['steps_to_threshold']):>6s} "
            f"final reward {r['final_reward_mean']:.5f} accuracy {r['final_pair_accuracy']:.3f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invdpo", description="Inversion-DPO toy laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        sp.add_argument("--seed", type=int, help="shorthand for --set seed=N")

    sp = sub.add_parser("pretrain", help="train the base denoiser")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("pairgen", help="score candidate pools and write preference pairs")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="pair file; pool scores go next to it as .csv")
    sp.set_defaults(func=cmd_pairgen)

    sp = sub.add_parser("posttrain", help="preference post-training")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--variant", choices=["diffusion-dpo", "inversion-dpo"])
    sp.add_argument("--inversion-steps", type=int)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_posttrain)

    sp = sub.add_parser("diagnose", help="inversion fidelity across step counts")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("compare", help="matched-budget comparison of the loss variants")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, FormatError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NumericDomainError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
