"""Command-line entry points tying data, training, analysis, and checkpoints together.

Commands write into a fixed output-directory layout so experiment folders
diff cleanly:

    config.json          resolved configuration echo
    checkpoint.bin       every named tensor plus the config that made it
    train_loss.csv       per-epoch training loss
    metrics.csv          per-cell test and final dev metrics
    result.json          run summary (the only place wall clock appears)
    ablation.csv         variant grid comparison        (ablate)
    heatmap_<axis>.csv   group-by-expert gate weights   (analyze)
    smoothness_<axis>.json  gate-distribution statistics (analyze)

Exit codes: 0 success, 1 operation failure (divergence, tolerance breach,
bad checkpoint), 2 configuration or usage errors. The TEA_LOG environment
variable sets verbosity (warning by default; "info" adds run narration,
"debug" adds per-epoch detail).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import backbone as bb
from . import analysis
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, load_config, save_config
from .errors import ConfigError, ContractError, DataError, NumericError, TrainingDiverged
from .synthdata import generate
from .training import (
    cell_key,
    result_record,
    run_ablation_suite,
    train,
    write_ablation_csv,
    write_metrics_csv,
    write_train_loss_csv,
)

__all__ = ["main", "cmd_train", "cmd_ablate", "cmd_analyze", "cmd_gradcheck"]

log = logging.getLogger("gatedlora")

_LOCK_NAME = ".lock"


def _setup_logging() -> None:
    raw = os.environ.get("TEA_LOG", "")
    level = logging.WARNING
    if raw:
        try:
            level = int(raw)
        except ValueError:
            level = getattr(logging, raw.upper(), None)
            if not isinstance(level, int):
                level = logging.WARNING
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)


class OutDirLock:
    """Exclusive-create lock file; concurrent runs must use distinct dirs."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, _LOCK_NAME)
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run: {self.path} exists"
            ) from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.remove(self.path)
        return False


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "n_experts": args.n_experts,
        "rank": args.rank,
        "mode": args.mode,
        "granularity": args.granularity,
        "conflict": args.conflict,
        "epochs": args.epochs,
    }
    return apply_overrides(config, overrides)


def cmd_train(args) -> int:
    config = _resolve_config(args)
    os.makedirs(config.out_dir, exist_ok=True)
    with OutDirLock(config.out_dir):
        save_config(config, os.path.join(config.out_dir, "config.json"))
        log.info("generating data: %d tasks x %d eras, conflict %.2f",
                 config.data.n_tasks, config.data.n_eras, config.data.conflict)
        dataset = generate(config.data)
        log.info("training: mode %s, rank %d, %d experts, %d epochs",
                 config.train.mode.value, config.train.rank,
                 config.train.n_experts, config.train.epochs)
        result = train(config.train, dataset)
        for epoch, loss in enumerate(result.train_loss):
            log.debug("epoch %d: train loss %.6f", epoch, loss)
        write_train_loss_csv(result, os.path.join(config.out_dir, "train_loss.csv"))
        write_metrics_csv(result, os.path.join(config.out_dir, "metrics.csv"))
        with open(os.path.join(config.out_dir, "result.json"), "w", encoding="utf-8", newline="\n") as f:
            json.dump(result_record(result), f, indent=2)
            f.write("\n")
        save_checkpoint(os.path.join(config.out_dir, "checkpoint.bin"), result.model, config)
    print(f"train: {result.steps} steps, mean test accuracy "
          f"{result.mean_test_accuracy:.4f}, wrote {config.out_dir}")
    return 0


def cmd_ablate(args) -> int:
    config = _resolve_config(args)
    os.makedirs(config.out_dir, exist_ok=True)
    with OutDirLock(config.out_dir):
        save_config(config, os.path.join(config.out_dir, "config.json"))
        dataset = generate(config.data)
        rows = run_ablation_suite(config.train, dataset)
        write_ablation_csv(rows, os.path.join(config.out_dir, "ablation.csv"))
    variants = sorted({(r.variant, r.granularity) for r in rows})
    print(f"ablate: {len(variants)} variants, {len(rows)} rows, wrote "
          f"{os.path.join(config.out_dir, 'ablation.csv')}")
    return 0


def cmd_analyze(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    dataset = generate(ckpt.config.data)
    axes = ("task", "era") if args.axis == "both" else (args.axis,)
    variant = ckpt.config.train.mode.value
    for axis in axes:
        matrix = analysis.utilization(model, dataset.train, axis)
        report = analysis.smoothness(matrix)
        heat_path = os.path.join(out_dir, f"heatmap_{axis}.csv")
        smooth_path = os.path.join(out_dir, f"smoothness_{axis}.json")
        analysis.export_heatmap_data(matrix, heat_path)
        analysis.write_smoothness_json(report, variant, axis, smooth_path)
        print(f"analyze: axis {axis}, variance {report.variance:.5f}, "
              f"entropy {report.entropy:.5f}, max-min {report.max_min:.5f}")
    print(f"analyze: wrote {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        load_config(args.config)  # validated for diagnostics, sizes stay pinned
    report = bb.gradient_check()
    print(f"gradcheck: max relative error {report['max_rel_err']:.3e} over "
          f"{report['tensors_checked']} tensors in {report['seconds']:.1f}s "
          f"(worst: {report['worst']})")
    if report["max_rel_err"] > 1e-5:
        print(f"gradcheck: FAIL, {report['worst']} exceeds 1e-5", file=sys.stderr)
        return 1
    return 0


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--n-experts", type=int, dest="n_experts", help="expert count N")
    p.add_argument("--rank", type=int, help="total adapter rank, split across experts")
    p.add_argument("--mode", choices=["separate", "concat", "task-only", "era-only", "no-moe"],
                   help="gate wiring")
    p.add_argument("--granularity", choices=["coarse", "fine"], help="task id scheme")
    p.add_argument("--conflict", type=float, help="cross-task/era disagreement in [0, 1]")
    p.add_argument("--epochs", type=int, help="training epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatedlora",
        description="Dual-gated mixture-of-low-rank-adapters experiments on synthetic data.",
        epilog="Precedence: command-line flags override config-file values, "
               "which override built-in defaults. TEA_LOG sets log verbosity.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model and write checkpoint + metrics")
    _add_override_flags(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run the routing-variant grid and write one CSV")
    _add_override_flags(p_ablate)
    p_ablate.set_defaults(fn=cmd_ablate)

    p_analyze = sub.add_parser("analyze", help="expert utilization and smoothness from a checkpoint")
    p_analyze.add_argument("checkpoint", help="checkpoint file from train")
    p_analyze.add_argument("--axis", choices=["task", "era", "both"], default="both")
    p_analyze.add_argument("--out", metavar="DIR", help="output directory (default: checkpoint's)")
    p_analyze.set_defaults(fn=cmd_analyze)

    p_grad = sub.add_parser("gradcheck", help="analytic vs. finite-difference gradient comparison")
    p_grad.add_argument("--config", metavar="PATH", help="validated but sizes stay pinned tiny")
    p_grad.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, ContractError, NumericError, TrainingDiverged, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
