import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from vmoba import __version__
from vmoba.cli import ExitCode, cmd_analyze, cmd_bench, cmd_train_toy, cmd_verify
from vmoba.config import load_config
from vmoba.errors import ConfigError, TensorFormatError

logger = logging.getLogger("vmoba")
console = Console()


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--threads", type=int, default=1, help="worker cap; 1 is bitwise reproducible")
    common.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="vmoba", description="VMoBA reference attention and verification harness")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("verify", parents=[common], help="oracle, gradient, sparsity and partition checks")

    bench = commands.add_parser("bench", parents=[common], help="dense vs VMoBA latency sweep")
    bench.add_argument("--lengths", type=int, nargs="+", default=None, help="sequence lengths to measure")

    analyze = commands.add_parser("analyze", parents=[common], help="attention-pattern reports from Q/K tensors")
    analyze.add_argument("--q", required=True, help="query tensor (VMTB)")
    analyze.add_argument("--k", required=True, help="key tensor (VMTB)")
    analyze.add_argument("--p", type=float, default=0.25, help="top fraction for query importance")
    analyze.add_argument("--cutoffs", type=float, nargs="+", default=[0.3, 0.5])

    commands.add_parser("train-toy", parents=[common], help="toy training comparison against full attention")
    return parser


# ==========================================
# REPORT TABLES
# ==========================================

def _verify_table(report: Dict) -> Table:
    table = Table(title="verify", show_header=True, header_style="bold cyan")
    for column in ("check", "status", "cases", "max error", "tolerance"):
        table.add_column(column)
    for name, check in report["checks"].items():
        status = "[green]ok[/green]" if check["passed"] else "[red]FAILED[/red]"
        tolerance = "-" if check["tolerance"] is None else f"{check['tolerance']:g}"
        table.add_row(name, status, str(check["cases"]), f"{check['max_error']:.3g}", tolerance)
    return table


def _bench_table(report: Dict) -> Table:
    table = Table(title="bench", show_header=True, header_style="bold cyan")
    for column in ("s", "dense ms", "vmoba ms", "flops dense", "flops vmoba"):
        table.add_column(column, justify="right")
    for row in report["rows"]:
        if "dense_ms" not in row:
            table.add_row(str(row["s"]), "[yellow]skipped[/yellow]", "", "", "")
            continue
        table.add_row(str(row["s"]), f"{row['dense_ms']:.2f}", f"{row['vmoba_ms']:.2f}",
                      f"{row['flops_dense']:,}", f"{row['flops_vmoba']:,}")
    return table


def _train_table(report: Dict) -> Table:
    table = Table(title="train-toy", show_header=True, header_style="bold cyan")
    for column in ("run", "initial loss", "final loss", "schemes"):
        table.add_column(column)
    for length, summary in report.items():
        if not isinstance(summary, dict):
            continue
        for mode, trace in summary["traces"].items():
            table.add_row(f"{mode} ({length}, s={trace['seq_len']})", f"{trace['initial_loss']:.6f}",
                          f"{trace['final_loss']:.6f}", " ".join(trace["layer_schemes"]))
    return table


def _print_report(command: str, report: Dict) -> None:
    if command == "verify":
        console.print(_verify_table(report))
    elif command == "bench":
        console.print(_bench_table(report))
        console.print(f"quadratic fit dense {report['fit']['dense']}, vmoba {report['fit']['vmoba']}")
    elif command == "train-toy" and "diverged" not in report:
        console.print(_train_table(report))
    elif command == "analyze":
        console.print(f"analyzed {len(report['heads'])} head/scheme pairs")


# ==========================================
# ENTRY POINT
# ==========================================

def run(args: argparse.Namespace) -> ExitCode:
    config = load_config(args.config)
    out_dir = Path(args.out or config.out_dir)
    workers = max(1, args.threads)
    if args.command == "verify":
        code, report = cmd_verify(config, out_dir, workers)
    elif args.command == "bench":
        code, report = cmd_bench(config, out_dir, args.lengths)
    elif args.command == "analyze":
        code, report = cmd_analyze(config, args.q, args.k, out_dir, args.p, args.cutoffs)
    else:
        code, report = cmd_train_toy(config, out_dir, workers)
    _print_report(args.command, report)
    logger.info("%s finished with exit code %d; outputs in %s", args.command, code, out_dir)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return int(run(args))
    except (OSError, TensorFormatError) as e:
        logger.error("I/O error: %s", e)
        return int(ExitCode.IO)
    except (ConfigError, ValueError) as e:
        logger.error("%s", e)
        return int(ExitCode.USAGE)


if __name__ == "__main__":
    sys.exit(main())
