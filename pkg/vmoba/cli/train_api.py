import logging
from pathlib import Path
from typing import Dict, List, Tuple

from vmoba.config import RunConfig
from vmoba.errors import ConfigError, DivergenceError
from vmoba.storage import ReportStorage
from vmoba.toytrain.entities import LossTrace
from vmoba.toytrain.toytrain_api import compare_losses, train
from .value_objects import ExitCode

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "loss", "wall_ms"]


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def _save_trace(out_dir: Path, name: str, trace: LossTrace) -> None:
    ReportStorage.save_csv(out_dir / f"trace_{name}.csv", trace.rows(), TRACE_COLUMNS)
    ReportStorage.save_csv(out_dir / f"trace_{name}_val.csv", trace.eval_rows(), ["step", "val_loss"])


def _run_modes(config: RunConfig, out_dir: Path, workers: int, long: bool) -> Tuple[List[LossTrace], Dict]:
    """Train each mode in turn; a diverged run still writes its partial trace."""
    suffix = "_long" if long else ""
    traces: List[LossTrace] = []
    for mode in config.toy.modes:
        toy = config.toy.to_domain(mode, workers, long=long)
        try:
            trace = train(toy)
        except DivergenceError as e:
            _save_trace(out_dir, f"{mode}{suffix}", e.trace)
            raise
        _save_trace(out_dir, f"{mode}{suffix}", trace)
        logger.info("%s%s: loss %.6f -> %.6f", mode, suffix, trace.initial_loss, trace.final_loss)
        traces.append(trace)

    summary = {
        "seq_len": traces[0].seq_len,
        "traces": {mode: trace.to_dict() for mode, trace in zip(config.toy.modes, traces)},
    }
    if len(traces) > 1:
        comparison = compare_losses(traces)
        ReportStorage.save_csv(out_dir / f"comparison{suffix}.csv", comparison.rows())
        summary["comparison"] = comparison.to_dict()
    ReportStorage.save_json(out_dir / f"comparison{suffix}.json", summary)
    return traces, summary


# ==========================================
# COMMAND
# ==========================================

def cmd_train_toy(config: RunConfig, out_dir: Path, workers: int = 1) -> Tuple[ExitCode, Dict]:
    if config.toy is None:
        raise ConfigError("train-toy needs a 'toy' section in the config")
    out_dir = Path(out_dir)
    report: Dict = {}
    try:
        traces, report["default"] = _run_modes(config, out_dir, workers, long=False)
        if config.toy.long_geometry is not None:
            _, report["long"] = _run_modes(config, out_dir, workers, long=True)
    except DivergenceError as e:
        logger.error("%s", e)
        report["diverged"] = str(e)
        ReportStorage.save_json(out_dir / "divergence.json", report)
        return ExitCode.CHECK_FAILED, report

    schemes = {mode: trace.layer_schemes for mode, trace in zip(config.toy.modes, traces)}
    ReportStorage.save_json(out_dir / "layer_schemes.json", schemes)
    return ExitCode.OK, report
