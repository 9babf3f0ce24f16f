import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from einops import rearrange

from vmoba.config import RunConfig
from vmoba.errors import ShapeMismatchError
from vmoba.metrics.metrics_api import (
    DEFAULT_CUTOFFS,
    block_attention_map,
    concentration_curve,
    query_importance,
)
from vmoba.partition.partition_api import build_layout
from vmoba.selection.selection_api import select, similarity
from vmoba.storage import ReportStorage, TensorStorage
from vmoba.tensor.tensor_api import read_tensor, softmax
from .value_objects import ExitCode
from .verify_api import fit_policy

logger = logging.getLogger(__name__)

CURVE_POINTS = 1000
ROW_CHUNK = 1024


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def _load_heads(path: Union[str, Path], config: RunConfig) -> np.ndarray:
    """
    Read a Q/K tensor and split it per head: [s x hidden] -> [heads x s x head_dim].
    A [heads x s x head_dim] tensor is taken as is.
    """
    geom = config.latent_geometry()
    data = np.asarray(read_tensor(path))
    if data.shape == (geom.seq_len, geom.hidden):
        return rearrange(data, "s (h d) -> h s d", h=geom.heads)
    if data.shape == (geom.heads, geom.seq_len, geom.head_dim):
        return data
    raise ShapeMismatchError(
        "analyze", data.shape, (geom.seq_len, geom.hidden), detail=f"{path} does not match the config geometry"
    )


def _importance(q: np.ndarray, k: np.ndarray, p: float, scaled: bool) -> np.ndarray:
    """Top-p mass per query over token-level attention rows, computed in row chunks."""
    scale = 1.0 / math.sqrt(q.shape[1]) if scaled else 1.0
    out = np.empty(q.shape[0])
    for start in range(0, q.shape[0], ROW_CHUNK):
        rows = softmax(q[start : start + ROW_CHUNK].astype(np.float64) @ k.T.astype(np.float64), axis=1, scale=scale)
        out[start : start + ROW_CHUNK] = query_importance(rows, p, normalized=True)
    return out


def _curve_rows(report, head: int, scheme: str) -> List[Dict]:
    rows = report.rows()
    stride = max(1, len(rows) // CURVE_POINTS)
    picked = rows[::stride]
    if picked[-1] is not rows[-1]:
        picked.append(rows[-1])
    return [{"head": head, "scheme": scheme, **row} for row in picked]


# ==========================================
# COMMAND
# ==========================================

def cmd_analyze(
    config: RunConfig,
    q_path: Union[str, Path],
    k_path: Union[str, Path],
    out_dir: Path,
    p: float = 0.25,
    fractions: Sequence[float] = DEFAULT_CUTOFFS,
) -> Tuple[ExitCode, Dict]:
    geom = config.latent_geometry()
    q_heads = _load_heads(q_path, config)
    k_heads = _load_heads(k_path, config)
    policy = config.policy()
    scaled = policy.scaled
    layouts = {scheme: build_layout(geom, spec) for scheme, spec in config.partition_specs().items()}
    out_dir = Path(out_dir)

    map_rows: List[Dict] = []
    importance_rows: List[Dict] = []
    curve_rows: List[Dict] = []
    pair_rows: Dict[str, List[Dict]] = {scheme.value: [] for scheme in layouts}
    summary: Dict[str, Dict] = {}
    for head in range(geom.heads):
        q, k = q_heads[head], k_heads[head]
        importance = _importance(q, k, p, scaled)
        importance_rows += [{"head": head, "query": i, "importance": float(x)} for i, x in enumerate(importance)]

        for scheme, layout in layouts.items():
            block_map = block_attention_map(q, k, layout, layout, scaled)
            for i, j in np.ndindex(block_map.shape):
                map_rows.append(
                    {"head": head, "scheme": scheme.value, "query_block": i, "key_block": j, "mass": block_map[i, j]}
                )
            scores = similarity(q, layout.means(k), scaled)
            report = concentration_curve(scores, fractions)
            mask = select(scores, fit_policy(policy, layout), layout)
            pair_rows[scheme.value] += mask.pairs(head)
            TensorStorage.save(out_dir / f"mask_h{head}_{scheme.value}.vmtb", mask.to_tensor())
            curve_rows += _curve_rows(report, head, scheme.value)
            summary[f"head{head}/{scheme.value}"] = {
                **report.to_dict(),
                "diagonal_mass": float(np.trace(block_map)) / layout.num_blocks,
                "uniform_baseline": float(np.mean(layout.block_len) / geom.seq_len),
                "selected_pairs": mask.selected_count,
                "k_avg": mask.k_avg,
            }
        logger.info("head %d: mean top-%g importance %.4f", head, p, float(importance.mean()))

    ReportStorage.save_csv(out_dir / "block_attention_map.csv", map_rows,
                           ["head", "scheme", "query_block", "key_block", "mass"])
    ReportStorage.save_csv(out_dir / "query_importance.csv", importance_rows, ["head", "query", "importance"])
    for scheme, rows in pair_rows.items():
        ReportStorage.save_csv(out_dir / f"selection_pairs_{scheme}.csv", rows, ["head", "query", "block"])
    ReportStorage.save_csv(out_dir / "concentration_curve.csv", curve_rows,
                           ["head", "scheme", "index", "score", "cumulative"])
    report = {"p": p, "fractions": list(fractions), "policy": policy.label, "heads": summary}
    ReportStorage.save_json(out_dir / "concentration.json", report)
    return ExitCode.OK, report
