import logging
import math
import statistics
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from vmoba.attention.attention_api import dense_attention, sparse_forward_streamed
from vmoba.config import RunConfig
from vmoba.metrics.metrics_api import flops_estimate
from vmoba.partition.partition_api import build_layout
from vmoba.partition.value_objects import LatentGeometry
from vmoba.selection.selection_api import select, similarity
from vmoba.storage import ReportStorage
from .value_objects import ExitCode
from .verify_api import fit_policy

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["s", "dense_ms", "vmoba_ms", "flops_dense", "flops_vmoba", "k_avg", "block_len"]


# ==========================================
# HELPER FUNCTIONS
# ==========================================

def bench_geometry(s: int, frames: int, aspect: float, head_dim: int) -> Optional[LatentGeometry]:
    """Grid with `frames` frames and H*W = s / frames, H/W closest to 1/aspect; None if s is not reachable."""
    if s % frames != 0:
        return None
    area = s // frames
    target = math.sqrt(area / aspect)
    height = min((d for d in range(1, area + 1) if area % d == 0), key=lambda d: (abs(d - target), d))
    return LatentGeometry(frames, height, area // height, hidden=head_dim, heads=1)


def _median_ms(fn, repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return statistics.median(samples)


def quadratic_fit(s: Sequence[float], ms: Sequence[float]) -> Optional[List[float]]:
    """Least-squares (a, b, c) of a*s^2 + b*s + c, or None with fewer than 3 points."""
    if len(s) < 3:
        return None
    return [float(c) for c in np.polyfit(np.asarray(s, dtype=np.float64), np.asarray(ms, dtype=np.float64), 2)]


def below_crossover(row: Dict[str, float]) -> bool:
    """k_avg*s_b + s/(2*s_b) < s: where block-sparse FLOPs must undercut dense."""
    return row["k_avg"] * row["block_len"] + row["s"] / (2 * row["block_len"]) < row["s"]


def bench_length(config: RunConfig, geom: LatentGeometry) -> Dict[str, float]:
    """Dense vs VMoBA forward of one head; the VMoBA figures average the layers of one scheme cycle."""
    source = config.latent_geometry()
    specs = config.partition_specs()
    policy = config.policy()
    layouts = [build_layout(geom, specs[scheme].scaled_to(source, geom)) for scheme in config.cycle_schemes()]

    rng = np.random.default_rng(config.seed)
    q, k, v = (rng.standard_normal((geom.seq_len, geom.hidden)).astype(np.float32) for _ in range(3))

    def run_vmoba():
        masks = []
        for layout in layouts:
            fitted = fit_policy(policy, layout)
            mask = select(similarity(q, layout.means(k), fitted.scaled), fitted, layout)
            sparse_forward_streamed(q, k, v, layout, mask, policy.scaled)
            masks.append(mask)
        return masks

    masks = run_vmoba()
    repeats = config.bench.repeats
    dense_ms = _median_ms(lambda: dense_attention(q, k, v), repeats)
    vmoba_ms = _median_ms(run_vmoba, repeats) / len(layouts)
    reports = [flops_estimate(geom, layout, mask) for layout, mask in zip(layouts, masks)]
    return {
        "s": geom.seq_len,
        "dense_ms": dense_ms,
        "vmoba_ms": vmoba_ms,
        "flops_dense": reports[0].dense_flops,
        "flops_vmoba": int(round(statistics.fmean(r.total_flops for r in reports))),
        "k_avg": statistics.fmean(r.k_avg for r in reports),
        "block_len": statistics.fmean(geom.seq_len / layout.num_blocks for layout in layouts),
    }


# ==========================================
# COMMAND
# ==========================================

def cmd_bench(
    config: RunConfig, out_dir: Path, lengths: Optional[Sequence[int]] = None
) -> Tuple[ExitCode, Dict]:
    lengths = list(lengths or config.bench.lengths)
    bench = config.bench
    rows: List[Dict] = []
    skipped: List[int] = []
    grids: Dict[str, List[int]] = {}
    for s in lengths:
        geom = bench_geometry(s, bench.frames, bench.aspect, bench.head_dim)
        if geom is None:
            logger.warning("length %d is not reachable with %d frames; skipped", s, bench.frames)
            skipped.append(s)
            rows.append({"s": s})
            continue
        row = bench_length(config, geom)
        grids[str(s)] = list(geom.grid)
        logger.info("s=%d %s: dense %.2f ms, vmoba %.2f ms", s, geom.grid, row["dense_ms"], row["vmoba_ms"])
        rows.append(row)

    measured = [row for row in rows if "dense_ms" in row]
    fit = {
        "dense": quadratic_fit([r["s"] for r in measured], [r["dense_ms"] for r in measured]),
        "vmoba": quadratic_fit([r["s"] for r in measured], [r["vmoba_ms"] for r in measured]),
        "flops_below_dense": all(
            r["flops_vmoba"] < r["flops_dense"] for r in measured if below_crossover(r)
        ),
        "skipped": skipped,
        "grids": grids,
        "repeats": bench.repeats,
        "policy": config.policy().label,
    }
    out_dir = Path(out_dir)
    ReportStorage.save_csv(out_dir / "bench.csv", rows, BENCH_COLUMNS)
    ReportStorage.save_json(out_dir / "bench_fit.json", fit)
    if fit["dense"] is None:
        logger.warning("fewer than 3 measured lengths; no quadratic fit")
    return ExitCode.OK, {"rows": rows, "fit": fit}
