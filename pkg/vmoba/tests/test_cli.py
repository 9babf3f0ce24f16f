import json

import numpy as np
import pytest

from vmoba.cli import CheckResult, ExitCode, cmd_analyze, cmd_bench, cmd_train_toy, cmd_verify
from vmoba.cli.bench_api import below_crossover, bench_geometry, quadratic_fit
from vmoba.cli.verify_api import (
    CONFIG_SEEDS,
    ORACLE_TOLERANCE,
    REFERENCE_LAYOUTS,
    STREAM_TOLERANCE,
    config_oracle_cases,
    gradient_case,
    layout_is_bijective,
    random_case,
    scale_invariance_case,
    shrink_case,
    sparsity_case,
)
from vmoba.config import RunConfig, load_config
from vmoba.errors import ConfigError, ShapeMismatchError
from vmoba.main import main
from vmoba.partition import LatentGeometry, PartitionSpec, build_layout
from vmoba.storage import ReportStorage
from vmoba.tensor import read_tensor, write_tensor


def make_toy_payload(payload, **changes):
    toy = {"geometry": [4, 4, 4], "hidden": 8, "heads": 2, "steps": 2, "eval_every": 1, "modes": ["full", "vmoba"]}
    toy.update(changes)
    return {**payload, "toy": toy}


# --- CHECK RESULT ---
def test_check_result_tracks_failures():
    result = CheckResult("oracle", tolerance=1e-5)
    result.observe(1e-7)
    assert result.passed
    result.observe(1e-3)
    assert not result.passed
    assert result.to_dict()["failures"] == 1
    assert result.max_error == 1e-3
    assert not CheckResult("empty").passed


# --- VERIFY ---
def test_reference_layouts_have_published_counts():
    for grid, spec, expected in REFERENCE_LAYOUTS:
        layout = build_layout(LatentGeometry(*grid), spec)
        assert layout.num_blocks == expected
        assert layout_is_bijective(layout)


def test_random_case_respects_limits():
    for seed in range(12):
        geom, spec = random_case(seed, max_seq=128, exact=True)
        assert geom.seq_len <= 128
        assert spec.is_exact_for(geom)
        assert spec.scheme.value == ("1d", "2d", "3d")[seed % 3]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_case_within_tolerance(seed):
    errors = gradient_case(seed)
    assert set(errors) == {"dq", "dk", "dv"}
    assert max(errors.values()) <= 1.0


def test_sparsity_case_bounds():
    case = sparsity_case(4, [0.15, 0.25, 0.5], max_seq=256)
    assert case["count_excess"] <= 0
    assert case["sparsity_excess"] <= 0
    assert case["monotone"] == 1.0


def test_scale_invariance_case():
    assert all(scale_invariance_case(seed, max_seq=256) for seed in range(4))


def test_verify_command_passes(write_config, small_config_payload, tmp_path):
    config = load_config(write_config(small_config_payload))
    code, report = cmd_verify(config, tmp_path / "verify", workers=2)
    failing = [name for name, check in report["checks"].items() if not check["passed"]]
    assert code is ExitCode.OK, failing
    saved = ReportStorage.load_json(tmp_path / "verify" / "verify_report.json")
    assert saved["passed"] is True
    assert "oracle.streamed_vs_gather" in saved["checks"]
    assert saved["checks"]["gradient"]["cases"] == 3
    assert saved["checks"]["oracle.gather_vs_masked"]["config_cases"] == 3 * CONFIG_SEEDS


def test_verify_threads_give_same_report(write_config, small_config_payload, tmp_path):
    config = load_config(write_config(small_config_payload))
    _, single = cmd_verify(config, tmp_path / "one", workers=1)
    _, pooled = cmd_verify(config, tmp_path / "two", workers=3)
    assert single["checks"] == pooled["checks"]


def test_shrink_case_keeps_ragged_blocks(fixtures_dir):
    config = load_config(fixtures_dir / "ragged.json")
    source = config.latent_geometry()
    for spec in config.partition_specs().values():
        geom, shrunk = shrink_case(source, spec, config.verify.max_seq)
        assert shrunk == spec
        assert geom.seq_len <= config.verify.max_seq
        assert not shrunk.is_exact_for(geom)
        assert layout_is_bijective(build_layout(geom, shrunk))


def test_shrink_case_reduces_oversized_blocks():
    source = LatentGeometry(21, 30, 52)
    geom, shrunk = shrink_case(source, PartitionSpec.spatio_temporal(7, 8, 13), max_seq=64)
    assert geom.seq_len <= 64
    shrunk.validate_for(geom)
    assert layout_is_bijective(build_layout(geom, shrunk))


def test_config_oracle_cases_run_ragged_partitions(fixtures_dir):
    config = load_config(fixtures_dir / "ragged.json")
    cases = config_oracle_cases(config)
    assert len(cases) == 3 * CONFIG_SEEDS
    assert all(case["ragged"] == 1.0 for case in cases)
    assert max(case["gather_vs_masked"] for case in cases) <= ORACLE_TOLERANCE
    assert max(case["streamed_vs_gather"] for case in cases) <= STREAM_TOLERANCE
    assert max(case["full_vs_dense"] for case in cases) <= ORACLE_TOLERANCE


@pytest.mark.slow
@pytest.mark.parametrize("name", ["480x832.json", "ragged.json"])
def test_verify_fixture_configs(fixtures_dir, tmp_path, name):
    code, report = cmd_verify(load_config(fixtures_dir / name), tmp_path)
    assert code is ExitCode.OK
    if name == "ragged.json":
        assert report["checks"]["oracle.gather_vs_masked"]["ragged_fixtures"] > 0


# --- BENCH ---
def test_bench_geometry_shapes():
    geom = bench_geometry(1024, 4, 16 / 9, 64)
    assert geom.frames == 4 and geom.height * geom.width == 256
    assert geom.height <= geom.width
    assert bench_geometry(1023, 4, 16 / 9, 64) is None


def test_quadratic_fit_recovers_parabola():
    s = [1.0, 2.0, 3.0, 4.0]
    coeffs = quadratic_fit(s, [2 * x * x + 3 * x + 1 for x in s])
    np.testing.assert_allclose(coeffs, [2.0, 3.0, 1.0], atol=1e-8)
    assert quadratic_fit(s[:2], s[:2]) is None


def test_bench_command_writes_rows_and_skips(write_config, small_config_payload, tmp_path):
    config = load_config(write_config(small_config_payload))
    code, report = cmd_bench(config, tmp_path, lengths=[64, 96, 128, 129])
    assert code is ExitCode.OK
    assert report["fit"]["skipped"] == [129]
    assert len(report["fit"]["vmoba"]) == 3
    frame = ReportStorage.load_csv(tmp_path / "bench.csv")
    assert list(frame.columns) == [
        "s", "dense_ms", "vmoba_ms", "flops_dense", "flops_vmoba", "k_avg", "block_len"
    ]
    assert list(frame["s"]) == [64, 96, 128, 129]
    assert frame["dense_ms"].isna().tolist() == [False, False, False, True]
    assert report["fit"]["flops_below_dense"] is True
    assert (tmp_path / "bench_fit.json").exists()


def test_below_crossover_inequality():
    # 4 * 64 + 4096 / 128 = 288 < 4096
    assert below_crossover({"s": 4096, "k_avg": 4.0, "block_len": 64.0})
    # 2 * 32 + 64 / 64 = 65 >= 64
    assert not below_crossover({"s": 64, "k_avg": 2.0, "block_len": 32.0})


@pytest.mark.slow
def test_bench_default_sweep_beats_dense(fixtures_dir, tmp_path):
    code, report = cmd_bench(load_config(fixtures_dir / "toy.json"), tmp_path)
    assert code is ExitCode.OK
    rows = [row for row in report["rows"] if "dense_ms" in row]
    assert len(rows) == 6
    crossed = [row for row in rows if below_crossover(row)]
    assert crossed
    assert all(row["flops_vmoba"] < row["flops_dense"] for row in crossed)
    assert report["fit"]["flops_below_dense"] is True
    assert report["fit"]["vmoba"][0] < report["fit"]["dense"][0]


# --- ANALYZE ---
def test_analyze_command_writes_reports(write_config, small_config_payload, tmp_path):
    config = load_config(write_config(small_config_payload))
    geom = config.latent_geometry()
    rng = np.random.default_rng(0)
    write_tensor(tmp_path / "q.vmtb", rng.standard_normal((geom.seq_len, geom.hidden)).astype(np.float32))
    write_tensor(tmp_path / "k.vmtb", rng.standard_normal((geom.seq_len, geom.hidden)).astype(np.float32))

    code, report = cmd_analyze(config, tmp_path / "q.vmtb", tmp_path / "k.vmtb", tmp_path / "out")
    assert code is ExitCode.OK
    assert set(report["heads"]) == {f"head{h}/{s}" for h in range(2) for s in ("1d", "2d", "3d")}

    importance = ReportStorage.load_csv(tmp_path / "out" / "query_importance.csv")
    assert len(importance) == geom.heads * geom.seq_len
    assert importance["importance"].between(0.25 - 1e-9, 1.0 + 1e-9).all()

    block_map = ReportStorage.load_csv(tmp_path / "out" / "block_attention_map.csv")
    sums = block_map.groupby(["head", "scheme", "query_block"])["mass"].sum()
    np.testing.assert_allclose(sums.to_numpy(), 1.0, atol=1e-9)

    curve = ReportStorage.load_csv(tmp_path / "out" / "concentration_curve.csv")
    assert (curve.groupby(["head", "scheme"])["cumulative"].max() > 1 - 1e-6).all()
    assert (tmp_path / "out" / "concentration.json").exists()


def test_analyze_exports_selection_masks(write_config, small_config_payload, tmp_path):
    config = load_config(write_config(small_config_payload))
    geom = config.latent_geometry()
    rng = np.random.default_rng(2)
    write_tensor(tmp_path / "q.vmtb", rng.standard_normal((geom.seq_len, geom.hidden)).astype(np.float32))
    write_tensor(tmp_path / "k.vmtb", rng.standard_normal((geom.seq_len, geom.hidden)).astype(np.float32))
    _, report = cmd_analyze(config, tmp_path / "q.vmtb", tmp_path / "k.vmtb", tmp_path / "out")

    for scheme, spec in config.partition_specs().items():
        layout = build_layout(geom, spec)
        pairs = ReportStorage.load_csv(tmp_path / "out" / f"selection_pairs_{scheme.value}.csv")
        assert list(pairs.columns) == ["head", "query", "block"]
        for head in range(geom.heads):
            mask = np.asarray(read_tensor(tmp_path / "out" / f"mask_h{head}_{scheme.value}.vmtb"))
            assert mask.shape == (geom.seq_len, layout.num_blocks)
            assert set(np.unique(mask)) <= {0.0, 1.0}
            # own block always selected
            assert np.all(mask[np.arange(geom.seq_len), layout.token_to_block] == 1.0)
            rows = pairs[pairs["head"] == head]
            assert len(rows) == int(mask.sum()) == report["heads"][f"head{head}/{scheme.value}"]["selected_pairs"]
            assert np.all(mask[rows["query"].to_numpy(), rows["block"].to_numpy()] == 1.0)


def test_analyze_accepts_per_head_tensors(write_config, small_config_payload, tmp_path):
    config = load_config(write_config(small_config_payload))
    geom = config.latent_geometry()
    rng = np.random.default_rng(1)
    shape = (geom.heads, geom.seq_len, geom.head_dim)
    write_tensor(tmp_path / "q.vmtb", rng.standard_normal(shape).astype(np.float32))
    write_tensor(tmp_path / "k.vmtb", rng.standard_normal(shape).astype(np.float32))
    code, _ = cmd_analyze(config, tmp_path / "q.vmtb", tmp_path / "k.vmtb", tmp_path, fractions=(0.5,))
    assert code is ExitCode.OK


def test_analyze_rejects_wrong_shape(write_config, small_config_payload, tmp_path):
    config = load_config(write_config(small_config_payload))
    write_tensor(tmp_path / "q.vmtb", np.zeros((10, 16), dtype=np.float32))
    with pytest.raises(ShapeMismatchError):
        cmd_analyze(config, tmp_path / "q.vmtb", tmp_path / "q.vmtb", tmp_path)


# --- TRAIN ---
def test_train_command_writes_traces(write_config, small_config_payload, tmp_path):
    config = RunConfig.model_validate(make_toy_payload(small_config_payload))
    code, report = cmd_train_toy(config, tmp_path)
    assert code is ExitCode.OK
    assert set(report["default"]["traces"]) == {"full", "vmoba"}
    trace = ReportStorage.load_csv(tmp_path / "trace_vmoba.csv")
    assert list(trace["step"]) == [0, 1, 2]
    assert len(ReportStorage.load_csv(tmp_path / "trace_full_val.csv")) == 3
    assert (tmp_path / "comparison.csv").exists()
    schemes = ReportStorage.load_json(tmp_path / "layer_schemes.json")
    assert schemes == {"full": ["full"] * 3, "vmoba": ["1d", "2d", "3d"]}


def test_train_command_long_geometry(small_config_payload, tmp_path):
    payload = make_toy_payload(small_config_payload, long_geometry=[8, 4, 4], steps=1, modes=["vmoba", "moba1d"])
    code, report = cmd_train_toy(RunConfig.model_validate(payload), tmp_path)
    assert code is ExitCode.OK
    assert report["long"]["seq_len"] == 128
    assert (tmp_path / "trace_moba1d_long.csv").exists()
    assert (tmp_path / "comparison_long.json").exists()


def test_train_command_reports_divergence(small_config_payload, tmp_path):
    payload = make_toy_payload(small_config_payload, modes=["full"], learning_rate=1e30, steps=5)
    code, report = cmd_train_toy(RunConfig.model_validate(payload), tmp_path)
    assert code is ExitCode.CHECK_FAILED
    assert "diverged" in report
    assert (tmp_path / "divergence.json").exists()
    assert (tmp_path / "trace_full.csv").exists()


def test_train_command_needs_toy_section(write_config, small_config_payload, tmp_path):
    with pytest.raises(ConfigError):
        cmd_train_toy(load_config(write_config(small_config_payload)), tmp_path)


# --- ENTRY POINT ---
def test_main_verify_exit_code(write_config, small_config_payload, tmp_path):
    path = write_config(small_config_payload)
    assert main(["verify", "--config", str(path), "--out", str(tmp_path / "run")]) == 0
    assert json.loads((tmp_path / "run" / "verify_report.json").read_text())["passed"]


def test_main_missing_config_is_io_error(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "absent.json")]) == ExitCode.IO


def test_main_invalid_config_is_usage_error(write_config, small_config_payload):
    small_config_payload["selection"]["tau"] = 0.0
    assert main(["verify", "--config", str(write_config(small_config_payload))]) == ExitCode.USAGE


def test_main_bad_tensor_is_io_error(write_config, small_config_payload, tmp_path):
    bad = tmp_path / "bad.vmtb"
    bad.write_bytes(b"NOPE" + bytes(12))
    path = str(write_config(small_config_payload))
    code = main(["analyze", "--config", path, "--q", str(bad), "--k", str(bad), "--out", str(tmp_path)])
    assert code == ExitCode.IO


def test_main_rejects_unknown_command():
    with pytest.raises(SystemExit) as info:
        main(["compile"])
    assert info.value.code == 2
