import csv
import math

import pytest

from nstbench import ConfigError
from nstbench.bench import (CSV_HEADER, REFUSED, BenchConfig, BenchRecord, SimulatedClock, cumulative_iterations,
                            emit_csv, emit_report, estimate_memory, figure_paths, measure, rate_per_minute, read_csv,
                            render_report, run_bench)
from nstbench.models import build_model
from nstbench.tensor import add_allocation_hook, remove_allocation_hook


def walk_oracle(kind, res, nbytes=4):
    """Independent peak-memory walk written from the block definitions alone.

    Blocks of (conv, relu, conv, relu[, conv, relu]) then 2x2 pool; the pool
    after the last tap is never evaluated. Sum n*c*h*w*bytes of every
    output plus the input image; double it for taped buffers; add 2 images
    for Adam and the largest k>1 im2col matrix (c_in * k * k * h * w).
    """
    convs_per_block = {"vgg-desk": [3, 3], "nin-desk": [3, 1, 1]}[kind]
    widths = [32, 64, 128, 256]
    image = 3 * res * res * nbytes
    act, workspace, c_in, s = image, 0, 3, res
    for block, width in enumerate(widths):
        for k in convs_per_block:
            act += 2 * width * s * s * nbytes  # conv output + relu output
            if k > 1:
                workspace = max(workspace, c_in * k * k * s * s * nbytes)
            c_in = width
        if block < 3:
            s //= 2
            act += width * s * s * nbytes
    return act * 3 + 2 * image + workspace


GOLDEN_VGG_128 = 69_795_840  # walk_oracle("vgg-desk", 128), frozen


def test_golden_vgg_128():
    assert walk_oracle("vgg-desk", 128) == GOLDEN_VGG_128
    assert estimate_memory(build_model("vgg-desk"), 128, 4).total == GOLDEN_VGG_128


@pytest.mark.parametrize("kind", ["vgg-desk", "nin-desk"])
@pytest.mark.parametrize("res", [64, 128, 256, 512])
def test_estimator_matches_walk(kind, res):
    assert estimate_memory(build_model(kind), res).total == walk_oracle(kind, res)
    assert estimate_memory(build_model(kind), res, 8).total == walk_oracle(kind, res, 8)


@pytest.mark.parametrize("kind", ["vgg-desk", "nin-desk"])
def test_estimate_components_and_scaling(kind):
    spec = build_model(kind)
    ests = [estimate_memory(spec, r) for r in (64, 128, 256, 512)]
    for small, big in zip(ests, ests[1:]):
        assert big.total > small.total
        assert [b for _, b in big.layer_bytes] == [4 * b for _, b in small.layer_bytes]
        assert big.workspace_bytes == 4 * small.workspace_bytes
    for e in ests:
        assert e.total == e.activation_bytes + e.tape_bytes + e.optimizer_bytes + e.workspace_bytes
        assert e.activation_bytes == sum(b for _, b in e.layer_bytes)
        assert e.tape_bytes == 2 * e.activation_bytes


def test_rate_definition():
    assert rate_per_minute(120, 60.0) == 120.0
    assert rate_per_minute(0, 0.0) == 0.0


def test_simulated_clock_120_in_60s():
    n, elapsed = measure(lambda: None, SimulatedClock(0.5), iterations=120)
    assert (n, elapsed) == (120, 60.0)
    assert rate_per_minute(n, elapsed) == 120.0


def test_fixed_duration_mode():
    n, elapsed = measure(lambda: None, SimulatedClock(0.25), seconds=60.0)
    assert (n, elapsed) == (240, 60.0)


@pytest.mark.parametrize("rate", [71.4, 721.9, 108.9, 980.0, 0.5])
def test_cumulative_counts_are_linear(rate):
    counts = cumulative_iterations(rate, 5)
    assert counts == [m * rate for m in range(1, 6)]


# Published 1..5 minute cumulative columns (128 px models/devices, then VGG by size).
PUBLISHED_COLUMNS = [
    [71.4, 142.9, 214.3, 285.7, 357.1],
    [721.9, 1443.7, 2165.6, 2887.4, 3609.3],
    [108.9, 217.8, 326.7, 435.6, 544.4],
    [980.0, 1960.0, 2940.0, 3920.0, 4900.0],
    [94.2, 188.3, 282.6, 376.8, 471.0],
    [847.8, 1695.5, 2543.3, 3391.0, 4238.8],
    [32.0, 64.1, 96.1, 128.1, 160.1],
    [286.7, 573.3, 860.1, 1146.7, 1433.4],
]


@pytest.mark.parametrize("column", PUBLISHED_COLUMNS)
def test_published_tables_are_constant_rate(column):
    # every column is a single rate times minutes, up to the table's 0.1 rounding
    counts = cumulative_iterations(column[-1] / 5, 5)
    assert all(abs(c - p) <= 0.1 + 1e-9 for c, p in zip(counts, column))


def test_simulated_constant_rate_minutes():
    clock = SimulatedClock(60.0 / 71.4)
    marks = []
    start = clock()
    for i in range(1, 5 * 71 + 60):
        t = clock() - start
        for m in range(1, 6):
            if len(marks) < m and t >= m * 60.0 - 1e-9:
                marks.append(i)
    assert marks == [math.ceil(71.4 * m - 1e-9) for m in range(1, 6)]


def test_bench_config_validation():
    with pytest.raises(ConfigError):
        BenchConfig(resolutions=(100,))
    with pytest.raises(ConfigError):
        BenchConfig(models=())
    with pytest.raises(ConfigError):
        BenchConfig(backends=("gpu",))
    with pytest.raises(ConfigError):
        BenchConfig(iterations=None, seconds=None)
    with pytest.raises(ConfigError):
        BenchConfig(iterations=5, seconds=1.0)
    with pytest.raises(ConfigError):
        run_bench(BenchConfig(models=("alexnet",)))


def test_run_bench_with_simulated_clock():
    cfg = BenchConfig(models=("nin-desk",), resolutions=(64,), backends=("fast",), iterations=4, warmup=1)
    [rec] = run_bench(cfg, SimulatedClock(0.5))
    assert (rec.iterations, rec.elapsed_s, rec.iters_per_min, rec.status) == (4, 2.0, 120.0, "ok")
    assert rec.peak_mem_bytes == estimate_memory(build_model("nin-desk"), 64).total


def test_over_budget_cell_refused_without_allocating():
    budget = estimate_memory(build_model("vgg-desk"), 512).total - 1
    cfg = BenchConfig(models=("vgg-desk",), resolutions=(512,), backends=("naive", "fast"),
                      iterations=1, memory_budget=budget)
    allocations = []
    add_allocation_hook(allocations.append)
    try:
        records = run_bench(cfg, SimulatedClock(1.0))
    finally:
        remove_allocation_hook(allocations.append)
    assert allocations == []
    assert [r.status for r in records] == [REFUSED, REFUSED]
    assert all(r.iterations == 0 and r.iters_per_min == 0.0 for r in records)
    assert records[0].peak_mem_bytes == budget + 1


def _records():
    out = []
    for m in ("vgg-desk", "nin-desk"):
        for b in ("naive", "fast"):
            for r in (64, 128, 256):
                status = REFUSED if r == 256 and b == "naive" else "ok"
                n = 0 if status == REFUSED else 10
                out.append(BenchRecord(m, b, r, n, 3.0, rate_per_minute(n, 3.0), 1000 * r, status))
    return out


def test_csv(tmp_path):
    path = tmp_path / "out.csv"
    emit_csv(_records(), path)
    raw = path.read_bytes()
    assert raw.split(b"\n")[0] == b"model,backend,resolution,iterations,elapsed_s,iters_per_min,peak_mem_bytes,status"
    assert CSV_HEADER == "model,backend,resolution,iterations,elapsed_s,iters_per_min,peak_mem_bytes,status"
    assert b"\r" not in raw
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 12
    assert read_csv(path) == _records()


def test_emit_rejects_empty(tmp_path):
    with pytest.raises(ConfigError):
        emit_csv([], tmp_path / "x.csv")


def test_report_table(tmp_path):
    text = render_report(_records())
    lines = text.splitlines()
    header = next(line for line in lines if line.startswith("| resolution"))
    assert header.count("|") == 6
    row256 = next(line for line in lines if line.startswith("| 256 px"))
    assert row256.count("—") == 2
    assert "| 64 px | 200.0 | 200.0 | 200.0 | 200.0 |" in lines
    assert "## Cumulative iterations, 128 px" in text
    assert "| 5 | 1000.0 | 1000.0 | 1000.0 | 1000.0 |" in lines


def test_report_with_figures(tmp_path):
    path = tmp_path / "report.md"
    written = emit_report(_records(), path)
    rates, cumulative = figure_paths(path)
    assert written == [path, rates, cumulative]
    for p in (rates, cumulative):
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert "![report_rates](report_rates.png)" in path.read_text()
