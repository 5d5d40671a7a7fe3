"""Iterations-per-minute benchmarking across model, backend and resolution.

Each cell is one (model, backend, resolution) triple. Before anything is
allocated the cell's peak memory is predicted analytically; cells over the
budget are reported as ``refused-memory`` instead of being run.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, FileIOError, NumericError
from .models import Conv, ModelSpec, build_model, check_resolution, init_weights, layer_shapes
from .style import Adam, StepState, StyleConfig, compute_targets, initial_image, step
from .tensor import Backend, Tensor

RESOLUTIONS = (64, 128, 256, 512)
DEFAULT_BUDGET = 4 * 2**30
CSV_HEADER = "model,backend,resolution,iterations,elapsed_s,iters_per_min,peak_mem_bytes,status"
OK = "ok"
REFUSED = "refused-memory"

Clock = Callable[[], float]


class SimulatedClock:
    """Deterministic clock: every read returns the current time, then advances it by ``tick``."""

    def __init__(self, tick: float, start: float = 0.0):
        self.tick = tick
        self._now = start
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            now = self._now
            self._now += self.tick
            return now


@dataclass(frozen=True)
class MemoryEstimate:
    layer_bytes: tuple  # (layer index, bytes); index -1 is the input image
    activation_bytes: int
    tape_bytes: int
    optimizer_bytes: int
    workspace_bytes: int

    @property
    def total(self) -> int:
        return self.activation_bytes + self.tape_bytes + self.optimizer_bytes + self.workspace_bytes


def estimate_memory(spec: ModelSpec, resolution: int, precision_bytes: int = 4) -> MemoryEstimate:
    """Predicted peak bytes for one optimisation step at ``resolution``.

    activations (input + every evaluated layer output), taped backward
    buffers (twice the activations), Adam moments (twice the image) and the
    im2col matrix of the largest unrolled convolution.
    """
    check_resolution(spec, resolution)
    image = spec.in_channels * resolution * resolution * precision_bytes
    per_layer = [(-1, image)]
    workspace = 0
    prev = (1, spec.in_channels, resolution, resolution)
    for i, (layer, shape) in enumerate(zip(spec.active_layers, layer_shapes(spec, resolution))):
        n, c, h, w = shape
        per_layer.append((i, n * c * h * w * precision_bytes))
        if isinstance(layer, Conv):
            p = layer.params
            if not (p.kernel_size == 1 and p.stride == 1 and p.padding == 0):
                workspace = max(workspace, prev[1] * p.kernel_size ** 2 * h * w * precision_bytes)
        prev = shape
    act = sum(b for _, b in per_layer)
    return MemoryEstimate(tuple(per_layer), act, 2 * act, 2 * image, workspace)


@dataclass(frozen=True)
class BenchConfig:
    models: tuple = ("vgg-desk", "nin-desk")
    resolutions: tuple = (64, 128, 256)
    backends: tuple = ("naive", "fast")
    iterations: Optional[int] = 50
    seconds: Optional[float] = None
    warmup: int = 3
    seed: int = 0
    memory_budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if not (self.models and self.resolutions and self.backends):
            raise ConfigError("each of models, resolutions and backends needs at least one entry")
        for r in self.resolutions:
            if r not in RESOLUTIONS:
                raise ConfigError(f"resolution {r} not in {RESOLUTIONS}")
        for b in self.backends:
            Backend.parse(b)
        if (self.iterations is None) == (self.seconds is None):
            raise ConfigError("set exactly one of iterations or seconds")
        if self.iterations is not None and self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if self.seconds is not None and not self.seconds > 0:
            raise ConfigError("seconds must be positive")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if self.memory_budget <= 0:
            raise ConfigError("memory budget must be positive")

    def cells(self):
        for m in self.models:
            for b in self.backends:
                for r in self.resolutions:
                    yield m, Backend.parse(b).value, r


@dataclass(frozen=True)
class BenchRecord:
    model: str
    backend: str
    resolution: int
    iterations: int
    elapsed_s: float
    iters_per_min: float
    peak_mem_bytes: int
    status: str = OK


def rate_per_minute(iterations: int, elapsed: float) -> float:
    if iterations == 0:
        return 0.0
    if not elapsed > 0:
        raise NumericError(f"{iterations} iterations in non-positive time {elapsed}")
    return 60.0 * iterations / elapsed


def cumulative_iterations(rate: float, minutes: int = 5) -> list[float]:
    """Iterations completed after minute 1..minutes at a constant rate."""
    return [rate * m for m in range(1, minutes + 1)]


def measure(step_fn: Callable[[], object], clock: Clock, *, iterations: Optional[int] = None,
            seconds: Optional[float] = None) -> tuple[int, float]:
    """Run ``step_fn`` repeatedly; returns (iterations, elapsed seconds).

    The clock is read once before the loop and once after every iteration.
    """
    start = clock()
    n, now = 0, start
    while True:
        step_fn()
        now = clock()
        n += 1
        if iterations is not None and n >= iterations:
            break
        if seconds is not None and now - start >= seconds:
            break
    return n, now - start


def synthetic_images(resolution: int, seed: int) -> tuple[Tensor, Tensor]:
    rng = np.random.default_rng(seed)
    return (Tensor(rng.uniform(0.0, 1.0, size=(1, 3, resolution, resolution))),
            Tensor(rng.uniform(0.0, 1.0, size=(1, 3, resolution, resolution))))


def run_cell(spec: ModelSpec, backend: Backend, resolution: int, cfg: BenchConfig,
             clock: Clock) -> tuple[int, float]:
    weights = init_weights(spec, cfg.seed)
    content, style = synthetic_images(resolution, cfg.seed)
    scfg = StyleConfig(init="noise", seed=cfg.seed)
    targets = compute_targets(content, style, spec, weights, scfg, backend)
    image = initial_image(content, scfg)
    state = StepState(image, targets, Adam(image.shape, image.dtype, scfg.learning_rate))

    def one():
        step(state, spec, weights, scfg, backend)

    for _ in range(cfg.warmup):
        one()
    return measure(one, clock, iterations=cfg.iterations, seconds=cfg.seconds)


def run_bench(cfg: BenchConfig, clock: Clock = time.perf_counter,
              progress: Optional[Callable[[BenchRecord], None]] = None) -> list[BenchRecord]:
    specs = {kind: build_model(kind) for kind in cfg.models}
    for spec in specs.values():
        for r in cfg.resolutions:
            check_resolution(spec, r)

    records = []
    for kind, backend, res in cfg.cells():
        spec = specs[kind]
        est = estimate_memory(spec, res)
        if est.total > cfg.memory_budget:
            rec = BenchRecord(kind, backend, res, 0, 0.0, 0.0, est.total, REFUSED)
        else:
            n, elapsed = run_cell(spec, Backend.parse(backend), res, cfg, clock)
            rec = BenchRecord(kind, backend, res, n, elapsed, rate_per_minute(n, elapsed), est.total)
        records.append(rec)
        if progress is not None:
            progress(rec)
    return records


def _check_records(records: Sequence[BenchRecord]):
    if not records:
        raise ConfigError("no benchmark records to emit")


def emit_csv(records: Sequence[BenchRecord], path) -> None:
    _check_records(records)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")
            w = csv.writer(fh, lineterminator="\n")
            for r in records:
                w.writerow([r.model, r.backend, r.resolution, r.iterations, repr(r.elapsed_s),
                            repr(r.iters_per_min), r.peak_mem_bytes, r.status])
    except OSError as exc:
        raise FileIOError(f"cannot write {path}: {exc.strerror or exc}") from None


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [BenchRecord(row["model"], row["backend"], int(row["resolution"]), int(row["iterations"]),
                            float(row["elapsed_s"]), float(row["iters_per_min"]),
                            int(row["peak_mem_bytes"]), row["status"])
                for row in csv.DictReader(fh)]


def _columns(records):
    cols = []
    for r in records:
        if (r.model, r.backend) not in cols:
            cols.append((r.model, r.backend))
    return cols


def _cell(rec: Optional[BenchRecord], value: Callable[[BenchRecord], float]) -> str:
    if rec is None:
        return ""
    if rec.status == REFUSED:
        return "—"
    return f"{value(rec):.1f}"


def render_report(records: Sequence[BenchRecord], figures: Sequence[str] = ()) -> str:
    """Markdown: a rate table (rows = resolution, columns = model/backend),
    then the cumulative iteration count per minute at each resolution."""
    _check_records(records)
    cols = _columns(records)
    resolutions = sorted({r.resolution for r in records})
    index = {(r.model, r.backend, r.resolution): r for r in records}
    head = "| " + " | ".join(f"{m} ({b})" for m, b in cols) + " |"
    rule = "|---:" + "|---:" * len(cols) + "|"

    lines = ["# Iterations per minute", "", "| resolution " + head, rule]
    for res in resolutions:
        cells = [_cell(index.get((m, b, res)), lambda r: r.iters_per_min) for m, b in cols]
        lines.append(f"| {res} px | " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("— : refused, predicted peak memory exceeds the budget.")
    for res in resolutions:
        lines += ["", f"## Cumulative iterations, {res} px", "", "| minute " + head, rule]
        for minute in range(1, 6):
            cells = [_cell(index.get((m, b, res)), lambda r: r.iters_per_min * minute) for m, b in cols]
            lines.append(f"| {minute} | " + " | ".join(cells) + " |")
    if figures:
        lines.append("")
        lines += [f"![{Path(f).stem}]({Path(f).name})" for f in figures]
    return "\n".join(lines) + "\n"


def figure_paths(report_path) -> tuple[Path, Path]:
    p = Path(report_path)
    return p.with_name(f"{p.stem}_rates.png"), p.with_name(f"{p.stem}_cumulative.png")


def emit_report(records: Sequence[BenchRecord], path, figures: bool = True) -> list[Path]:
    """Write the markdown report; with ``figures`` also render PNG charts next to it.

    Returns the paths written.
    """
    _check_records(records)
    written = []
    figs = ()
    if figures:
        from .plotting import plot_cumulative, plot_rates

        figs = figure_paths(path)
        try:
            plot_rates(records, figs[0])
            plot_cumulative(records, figs[1])
        except OSError as exc:
            raise FileIOError(f"cannot write figure: {exc.strerror or exc}") from None
        written += list(figs)
    try:
        Path(path).write_text(render_report(records, [str(f) for f in figs]), encoding="utf-8")
    except OSError as exc:
        raise FileIOError(f"cannot write {path}: {exc.strerror or exc}") from None
    return [Path(path)] + written
