"""Gram-matrix style loss, feature content loss and the pixel optimisation loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import Tape, backward, gram_matrix
from .errors import ConfigError, ContractError, NumericError
from .imageio import save_image
from .models import TAPS, ModelSpec, WeightStore, forward_features
from .tensor import Backend, Tensor, wrap

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class StyleConfig:
    content_weight: float = 1.0
    style_weight: float = 1e3
    layer_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    content_tap: str = "tap3"
    iterations: int = 500
    learning_rate: float = 0.05
    init: str = "content"
    snapshot_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.content_weight < 0 or self.style_weight < 0:
            raise ConfigError("content and style weights must be non-negative")
        if self.content_weight + self.style_weight <= 0:
            raise ConfigError("content_weight + style_weight must be positive")
        if len(self.layer_weights) != len(TAPS) or any(w < 0 for w in self.layer_weights):
            raise ConfigError(f"need {len(TAPS)} non-negative per-tap style weights")
        if abs(sum(self.layer_weights) - 1.0) > 1e-9:
            raise ConfigError(f"per-tap style weights must sum to 1, got {sum(self.layer_weights)}")
        if self.content_tap not in TAPS:
            raise ConfigError(f"content tap must be one of {TAPS}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.init not in ("content", "noise"):
            raise ConfigError(f"init must be 'content' or 'noise', got {self.init!r}")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot interval must be >= 0")

    @property
    def tap_weights(self) -> dict[str, float]:
        return dict(zip(TAPS, self.layer_weights))


@dataclass(frozen=True)
class LossRecord:
    iteration: int
    content: float
    style: float
    total: float
    seconds: float = 0.0


@dataclass
class RunReport:
    records: list[LossRecord] = field(default_factory=list)
    snapshots: list[Path] = field(default_factory=list)

    @property
    def seconds(self) -> list[float]:
        return [r.seconds for r in self.records]


# -- pure (untaped) objective pieces ---------------------------------------

def gram(features: Tensor, backend=Backend.FAST) -> np.ndarray:
    """G[i, j] = sum over positions of F_i * F_j (unnormalised)."""
    if features.shape[0] != 1:
        raise ContractError(f"gram expects batch size 1, got {features.shape}")
    return gram_matrix(features.data.reshape(features.shape[1], -1), backend)


def layer_style_loss(g: np.ndarray, a: np.ndarray, channels: int, positions: int) -> float:
    d = np.asarray(g, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    return float(np.sum(d * d) / (4.0 * channels ** 2 * positions ** 2))


def style_loss(x_grams: dict, s_grams: dict, weights: dict, dims: dict) -> float:
    """sum_l w_l * sum((G_l - A_l)^2) / (4 C_l^2 M_l^2), with dims[l] = (C_l, M_l)."""
    if set(x_grams) != set(s_grams) or set(x_grams) != set(weights):
        raise ContractError(f"tap mismatch: {sorted(x_grams)} / {sorted(s_grams)} / {sorted(weights)}")
    total = 0.0
    for tap, g in x_grams.items():
        a = s_grams[tap]
        if np.shape(g) != np.shape(a):
            raise ContractError(f"{tap}: gram sizes differ {np.shape(g)} vs {np.shape(a)}")
        c, m = dims[tap]
        total += weights[tap] * layer_style_loss(g, a, c, m)
    return total


def content_loss(x_feat: Tensor, c_feat: Tensor) -> float:
    """Half the summed squared feature difference."""
    if x_feat.shape != c_feat.shape:
        raise ContractError(f"content features differ in shape: {x_feat.shape} vs {c_feat.shape}")
    d = x_feat.data.astype(np.float64) - c_feat.data
    return 0.5 * float(np.sum(d * d))


def total_loss(content: float, style: float, cfg: StyleConfig) -> float:
    return cfg.content_weight * content + cfg.style_weight * style


# -- optimisation -----------------------------------------------------------

@dataclass
class Targets:
    """Constants of the objective, computed once before the loop."""

    content: Tensor
    grams: dict


def compute_targets(content_img: Tensor, style_img: Tensor, spec: ModelSpec, weights: WeightStore,
                    cfg: StyleConfig, backend=Backend.FAST) -> Targets:
    cf = forward_features(spec, weights, content_img, backend)
    sf = forward_features(spec, weights, style_img, backend)
    grams = {tap: Tensor(gram(f, backend)[None, None]) for tap, f in sf.items()}
    return Targets(cf[cfg.content_tap], grams)


def objective(tape: Tape, x, spec, weights, targets: Targets, cfg: StyleConfig, backend):
    """Record content, style and total loss for image var ``x``; returns the three vars."""
    feats = forward_features(spec, weights, x, backend, tape)
    content = tape.squared_error(feats[cfg.content_tap], tape.leaf(targets.content), 0.5)
    parts, coeffs = [], []
    for tap, w in cfg.tap_weights.items():
        f = feats[tap].value
        c, m = f.shape[1], f.shape[2] * f.shape[3]
        g = tape.gram(feats[tap], backend)
        parts.append(tape.squared_error(g, tape.leaf(targets.grams[tap]), 1.0 / (4.0 * c * c * m * m)))
        coeffs.append(w)
    style = tape.weighted_sum(parts, coeffs)
    total = tape.weighted_sum([content, style], [cfg.content_weight, cfg.style_weight])
    return content, style, total


class Adam:
    def __init__(self, shape, dtype, lr: float):
        self.lr = lr
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0

    def update(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * g
        self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * (g * g)
        m_hat = self.m / (1 - ADAM_BETA1 ** self.t)
        v_hat = self.v / (1 - ADAM_BETA2 ** self.t)
        return (x - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(x.dtype, copy=False)


@dataclass
class StepState:
    image: Tensor
    targets: Targets
    optimizer: Adam
    iteration: int = 0


def step(state: StepState, spec: ModelSpec, weights: WeightStore, cfg: StyleConfig,
         backend=Backend.FAST) -> LossRecord:
    """One forward + backward + Adam update. Mutates ``state`` in place."""
    start = time.perf_counter()
    index = state.iteration + 1
    tape = Tape()
    x = tape.leaf(state.image, requires_grad=True)
    try:
        c, s, t = objective(tape, x, spec, weights, state.targets, cfg, backend)
        grad = backward(tape, t)[x].data
        with np.errstate(over="raise", invalid="raise"):
            new_image = state.optimizer.update(state.image.data, grad)
    except (NumericError, FloatingPointError) as exc:
        raise NumericError(f"non-finite values at iteration {index}: {exc}") from None
    content, style, total = (v.value.data.item() for v in (c, s, t))
    state.image = wrap(new_image, f"optimizer step {index}")
    state.iteration = index
    return LossRecord(index, content, style, total, time.perf_counter() - start)


def initial_image(content_img: Tensor, cfg: StyleConfig) -> Tensor:
    if cfg.init == "content":
        return Tensor(content_img.data)
    rng = np.random.default_rng(cfg.seed)
    return Tensor(rng.uniform(0.0, 1.0, size=content_img.shape))


def clamp01(t: Tensor) -> Tensor:
    return Tensor(np.clip(t.data, 0.0, 1.0))


def snapshot_path(out: Path, iteration: int) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}_iter{iteration}{out.suffix}")


def run(content_img: Tensor, style_img: Tensor, spec: ModelSpec, weights: WeightStore,
        cfg: StyleConfig, backend=Backend.FAST,
        progress: Optional[Callable[[LossRecord], None]] = None,
        out_path=None) -> tuple[Tensor, RunReport]:
    """Optimise pixels for ``cfg.iterations`` steps.

    Pixels are left unclamped between steps; the returned image and any
    snapshots (written next to ``out_path`` as ``<stem>_iter<N><ext>``) are
    clamped to [0, 1].
    """
    if content_img.shape != style_img.shape:
        raise ContractError(f"content {content_img.shape} and style {style_img.shape} images differ in size")
    if cfg.snapshot_every and out_path is None:
        raise ContractError("snapshots requested without an output path")
    # work at the active precision whatever the inputs were built with
    content_img, style_img = Tensor(content_img.data), Tensor(style_img.data)
    targets = compute_targets(content_img, style_img, spec, weights, cfg, backend)
    image = initial_image(content_img, cfg)
    state = StepState(image, targets, Adam(image.shape, image.dtype, cfg.learning_rate))
    report = RunReport()
    for _ in range(cfg.iterations):
        rec = step(state, spec, weights, cfg, backend)
        report.records.append(rec)
        if progress is not None:
            progress(rec)
        if cfg.snapshot_every and rec.iteration % cfg.snapshot_every == 0:
            path = snapshot_path(out_path, rec.iteration)
            save_image(clamp01(state.image), path)
            report.snapshots.append(path)
    return clamp01(state.image), report
