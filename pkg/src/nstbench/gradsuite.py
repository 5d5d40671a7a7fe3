"""Finite-difference gradient checks for every differentiable op and the full objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .autodiff import Tape, grad_check_detail
from .models import build_model, init_weights
from .style import StyleConfig, compute_targets, objective
from .tensor import ConvParams, Tensor, float64_mode

EPS = 1e-4
TOLERANCE = 1e-4
OBJECTIVE_SIZE = 16
OBJECTIVE_COORDS = 96  # sampled pixel coordinates per objective instance


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    instances: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _away_from(rng, shape, gap):
    """Normal draws redrawn until no entry lies within ``gap`` of zero."""
    x = rng.standard_normal(shape)
    while (small := np.abs(x) < gap).any():
        x[small] = rng.standard_normal(int(small.sum()))
    return x


def _distinct_windows(rng, shape, gap):
    # max-pool instances: spread values so no two are within gap of each other
    n = int(np.prod(shape))
    vals = np.arange(n, dtype=np.float64) * 10 * gap + rng.uniform(0, gap)
    return rng.permutation(vals).reshape(shape) + rng.standard_normal() * 0.1


def _mse_to(tape, y, rng):
    return tape.mse(y, tape.leaf(Tensor(rng.standard_normal(y.value.shape))))


def _op_cases(rng, be="fast") -> Iterator[tuple[str, Callable, Tensor]]:
    """One random instance of every per-op check: (name, builder, leaf)."""
    cin, cout = rng.integers(1, 4), rng.integers(1, 5)
    k = int(rng.choice([1, 3]))
    pad = int(rng.integers(0, 2)) if k == 3 else 0
    size = int(rng.integers(4, 7))
    params = ConvParams(int(cin), int(cout), k, 1, pad)
    x = Tensor(rng.standard_normal((1, cin, size, size)))
    w = Tensor(rng.standard_normal(params.weight_shape))
    b = Tensor(rng.standard_normal((1, 1, 1, cout)))

    yield ("conv2d/input",
           lambda t, v: _mse_to(t, t.conv2d(v, t.leaf(w), t.leaf(b), params, be), np.random.default_rng(1)), x)
    yield ("conv2d/weight",
           lambda t, v: _mse_to(t, t.conv2d(t.leaf(x), v, t.leaf(b), params, be), np.random.default_rng(1)), w)
    yield ("conv2d/bias",
           lambda t, v: _mse_to(t, t.conv2d(t.leaf(x), t.leaf(w), v, params, be), np.random.default_rng(1)), b)
    yield ("relu",
           lambda t, v: _mse_to(t, t.relu(v, be), np.random.default_rng(2)),
           Tensor(_away_from(rng, (1, 2, 4, 4), 10 * EPS)))
    yield ("avg_pool",
           lambda t, v: _mse_to(t, t.avg_pool(v, 2, 2, be), np.random.default_rng(3)),
           Tensor(rng.standard_normal((1, 2, 4, 4))))
    yield ("max_pool",
           lambda t, v: _mse_to(t, t.max_pool(v, 2, 2, be), np.random.default_rng(3)),
           Tensor(_distinct_windows(rng, (1, 2, 4, 4), EPS)))
    yield ("gram",
           lambda t, v: _mse_to(t, t.gram(v, be), np.random.default_rng(4)),
           Tensor(rng.standard_normal((1, 3, 4, 4))))
    other = Tensor(rng.standard_normal((1, 2, 3, 3)))
    yield ("mse",
           lambda t, v: t.mse(v, t.leaf(other)),
           Tensor(rng.standard_normal((1, 2, 3, 3))))
    a, c = rng.uniform(-2, 2, size=2)
    yield ("weighted_sum",
           lambda t, v: _mse_to(t, t.weighted_sum([v, t.leaf(other), v], [a, 1.5, c]), np.random.default_rng(5)),
           Tensor(rng.standard_normal((1, 2, 3, 3))))


def check_ops(seed: int = 0, instances: int = 20, backends=("naive", "fast")) -> list[CheckResult]:
    worst: dict[str, float] = {}
    with float64_mode():
        for be in backends:
            for i in range(instances):
                rng = np.random.default_rng([seed, i])
                for name, builder, leaf in _op_cases(rng, be):
                    key = f"{name}[{be}]"
                    err = grad_check_detail(builder, leaf, EPS).max_error
                    worst[key] = max(worst.get(key, 0.0), err)
    return [CheckResult(name, err, instances) for name, err in worst.items()]


def objective_builder(kind: str, seed: int, size: int = OBJECTIVE_SIZE):
    """(builder, leaf) for the full content+style objective on a random instance."""
    spec = build_model(kind)
    weights = init_weights(spec, seed)
    rng = np.random.default_rng([seed, 7])
    content = Tensor(rng.uniform(size=(1, 3, size, size)))
    style = Tensor(rng.uniform(size=(1, 3, size, size)))
    cfg = StyleConfig()
    targets = compute_targets(content, style, spec, weights, cfg)
    leaf = Tensor(rng.uniform(size=(1, 3, size, size)))

    def builder(tape: Tape, x):
        return objective(tape, x, spec, weights, targets, cfg, "fast")[2]

    return builder, leaf


def check_objective(seed: int = 0, instances: int = 20, kinds=("vgg-desk", "nin-desk"),
                    coords: int | None = OBJECTIVE_COORDS) -> list[CheckResult]:
    """Full-objective checks on ``coords`` random pixel coordinates per instance (None = all)."""
    out = []
    with float64_mode():
        for kind in kinds:
            worst, skipped = 0.0, 0
            for i in range(instances):
                builder, leaf = objective_builder(kind, seed * 1000 + i)
                picks = None
                if coords is not None and coords < leaf.size:
                    picks = np.random.default_rng([seed, i, 11]).choice(leaf.size, coords, replace=False)
                res = grad_check_detail(builder, leaf, EPS, skip_kinks=True, coords=picks)
                worst = max(worst, res.max_error)
                skipped += res.skipped
            out.append(CheckResult(f"objective/{kind}@{OBJECTIVE_SIZE}px", worst, instances, skipped))
    return out


def run_suite(seed: int = 0, instances: int = 20, objective_instances: int = 20) -> list[CheckResult]:
    return check_ops(seed, instances) + check_objective(seed, objective_instances)
