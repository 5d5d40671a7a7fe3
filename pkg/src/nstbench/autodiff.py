"""Reverse-mode automatic differentiation over the kernel set.

Forward values are computed eagerly when an op is recorded; :func:`backward`
walks the tape once in reverse, accumulating gradients by addition where a
value fans out.

    tape = Tape()
    x = tape.leaf(image, requires_grad=True)
    loss = tape.sum(tape.relu(x))
    grads = backward(tape, loss)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError, TapeMismatchError
from .tensor import Backend, ConvParams, Tensor, default_dtype, wrap


class Op:
    """A differentiable operation.

    ``forward`` receives input arrays and returns ``(output, saved)``;
    ``backward`` receives the output gradient, ``saved`` and the input arrays
    and returns one gradient (or None) per input.
    """

    name = "op"

    def forward(self, *xs):
        raise NotImplementedError

    def backward(self, grad, saved, xs, needs):
        raise NotImplementedError


class Conv2d(Op):
    name = "conv2d"

    def __init__(self, params: ConvParams, backend=Backend.FAST):
        self.params = params
        self.backend = Backend.parse(backend)

    def forward(self, x, w, b):
        return kernels.conv2d_array(x, w, b, self.params, self.backend), None

    def backward(self, grad, saved, xs, needs):
        x, w, b = xs
        gx, gw, gb = kernels.conv2d_backward(grad, x, w, self.params, self.backend,
                                             need_input=needs[0],
                                             need_weight=needs[1] or needs[2])
        if gb is not None:
            gb = gb.reshape(b.shape)
        return gx, gw, gb


class ReLU(Op):
    name = "relu"

    def __init__(self, backend=Backend.FAST):
        self.backend = Backend.parse(backend)

    def forward(self, x):
        return kernels._impl(self.backend).relu(x), None

    def backward(self, grad, saved, xs, needs):
        # gradient at exactly 0 is 0
        return (kernels.relu_backward(grad, xs[0], self.backend),)


class AvgPool(Op):
    name = "avg_pool"

    def __init__(self, k: int, s: int, backend=Backend.FAST):
        self.k, self.s = k, s
        self.backend = Backend.parse(backend)

    def forward(self, x):
        return kernels.avg_pool_array(x, self.k, self.s, self.backend), None

    def backward(self, grad, saved, xs, needs):
        return (kernels.avg_pool_backward(grad, xs[0].shape, self.k, self.s, self.backend),)


class MaxPool(AvgPool):
    name = "max_pool"

    def forward(self, x):
        return kernels.max_pool_array(x, self.k, self.s, self.backend), None

    def backward(self, grad, saved, xs, needs):
        return (kernels.max_pool_backward(grad, xs[0], self.k, self.s, self.backend),)


def gram_matrix(f: np.ndarray, backend=Backend.FAST) -> np.ndarray:
    """F @ F.T for a (C, positions) matrix, mirrored from the upper triangle
    so the result is exactly symmetric."""
    g = kernels.gemm(f, np.ascontiguousarray(f.T), backend)
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


class Gram(Op):
    """Unnormalised channel inner products, returned as (1, 1, C, C)."""

    name = "gram"

    def __init__(self, backend=Backend.FAST):
        self.backend = Backend.parse(backend)

    def forward(self, x):
        if x.shape[0] != 1:
            raise ShapeError(f"gram expects batch size 1, got {x.shape}")
        g = gram_matrix(x.reshape(x.shape[1], -1), self.backend)
        return g.reshape(1, 1, *g.shape), None

    def backward(self, grad, saved, xs, needs):
        x = xs[0]
        f = x.reshape(x.shape[1], -1)
        g = grad[0, 0]
        return (kernels.gemm(g + g.T, f, self.backend).reshape(x.shape),)


class SquaredError(Op):
    """``scale * sum((a - b)**2)``; scale defaults to 1/n, i.e. the MSE."""

    name = "squared_error"

    def __init__(self, scale: float | None = None):
        self.scale = scale

    def _scale(self, a):
        return 1.0 / a.size if self.scale is None else self.scale

    def forward(self, a, b):
        if a.shape != b.shape:
            raise ContractError(f"squared error operands differ in shape: {a.shape} vs {b.shape}")
        d = a - b
        val = self._scale(a) * np.dot(d.ravel().astype(np.float64), d.ravel())
        return np.full((1, 1, 1, 1), val, dtype=a.dtype), d

    def backward(self, grad, saved, xs, needs):
        g = (2.0 * self._scale(xs[0]) * grad.item()) * saved
        g = g.astype(grad.dtype, copy=False)
        return g, -g


class WeightedSum(Op):
    """``sum_i coeffs[i] * x_i`` over same-shape inputs."""

    name = "weighted_sum"

    def __init__(self, coeffs: Sequence[float]):
        self.coeffs = [float(c) for c in coeffs]

    def forward(self, *xs):
        if len(xs) != len(self.coeffs):
            raise ContractError(f"{len(xs)} inputs for {len(self.coeffs)} coefficients")
        shape = xs[0].shape
        if any(x.shape != shape for x in xs):
            raise ShapeError("weighted_sum inputs must share a shape")
        out = np.zeros(shape, dtype=xs[0].dtype)
        for c, x in zip(self.coeffs, xs):
            out += c * x
        return out, None

    def backward(self, grad, saved, xs, needs):
        return tuple((c * grad).astype(grad.dtype, copy=False) for c in self.coeffs)


class Sum(Op):
    name = "sum"

    def forward(self, x):
        return np.full((1, 1, 1, 1), x.sum(dtype=np.float64), dtype=x.dtype), None

    def backward(self, grad, saved, xs, needs):
        return (np.full(xs[0].shape, grad.item(), dtype=grad.dtype),)


@dataclass
class Node:
    op: Op | None
    inputs: tuple[int, ...]
    value: Tensor
    saved: Any = None
    requires_grad: bool = False


@dataclass(frozen=True)
class Var:
    """Handle to a value recorded on a specific :class:`Tape`."""

    tape: "Tape" = field(repr=False)
    index: int

    @property
    def value(self) -> Tensor:
        return self.tape.nodes[self.index].value


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        # called as hook(index, node) once per node visited by backward
        self.backward_hook: Callable[[int, Node], None] | None = None

    def leaf(self, value: Tensor, requires_grad: bool = False) -> Var:
        if not isinstance(value, Tensor):
            value = Tensor(value)
        self.nodes.append(Node(None, (), value, requires_grad=requires_grad))
        return Var(self, len(self.nodes) - 1)

    def record(self, op: Op, inputs: Sequence[Var]) -> Var:
        for v in inputs:
            if not isinstance(v, Var) or v.tape is not self:
                raise TapeMismatchError(f"{op.name}: input {v!r} was not issued by this tape")
        xs = [self.nodes[v.index].value.data for v in inputs]
        with np.errstate(over="ignore", invalid="ignore"):  # wrap() rejects non-finite output
            out, saved = op.forward(*xs)
        if out.dtype != default_dtype():
            out = out.astype(default_dtype())
        value = wrap(out, op.name)
        needs_grad = any(self.nodes[v.index].requires_grad for v in inputs)
        self.nodes.append(Node(op, tuple(v.index for v in inputs), value, saved, needs_grad))
        return Var(self, len(self.nodes) - 1)

    # convenience wrappers
    def conv2d(self, x, w, b, params, backend=Backend.FAST):
        return self.record(Conv2d(params, backend), [x, w, b])

    def relu(self, x, backend=Backend.FAST):
        return self.record(ReLU(backend), [x])

    def avg_pool(self, x, k, s, backend=Backend.FAST):
        return self.record(AvgPool(k, s, backend), [x])

    def max_pool(self, x, k, s, backend=Backend.FAST):
        return self.record(MaxPool(k, s, backend), [x])

    def gram(self, x, backend=Backend.FAST):
        return self.record(Gram(backend), [x])

    def mse(self, a, b):
        return self.record(SquaredError(), [a, b])

    def squared_error(self, a, b, scale):
        return self.record(SquaredError(scale), [a, b])

    def weighted_sum(self, xs, coeffs):
        return self.record(WeightedSum(coeffs), list(xs))

    def sum(self, x):
        return self.record(Sum(), [x])

    def __len__(self):
        return len(self.nodes)


def backward(tape: Tape, loss: Var) -> dict[Var, Tensor]:
    """Gradients of the scalar ``loss`` for every leaf marked ``requires_grad``.

    Leaves that do not influence ``loss`` get zero tensors.
    """
    if loss.tape is not tape:
        raise TapeMismatchError("loss variable belongs to another tape")
    if loss.value.shape != (1, 1, 1, 1):
        raise ContractError(f"backward needs a scalar (1,1,1,1) loss, got {loss.value.shape}")

    grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1, 1, 1), dtype=loss.value.dtype)}
    for i in range(loss.index, -1, -1):
        node = tape.nodes[i]
        if tape.backward_hook is not None:
            tape.backward_hook(i, node)
        g = grads.get(i)
        if node.op is None or g is None or not node.requires_grad:
            continue
        xs = [tape.nodes[j].value.data for j in node.inputs]
        needs = [tape.nodes[j].requires_grad for j in node.inputs]
        in_grads = node.op.backward(g, node.saved, xs, needs)
        for j, need, gj in zip(node.inputs, needs, in_grads):
            if not need or gj is None:
                continue
            if j in grads:
                grads[j] = grads[j] + gj
            else:
                grads[j] = gj
        if i != loss.index:
            del grads[i]

    result = {}
    for i, node in enumerate(tape.nodes):
        if node.op is None and node.requires_grad:
            g = grads.get(i)
            if g is None:
                result[Var(tape, i)] = Tensor.zeros(node.value.shape)
            else:
                result[Var(tape, i)] = wrap(np.asarray(g, dtype=node.value.dtype).reshape(node.value.shape),
                                            "backward")
    return result


@dataclass(frozen=True)
class GradCheckResult:
    max_error: float
    checked: int
    skipped: int  # coordinates whose stencil straddled a ReLU kink


def _relu_patterns(tape: Tape) -> list[np.ndarray]:
    return [tape.nodes[n.inputs[0]].value.data > 0 for n in tape.nodes if isinstance(n.op, ReLU)]


def grad_check_detail(builder: Callable[[Tape, Var], Var], leaf: Tensor, eps: float = 1e-4,
                      skip_kinks: bool = False, coords=None) -> GradCheckResult:
    """Compare reverse-mode gradients with central differences, coordinate by coordinate.

    The error per coordinate is |analytic - numeric| / max(1, |numeric|).
    With ``skip_kinks`` a coordinate is left out when either side of its
    stencil flips any ReLU on/off pattern: the function is not differentiable
    across the stencil there, so the central difference says nothing about
    the gradient at the centre.

    ``coords`` restricts the check to those flat indices (default: all).
    """
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    if default_dtype() != np.float64:
        raise ContractError("grad_check requires 64-bit mode (wrap the call in float64_mode())")
    leaf = Tensor(leaf.data)

    def evaluate(arr):
        tape = Tape()
        x = tape.leaf(Tensor(arr, copy=False), requires_grad=True)
        return tape, x, builder(tape, x)

    tape, x, loss = evaluate(leaf.numpy())
    analytic = backward(tape, loss)[x].data.ravel()
    base_patterns = _relu_patterns(tape) if skip_kinks else None

    def straddles(t):
        return any((a != b).any() for a, b in zip(base_patterns, _relu_patterns(t)))

    base = leaf.numpy().ravel()
    indices = range(base.size) if coords is None else [int(i) for i in coords]
    worst, skipped = 0.0, 0
    for i in indices:
        orig = base[i]
        base[i] = orig + eps
        t_up, _, up = evaluate(base.reshape(leaf.shape).copy())
        base[i] = orig - eps
        t_down, _, down = evaluate(base.reshape(leaf.shape).copy())
        base[i] = orig
        if skip_kinks and (straddles(t_up) or straddles(t_down)):
            skipped += 1
            continue
        numeric = (up.value.data.item() - down.value.data.item()) / (2 * eps)
        if not (np.isfinite(numeric) and np.isfinite(analytic[i])):
            raise NumericError(f"non-finite value during gradient check at coordinate {i}")
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return GradCheckResult(float(worst), len(indices) - skipped, skipped)


def grad_check(builder: Callable[[Tape, Var], Var], leaf: Tensor, eps: float = 1e-4,
               skip_kinks: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``builder(tape, x)`` must record a scalar loss from the leaf ``x``. Run
    inside :func:`~nstbench.tensor.float64_mode`; 32-bit rounding noise would
    swamp the comparison.
    """
    return grad_check_detail(builder, leaf, eps, skip_kinks).max_error
