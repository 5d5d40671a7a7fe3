"""Desk-scale VGG- and NIN-style feature extractors with four tap layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import kernels
from .autodiff import Tape, Var
from .errors import ConfigError, GeometryError, ShapeError
from .tensor import Backend, ConvParams, Tensor

TAPS = ("tap1", "tap2", "tap3", "tap4")
KINDS = ("vgg-desk", "nin-desk")
DESK_WIDTHS = (32, 64, 128, 256)
FULL_WIDTHS = (64, 128, 256, 512)


@dataclass(frozen=True)
class Conv:
    params: ConvParams
    tap: Optional[str] = None


@dataclass(frozen=True)
class ReLU:
    tap: Optional[str] = None


@dataclass(frozen=True)
class Pool:
    k: int = 2
    s: int = 2
    mode: str = "avg"
    tap: Optional[str] = None


LayerSpec = Union[Conv, ReLU, Pool]


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    layers: tuple
    in_channels: int = 3

    def __post_init__(self):
        taps = [layer.tap for layer in self.layers if layer.tap is not None]
        if sorted(taps) != sorted(TAPS) or len(set(taps)) != len(taps):
            raise ConfigError(f"model must carry exactly the taps {TAPS}, found {taps}")
        if self.in_channels != 3:
            raise ConfigError("models take 3-channel RGB input")

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv)]

    @property
    def active_layers(self) -> tuple:
        """Layers up to and including the last tap; anything later is never evaluated."""
        last = max(i for i, layer in enumerate(self.layers) if layer.tap is not None)
        return self.layers[:last + 1]

    def tap_channels(self) -> dict[str, int]:
        out, c = {}, self.in_channels
        for layer in self.layers:
            if isinstance(layer, Conv):
                c = layer.params.out_channels
            if layer.tap is not None:
                out[layer.tap] = c
        return out


def build_model(kind: str, widths=DESK_WIDTHS, pool: str = "avg") -> ModelSpec:
    """Four blocks with channel doubling; the tap sits on each block's last ReLU.

    vgg-desk: [conv3 relu conv3 relu* pool] x 4
    nin-desk: [conv3 relu conv1 relu conv1 relu* pool] x 4   (mlpconv blocks)
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {', '.join(KINDS)}")
    if pool not in ("avg", "max"):
        raise ConfigError(f"unknown pool mode {pool!r}")
    widths = tuple(widths)
    if len(widths) != 4 or any(b <= a for a, b in zip((3,) + widths, widths)):
        raise ConfigError(f"need 4 strictly increasing block widths, got {widths}")
    layers: list = []
    c_in = 3
    for block, width in enumerate(widths):
        tap = TAPS[block]
        if kind == "vgg-desk":
            layers += [Conv(ConvParams(c_in, width, 3, 1, 1)), ReLU(),
                       Conv(ConvParams(width, width, 3, 1, 1)), ReLU(tap)]
        else:
            layers += [Conv(ConvParams(c_in, width, 3, 1, 1)), ReLU(),
                       Conv(ConvParams(width, width, 1)), ReLU(),
                       Conv(ConvParams(width, width, 1)), ReLU(tap)]
        layers.append(Pool(2, 2, pool))
        c_in = width
    return ModelSpec(kind, tuple(layers))


def layer_shapes(spec: ModelSpec, resolution: int, *, active_only: bool = True) -> list[tuple]:
    """Output shape of every layer for a square input; raises GeometryError on failure."""
    shape = (1, spec.in_channels, resolution, resolution)
    out = []
    layers = spec.active_layers if active_only else spec.layers
    for i, layer in enumerate(layers):
        try:
            if isinstance(layer, Conv):
                shape = kernels.conv_output_shape(shape, layer.params)
            elif isinstance(layer, Pool):
                shape = kernels.pool_output_shape(shape, layer.k, layer.s)
        except GeometryError as exc:
            raise GeometryError(f"layer {i} ({type(layer).__name__}) at resolution {resolution}: {exc}") from None
        out.append(shape)
    return out


def check_resolution(spec: ModelSpec, resolution: int) -> None:
    if resolution < 1:
        raise GeometryError(f"resolution must be positive, got {resolution}")
    layer_shapes(spec, resolution)


@dataclass
class WeightStore:
    kind: str
    entries: dict[int, tuple[Tensor, Tensor]]
    seed: Optional[int] = None
    _cast_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def cast(self, dtype) -> dict[int, tuple[Tensor, Tensor]]:
        """Entries converted to ``dtype`` (cached; the float32 originals are returned as-is)."""
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return self.entries
        if dtype not in self._cast_cache:
            self._cast_cache[dtype] = {i: (Tensor(w.data, dtype=dtype), Tensor(b.data, dtype=dtype))
                                       for i, (w, b) in self.entries.items()}
        return self._cast_cache[dtype]

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        return (self.kind == other.kind and self.entries.keys() == other.entries.keys()
                and all(self.entries[i][0] == other.entries[i][0]
                        and self.entries[i][1] == other.entries[i][1] for i in self.entries))

    def validate(self, spec: ModelSpec) -> None:
        idx = spec.conv_indices
        if sorted(self.entries) != idx:
            raise ShapeError(f"weight entries {sorted(self.entries)} do not match conv layers {idx}")
        for i in idx:
            params = spec.layers[i].params
            w, b = self.entries[i]
            if w.shape != params.weight_shape or b.size != params.out_channels:
                raise ShapeError(f"layer {i}: weight {w.shape}/bias {b.size} do not match {params}")


def init_weights(spec: ModelSpec, seed: int) -> WeightStore:
    """He-uniform weights, bound sqrt(6 / fan_in); zero biases. Always float32."""
    rng = np.random.default_rng(seed)
    entries = {}
    for i in spec.conv_indices:
        p = spec.layers[i].params
        fan_in = p.in_channels * p.kernel_size ** 2
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=p.weight_shape).astype(np.float32)
        entries[i] = (_f32(w), _f32(np.zeros((1, 1, 1, p.out_channels), dtype=np.float32)))
    return WeightStore(spec.kind, entries, seed)


def _f32(arr) -> Tensor:
    # weights stay float32 regardless of the active compute precision
    return Tensor(arr, dtype=np.float32)


def forward_features(spec: ModelSpec, weights: WeightStore, image, backend=Backend.FAST,
                     tape: Tape | None = None) -> dict:
    """Run the network and collect the tap activations.

    With ``tape`` given, ``image`` must be a Var on that tape and the returned
    map holds Vars; otherwise ``image`` is a Tensor and Tensors come back.
    """
    backend = Backend.parse(backend)
    x = image
    shape = x.value.shape if tape is not None else x.shape
    if shape[0] != 1 or shape[1] != spec.in_channels or shape[2] != shape[3]:
        raise ShapeError(f"expected a (1, {spec.in_channels}, s, s) image, got {shape}")
    check_resolution(spec, shape[2])

    feats = {}
    cast = weights.cast(x.value.dtype if tape is not None else x.dtype)
    if tape is not None:
        wvars = {i: (tape.leaf(w), tape.leaf(b)) for i, (w, b) in cast.items()}
    for i, layer in enumerate(spec.active_layers):
        if isinstance(layer, Conv):
            w, b = cast[i]
            if tape is None:
                x = kernels.conv2d_exec(x, w, b, layer.params, backend)
            else:
                x = tape.conv2d(x, *wvars[i], layer.params, backend)
        elif isinstance(layer, ReLU):
            x = kernels.relu_exec(x, backend) if tape is None else tape.relu(x, backend)
        elif layer.mode == "avg":
            x = kernels.avg_pool_exec(x, layer.k, layer.s, backend) if tape is None \
                else tape.avg_pool(x, layer.k, layer.s, backend)
        else:
            x = kernels.max_pool_exec(x, layer.k, layer.s, backend) if tape is None \
                else tape.max_pool(x, layer.k, layer.s, backend)
        if layer.tap is not None:
            feats[layer.tap] = x
    return feats
