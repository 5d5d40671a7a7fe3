"""Binary weight file (little-endian).

    magic   b"NSWF"
    u32     version (1)
    u8      kind tag: 0 vgg-desk, 1 nin-desk, 2 custom
    u32     layer count
    per conv layer:
        u32       layer index
        4 x u32   weight shape (out_c, in_c, k, k)
        f32[...]  weight data
        u32       bias length
        f32[...]  bias data

Trailing bytes are an error.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, NSTError
from .models import DESK_WIDTHS, WeightStore, build_model
from .tensor import Tensor

MAGIC = b"NSWF"
VERSION = 1
KIND_TAGS = {"vgg-desk": 0, "nin-desk": 1, "custom": 2}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


def _kind_tag(store: WeightStore) -> int:
    tag = KIND_TAGS.get(store.kind, 2)
    if tag != 2:
        try:
            store.validate(build_model(store.kind))
        except NSTError:
            tag = 2  # e.g. full-width variants
    return tag


def encode_weights(store: WeightStore) -> bytes:
    parts = [MAGIC, struct.pack("<IBI", VERSION, _kind_tag(store), len(store.entries))]
    for idx in sorted(store.entries):
        w, b = store.entries[idx]
        parts.append(struct.pack("<5I", idx, *w.shape))
        parts.append(np.ascontiguousarray(w.data, dtype="<f4").tobytes())
        parts.append(struct.pack("<I", b.size))
        parts.append(np.ascontiguousarray(b.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(store: WeightStore, path) -> None:
    Path(path).write_bytes(encode_weights(store))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file: need {n} bytes for {what}, "
                              f"{len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_weights(buf: bytes) -> WeightStore:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    tag_pos = r.pos
    (tag,) = r.unpack("<B", "kind tag")
    if tag not in TAG_KINDS:
        raise FormatError(f"unknown kind tag {tag}", tag_pos)
    kind = TAG_KINDS[tag]
    (count,) = r.unpack("<I", "layer count")

    expected = None
    if kind != "custom":
        spec = build_model(kind, DESK_WIDTHS)
        expected = {i: spec.layers[i].params for i in spec.conv_indices}
        if count != len(expected):
            raise FormatError(f"{kind} has {len(expected)} conv layers, file declares {count}", tag_pos + 1)

    entries = {}
    for n in range(count):
        start = r.pos
        idx, *shape = r.unpack("<5I", f"layer record {n} header")
        wbytes = r.take(4 * math.prod(shape), f"layer {idx} weights")
        (blen,) = r.unpack("<I", f"layer {idx} bias length")
        bbytes = r.take(4 * blen, f"layer {idx} bias")
        if idx in entries:
            raise FormatError(f"duplicate layer index {idx}", start)
        if blen != shape[0]:
            raise FormatError(f"layer {idx}: bias length {blen} does not match {shape[0]} output channels", start)
        if expected is not None:
            params = expected.get(idx)
            if params is None or tuple(shape) != params.weight_shape:
                want = None if params is None else params.weight_shape
                raise FormatError(f"layer {idx}: shape {tuple(shape)} does not match {kind} ({want})", start)
        w = np.frombuffer(wbytes, dtype="<f4").reshape(shape)
        b = np.frombuffer(bbytes, dtype="<f4").reshape(1, 1, 1, blen)
        entries[idx] = (Tensor(w, dtype=np.float32), Tensor(b, dtype=np.float32))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last layer", r.pos)
    return WeightStore(kind, entries)


def load_weights(path) -> WeightStore:
    return decode_weights(Path(path).read_bytes())
