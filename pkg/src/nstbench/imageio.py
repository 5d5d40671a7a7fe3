"""PNG / binary PPM (P6) loading, bilinear resizing and saving."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, FileIOError, FormatError
from .tensor import Tensor

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

_PPM_HEADER = re.compile(rb"P6(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


@dataclass(frozen=True)
class ImageBuffer:
    width: int
    height: int
    samples: bytes  # interleaved RGB

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ContractError("image dimensions must be positive")
        if len(self.samples) != 3 * self.width * self.height:
            raise ContractError(f"expected {3 * self.width * self.height} samples, got {len(self.samples)}")

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.samples, dtype=np.uint8).reshape(self.height, self.width, 3)


def decode_ppm(buf: bytes) -> ImageBuffer:
    m = _PPM_HEADER.match(buf)
    if not m:
        raise FormatError("malformed PPM header", 0)
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"PPM maxval {maxval} unsupported (only 255)", m.start(3))
    body = buf[m.end():]
    if len(body) < 3 * w * h:
        raise FormatError(f"PPM pixel data truncated: {len(body)} of {3 * w * h} bytes", m.end())
    return ImageBuffer(w, h, bytes(body[:3 * w * h]))


def decode_png(buf: bytes) -> ImageBuffer:
    try:
        with Image.open(io.BytesIO(buf)) as im:
            im = im.convert("RGB")  # drops alpha
            return ImageBuffer(im.width, im.height, im.tobytes())
    except (OSError, ValueError) as exc:
        raise FormatError(f"undecodable PNG: {exc}") from None


def decode_image(buf: bytes) -> ImageBuffer:
    if buf.startswith(PNG_MAGIC):
        return decode_png(buf)
    if buf.startswith(b"P6"):
        return decode_ppm(buf)
    raise FormatError(f"unsupported image format (magic {buf[:8]!r}); expected PNG or binary PPM (P6)", 0)


def encode_ppm(img: ImageBuffer) -> bytes:
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.samples


def encode_png(img: ImageBuffer) -> bytes:
    out = io.BytesIO()
    Image.fromarray(img.to_array(), "RGB").save(out, format="PNG")
    return out.getvalue()


def buffer_to_tensor(img: ImageBuffer) -> Tensor:
    arr = img.to_array().astype(np.float64) / 255.0
    return Tensor(arr.transpose(2, 0, 1)[None])


def tensor_to_buffer(t: Tensor) -> ImageBuffer:
    n, c, h, w = t.shape
    if n != 1 or c != 3:
        raise ContractError(f"expected a (1, 3, h, w) image tensor, got {t.shape}")
    q = np.rint(np.clip(t.data[0].astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    return ImageBuffer(w, h, q.transpose(1, 2, 0).tobytes())


def center_crop(t: Tensor) -> Tensor:
    _, _, h, w = t.shape
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    return Tensor(t.data[:, :, y0:y0 + s, x0:x0 + s])


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(t: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ContractError(f"resize target must be at least 1x1, got {out_h}x{out_w}")
    x = t.data.astype(np.float64)
    ylo, yhi, fy = _axis_weights(x.shape[2], out_h)
    xlo, xhi, fx = _axis_weights(x.shape[3], out_w)
    fy = fy[:, None]
    rows = x[:, :, ylo, :] * (1 - fy) + x[:, :, yhi, :] * fy
    out = rows[:, :, :, xlo] * (1 - fx) + rows[:, :, :, xhi] * fx
    return Tensor(out)


def load_image(path, target_size: int | None = None) -> Tensor:
    """Read a PNG or P6 PPM as a (1, 3, s, s) tensor with values v/255.

    With ``target_size`` the image is centre-cropped to a square and resized.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FileIOError(f"cannot read image {path}: {exc.strerror or exc}") from None
    t = buffer_to_tensor(decode_image(buf))
    if target_size is not None:
        t = center_crop(t)
        if t.shape[2] != target_size:
            t = resize_bilinear(t, target_size, target_size)
    return t


def save_image(t: Tensor, path) -> None:
    """Clamp to [0, 1], quantise to round(v*255) and write by extension (.png/.ppm)."""
    path = Path(path)
    img = tensor_to_buffer(t)
    ext = path.suffix.lower()
    if ext == ".png":
        data = encode_png(img)
    elif ext == ".ppm":
        data = encode_ppm(img)
    else:
        raise FormatError(f"cannot infer image format from extension {ext!r} (use .png or .ppm)")
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise FileIOError(f"cannot write image {path}: {exc.strerror or exc}") from None
