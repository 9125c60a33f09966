"""Grayscale image representation, PGM I/O and spatial bookkeeping.

Images are 2D float64 arrays, shape (height, width).  Two value domains
are used throughout the package:

* "raw" images hold 8-bit integer values in {0..255} (as floats), the
  domain of PGM files;
* "normalized" images hold strictly positive values in
  [1/512, 511/512], obtained with :func:`normalize`.  Strict positivity
  matters because downstream filters raise pixels to arbitrary real
  powers and take logarithms.

All functions are pure; arrays are never modified in place.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "PgmError",
    "MalformedHeaderError",
    "MaxvalUnsupportedError",
    "TruncatedDataError",
    "OddMarginError",
    "load_pgm",
    "save_pgm",
    "normalize",
    "denormalize",
    "center_crop",
    "valid_size",
]


class PgmError(ValueError):
    """Base class for PGM parse failures."""


class MalformedHeaderError(PgmError):
    """Header is not a valid P2/P5 PGM header."""


class MaxvalUnsupportedError(PgmError):
    """PGM maxval is not 255 (only 8-bit images are supported)."""


class TruncatedDataError(PgmError):
    """Pixel payload ends before width*height samples."""


class OddMarginError(ValueError):
    """Crop margin is not evenly divisible between the two sides."""


def _header_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping # comments."""
    pos = 0
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
            continue
        if c == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
            continue
        end = pos
        while end < n and not data[end : end + 1].isspace():
            end += 1
        yield data[pos:end], end
        pos = end


def load_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM file with maxval 255.

    Returns a raw image: float64 array of exact stored integers.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = _header_tokens(data)
    try:
        magic, _ = next(tokens)
    except StopIteration:
        raise MalformedHeaderError("empty file") from None
    if magic not in (b"P2", b"P5"):
        raise MalformedHeaderError(f"bad magic {magic!r}, expected P2 or P5")

    fields = []
    end = 0
    for _ in range(3):
        try:
            tok, end = next(tokens)
        except StopIteration:
            raise MalformedHeaderError("header ends before width/height/maxval") from None
        if not tok.isdigit():
            raise MalformedHeaderError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise MaxvalUnsupportedError(f"maxval {maxval} unsupported, must be 255")

    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates maxval from the payload
        payload = data[end + 1 :]
        if len(payload) < count:
            raise TruncatedDataError(f"expected {count} bytes, got {len(payload)}")
        values = np.frombuffer(payload[:count], dtype=np.uint8)
    else:
        values = []
        for tok, end in tokens:
            if not tok.isdigit():
                raise TruncatedDataError(f"non-numeric sample {tok!r}")
            values.append(int(tok))
            if len(values) == count:
                break
        if len(values) < count:
            raise TruncatedDataError(f"expected {count} samples, got {len(values)}")
        values = np.asarray(values)
        if values.max() > 255:
            raise TruncatedDataError("sample value exceeds maxval 255")

    return values.reshape(height, width).astype(np.float64)


def save_pgm(img: np.ndarray, path, comment: str | None = None) -> None:
    """Write a raw image (values in [0, 255]) as a binary P5 PGM.

    Values are rounded half-up to the nearest integer.  An optional
    comment becomes a # header line (metadata such as rescale factors).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {img.shape}")
    quantized = np.clip(np.floor(img + 0.5), 0.0, 255.0).astype(np.uint8)
    height, width = img.shape
    header = "P5\n"
    if comment is not None:
        header += f"# {comment}\n"
    header += f"{width} {height}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(quantized.tobytes())


def normalize(img: np.ndarray) -> np.ndarray:
    """Map raw {0..255} values to strictly positive (v + 0.5) / 256.

    Output lies in [1/512, 511/512]; zero pixels stay representable under
    real powers and logarithms.
    """
    return (np.asarray(img, dtype=np.float64) + 0.5) / 256.0


def denormalize(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`: v -> clamp(v*256 - 0.5, 0, 255)."""
    return np.clip(np.asarray(img, dtype=np.float64) * 256.0 - 0.5, 0.0, 255.0)


def center_crop(img: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Extract the central target_h x target_w window.

    The margin on each axis must split evenly between the two sides,
    which holds whenever sizes shrink by multiples of (k - 1) for odd k.
    """
    h, w = img.shape
    if target_h > h or target_w > w:
        raise ValueError(f"crop {target_h}x{target_w} exceeds image {h}x{w}")
    dh, dw = h - target_h, w - target_w
    if dh % 2 or dw % 2:
        raise OddMarginError(f"margins ({dh}, {dw}) are not even")
    top, left = dh // 2, dw // 2
    return img[top : top + target_h, left : left + target_w].copy()


def valid_size(in_w: int, in_h: int, k: int) -> tuple[int, int]:
    """Output size of a valid-mode k x k filter: (in_w - k + 1, in_h - k + 1)."""
    if k % 2 == 0:
        raise ValueError(f"kernel size {k} must be odd")
    if k > min(in_w, in_h):
        raise ValueError(f"kernel size {k} exceeds image {in_w}x{in_h}")
    return in_w - k + 1, in_h - k + 1
