"""Exact flat mathematical morphology: the oracle for targets and baselines.

Erosion takes the window minimum at offsets +b and dilation the maximum at
offsets -b (the adjoint pair).  With that pairing, opening and closing are
exactly idempotent and the duality

    erode(f, B) == 1 - dilate(1 - f, reflect(B))

holds for every structuring element, including asymmetric ones.  For the
symmetric constructors the two window senses coincide.

All operators are valid-mode: the output shrinks by (bounding box - 1)
per pass, so oracle targets line up with valid-convolution networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import center_crop

__all__ = [
    "StructuringElement",
    "se_square",
    "se_diamond",
    "se_disk",
    "se_line",
    "reflect",
    "dilate",
    "erode",
    "opening",
    "closing",
    "white_top_hat",
    "black_top_hat",
]

_LINE_DIRECTIONS = {0: (0, 1), 45: (-1, 1), 90: (1, 0), 135: (1, 1)}


@dataclass(frozen=True)
class StructuringElement:
    """Binary neighborhood mask with its origin at the bounding-box center.

    Masks always have odd dimensions; constructors for even nominal sizes
    embed the set cells asymmetrically (offsets lean to the positive side)
    in the next odd bounding box.
    """

    mask: np.ndarray
    origin: tuple[int, int] = field(init=False)

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2D")
        if mask.shape[0] % 2 == 0 or mask.shape[1] % 2 == 0:
            raise ValueError(f"mask dimensions {mask.shape} must be odd")
        if not mask.any():
            raise ValueError("mask has no set cells")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin", (mask.shape[0] // 2, mask.shape[1] // 2))

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def offsets(self) -> np.ndarray:
        """Set-cell coordinates relative to the origin, shape (n, 2)."""
        rows, cols = np.nonzero(self.mask)
        return np.stack([rows - self.origin[0], cols - self.origin[1]], axis=1)


def _from_offsets(offsets) -> StructuringElement:
    offsets = np.atleast_2d(np.asarray(offsets, dtype=int))
    rh = int(np.abs(offsets[:, 0]).max())
    rw = int(np.abs(offsets[:, 1]).max())
    mask = np.zeros((2 * rh + 1, 2 * rw + 1), dtype=bool)
    mask[offsets[:, 0] + rh, offsets[:, 1] + rw] = True
    return StructuringElement(mask)


def _axis_offsets(n: int) -> range:
    # n consecutive offsets around 0; even n leans one cell positive
    return range(-((n - 1) // 2), n // 2 + 1)


def se_square(n: int) -> StructuringElement:
    """n x n all-set square."""
    if n < 1:
        raise ValueError(f"square size {n} must be >= 1")
    return _from_offsets([(r, c) for r in _axis_offsets(n) for c in _axis_offsets(n)])


def se_diamond(side: int) -> StructuringElement:
    """L1 ball of radius side // 2 (plus-shape for side 3)."""
    if side < 1:
        raise ValueError(f"diamond side {side} must be >= 1")
    r = side // 2
    return _from_offsets(
        [(dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1) if abs(dr) + abs(dc) <= r]
    )


def se_disk(size: int) -> StructuringElement:
    """Euclidean ball of radius size // 2."""
    if size < 1:
        raise ValueError(f"disk size {size} must be >= 1")
    r = size // 2
    return _from_offsets(
        [(dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1) if dr * dr + dc * dc <= r * r]
    )


def se_line(length: int, angle_degrees: int) -> StructuringElement:
    """Digital segment of `length` set pixels through the origin.

    Supported angles: 0 (horizontal), 45, 90 (vertical), 135.
    """
    if length < 1:
        raise ValueError(f"line length {length} must be >= 1")
    if angle_degrees not in _LINE_DIRECTIONS:
        raise ValueError(f"angle {angle_degrees} not in {sorted(_LINE_DIRECTIONS)}")
    dr, dc = _LINE_DIRECTIONS[angle_degrees]
    return _from_offsets([(t * dr, t * dc) for t in _axis_offsets(length)])


def reflect(se: StructuringElement) -> StructuringElement:
    """Point reflection through the origin (mask flipped on both axes)."""
    return StructuringElement(se.mask[::-1, ::-1])


def _windows(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    bh, bw = se.mask.shape
    if bh > f.shape[0] or bw > f.shape[1]:
        raise ValueError(f"structuring element {bh}x{bw} exceeds image {f.shape}")
    return sliding_window_view(f, (bh, bw))


def erode(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Valid-mode windowed minimum over the set cells."""
    rows, cols = np.nonzero(se.mask)
    return _windows(f, se)[:, :, rows, cols].min(axis=-1)


def dilate(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Valid-mode windowed maximum over the reflected set cells."""
    rows, cols = np.nonzero(se.mask[::-1, ::-1])
    return _windows(f, se)[:, :, rows, cols].max(axis=-1)


def opening(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Erosion then dilation; removes bright structures smaller than the SE."""
    return dilate(erode(f, se), se)


def closing(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Dilation then erosion; removes dark structures smaller than the SE."""
    return erode(dilate(f, se), se)


def white_top_hat(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Residue f - opening(f), cropped to the opening's geometry."""
    opened = opening(f, se)
    return center_crop(np.asarray(f, dtype=np.float64), *opened.shape) - opened


def black_top_hat(f: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Residue closing(f) - f, cropped to the closing's geometry."""
    closed = closing(f, se)
    return closed - center_crop(np.asarray(f, dtype=np.float64), *closed.shape)
