"""Counter-harmonic mean (Lehmer mean) filtering and its pseudo-morphology.

The order-P filter of a strictly positive image f with a positive kernel w
is the ratio of two windowed sums::

    chm(f, w, P)(x) = sum_b f(x+b)^(P+1) w(b)  /  sum_b f(x+b)^P w(b)

Every output is a weighted Lehmer mean of the window values, so it lies
between the window minimum and maximum and increases monotonically with P.
Large positive P approaches the windowed maximum (pseudo-dilation), large
negative P the minimum (pseudo-erosion), and P = 0 is a normalized linear
filter.  Composing -P then +P approximates an opening, +P then -P a
closing.

Kernel cells index the window directly (cell (u, v) weights the input
pixel (x+u, y+v)); for the symmetric flat kernels used in every oracle
comparison, the window sense is unobservable.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .morphology import StructuringElement, dilate

__all__ = [
    "KERNEL_FLOOR",
    "P_LIMIT",
    "corr2d_valid",
    "conv2d_full",
    "flat_kernel",
    "validate_kernel",
    "chm_filter",
    "pseudo_dilate_bound_check",
    "pseudo_open",
    "pseudo_close",
]

# Weights are floored at a tiny positive value so the denominator of the
# ratio can never vanish; |P| is capped because beyond ~20 the powers add
# nothing but conditioning loss.
KERNEL_FLOOR = 1e-6
P_LIMIT = 20.0


def corr2d_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode 2D cross-correlation (direct, exact)."""
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if kh > img.shape[0] or kw > img.shape[1]:
        raise ValueError(f"kernel {kernel.shape} exceeds image {img.shape}")
    windows = sliding_window_view(img, (kh, kw))
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def conv2d_full(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Full-mode 2D convolution (zero padded); grows by kernel size - 1."""
    kh, kw = kernel.shape
    padded = np.pad(np.asarray(img, dtype=np.float64), ((kh - 1, kh - 1), (kw - 1, kw - 1)))
    return corr2d_valid(padded, kernel[::-1, ::-1])


def flat_kernel(k: int) -> np.ndarray:
    """Constant k x k kernel of ones (the flat structuring element W)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size {k} must be odd and positive")
    return np.ones((k, k), dtype=np.float64)


def validate_kernel(w: np.ndarray) -> np.ndarray:
    """Check kernel invariants: 2D, odd dims, all weights >= KERNEL_FLOOR."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
        raise ValueError(f"kernel must be 2D with odd dimensions, got {w.shape}")
    if not np.all(w >= KERNEL_FLOOR):
        raise ValueError(f"kernel weights must be >= {KERNEL_FLOOR}")
    return w


def _chm_parts(f: np.ndarray, w: np.ndarray, p: float):
    """Forward pass with intermediates: (logf, fp, fp1, num, den, out).

    f^P is computed once as exp(P log f) and reused; f^(P+1) is the single
    extra multiply fp * f.
    """
    f = np.asarray(f, dtype=np.float64)
    if not np.all(f > 0.0):
        raise ValueError("image must be strictly positive")
    if abs(p) > P_LIMIT:
        raise ValueError(f"|P| = {abs(p)} exceeds limit {P_LIMIT}")
    w = validate_kernel(w)
    logf = np.log(f)
    fp = np.exp(p * logf)
    fp1 = fp * f
    den = corr2d_valid(fp, w)
    num = corr2d_valid(fp1, w)
    return logf, fp, fp1, num, den, num / den


def chm_filter(f: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    """Order-p counter-harmonic mean of f under kernel w, valid mode."""
    return _chm_parts(f, w, p)[5]


def pseudo_dilate_bound_check(f: np.ndarray, w: np.ndarray, p: float) -> float:
    """Sup-norm gap between the order-p filter and the exact flat dilation.

    Requires p > 0 and a flat kernel; the gap shrinks monotonically as p
    grows.
    """
    w = np.asarray(w, dtype=np.float64)
    if p <= 0:
        raise ValueError("bound check requires p > 0")
    if not np.all(w == w.flat[0]):
        raise ValueError("bound check requires a flat kernel")
    se = StructuringElement(np.ones(w.shape, dtype=bool))
    gap = chm_filter(f, w, p) - dilate(f, se)
    return float(np.abs(gap).max())


def pseudo_open(f: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    """Order -p then +p composition; approaches the opening as p grows."""
    if p <= 0:
        raise ValueError("p is a magnitude, must be > 0")
    return chm_filter(chm_filter(f, w, -p), w, p)


def pseudo_close(f: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    """Order +p then -p composition; approaches the closing as p grows."""
    if p <= 0:
        raise ValueError("p is a magnitude, must be > 0")
    return chm_filter(chm_filter(f, w, p), w, -p)
