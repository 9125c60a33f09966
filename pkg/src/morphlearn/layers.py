"""Differentiable layer primitives: PConv, Conv(+relu), AbsDiff, Average.

Each primitive comes as a forward function returning (output, cache) and a
backward function mapping (cache, upstream gradient) to input and parameter
gradients.  The PConv gradients are the exact chain rule through the ratio
h = N/D with N = corr(f^(P+1), w) and D = corr(f^P, w):

    dL/dw(b) = sum_x g(x) [f^(P+1)(x+b) D(x) - N(x) f^P(x+b)] / D(x)^2
    dL/dP    = sum_x g(x) [corr(f^(P+1) log f, w)(x) D(x)
                           - N(x) corr(f^P log f, w)(x)] / D(x)^2
    dL/df(y) = sum_{x in range} g(x) w(y-x)
               [(P+1) f^P(y) D(x) - P f^(P-1)(y) N(x)] / D(x)^2

Central finite differences are the correctness contract for every
backward in this module; see :func:`finite_diff_check`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chm import P_LIMIT, _chm_parts, conv2d_full, corr2d_valid, validate_kernel
from .imaging import center_crop

__all__ = [
    "PConvParams",
    "PConvCache",
    "ConvParams",
    "ConvCache",
    "pconv_forward",
    "pconv_backward",
    "conv_forward",
    "conv_backward",
    "absdiff_forward",
    "absdiff_backward",
    "average_forward",
    "average_backward",
    "GradCheckReport",
    "finite_diff_check",
]


@dataclass
class PConvParams:
    """One learnable CHM unit: positive kernel w and scalar order p."""

    w: np.ndarray
    p: float

    def __post_init__(self):
        self.w = validate_kernel(self.w)
        if abs(self.p) > P_LIMIT:
            raise ValueError(f"|P| = {abs(self.p)} exceeds limit {P_LIMIT}")


@dataclass
class PConvCache:
    """Forward intermediates retained for the backward pass."""

    f: np.ndarray
    logf: np.ndarray
    fp: np.ndarray
    fp1: np.ndarray
    num: np.ndarray
    den: np.ndarray
    out: np.ndarray
    w: np.ndarray
    p: float


def pconv_forward(f: np.ndarray, params: PConvParams) -> tuple[np.ndarray, PConvCache]:
    """CHM filter of f; identical code path to chm.chm_filter."""
    logf, fp, fp1, num, den, out = _chm_parts(f, params.w, params.p)
    cache = PConvCache(np.asarray(f, dtype=np.float64), logf, fp, fp1, num, den, out,
                       params.w, params.p)
    return out, cache


def pconv_backward(cache: PConvCache, grad_out: np.ndarray):
    """Gradients of the loss w.r.t. input, kernel and order.

    Returns (grad_in, grad_w, grad_p).
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.out.shape:
        raise ValueError(f"grad shape {g.shape} != output shape {cache.out.shape}")
    w, p = cache.w, cache.p
    g1 = g / cache.den                  # g / D
    g2 = g1 * cache.out                 # g N / D^2

    grad_w = corr2d_valid(cache.fp1, g1) - corr2d_valid(cache.fp, g2)

    dnum = corr2d_valid(cache.fp1 * cache.logf, w)
    dden = corr2d_valid(cache.fp * cache.logf, w)
    grad_p = float(np.sum(g1 * dnum - g2 * dden))

    grad_in = (p + 1.0) * cache.fp * conv2d_full(g1, w)
    grad_in -= p * (cache.fp / cache.f) * conv2d_full(g2, w)
    return grad_in, grad_w, grad_p


@dataclass
class ConvParams:
    """Linear valid-convolution bank with a connection table.

    kernels[e] filters maps[table[e][0]] into output map table[e][1];
    responses landing on the same output are summed, then the per-output
    bias is added and the activation applied.
    """

    kernels: list[np.ndarray]
    table: list[tuple[int, int]]
    biases: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ("identity", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.kernels) != len(self.table):
            raise ValueError("one kernel per connection-table entry required")
        for k in self.kernels:
            if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                raise ValueError(f"conv kernel must be 2D odd-sized, got {k.shape}")
        self.biases = np.asarray(self.biases, dtype=np.float64)

    @property
    def n_out(self) -> int:
        return len(self.biases)


@dataclass
class ConvCache:
    maps: list[np.ndarray]
    pre: list[np.ndarray]
    params: ConvParams


def conv_forward(maps: list[np.ndarray], params: ConvParams):
    """Valid convolution per table entry, summed per output, bias, activation."""
    n_in = len(maps)
    pre = None
    for (i, j), k in zip(params.table, params.kernels):
        if not (0 <= i < n_in) or not (0 <= j < params.n_out):
            raise ValueError(f"connection ({i}, {j}) out of range")
        r = corr2d_valid(maps[i], k)
        if pre is None:
            pre = [np.zeros_like(r) for _ in range(params.n_out)]
        if pre[j].shape != r.shape:
            raise ValueError("summed responses have inconsistent sizes")
        pre[j] += r
    pre = [pre[j] + params.biases[j] for j in range(params.n_out)]
    if params.activation == "relu":
        out = [np.maximum(z, 0.0) for z in pre]
    else:
        out = [z.copy() for z in pre]
    return out, ConvCache([np.asarray(m, dtype=np.float64) for m in maps], pre, params)


def conv_backward(cache: ConvCache, grad_outs: list[np.ndarray]):
    """Standard valid-convolution gradients; relu gates clamped positions.

    Returns (grad_maps, grad_kernels, grad_biases).
    """
    params = cache.params
    if len(grad_outs) != params.n_out:
        raise ValueError("one upstream gradient per output map required")
    gp = []
    for j, g in enumerate(grad_outs):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != cache.pre[j].shape:
            raise ValueError(f"grad shape {g.shape} != output shape {cache.pre[j].shape}")
        gp.append(g * (cache.pre[j] > 0.0) if params.activation == "relu" else g)

    grad_maps = [np.zeros_like(m) for m in cache.maps]
    grad_kernels = []
    for (i, j), k in zip(params.table, params.kernels):
        grad_kernels.append(corr2d_valid(cache.maps[i], gp[j]))
        grad_maps[i] += conv2d_full(gp[j], k)
    grad_biases = np.array([float(g.sum()) for g in gp])
    return grad_maps, grad_kernels, grad_biases


@dataclass
class AbsDiffCache:
    shape_a: tuple
    shape_b: tuple
    sign: np.ndarray


def absdiff_forward(a: np.ndarray, b: np.ndarray):
    """|a - b| after center-cropping the larger operand to the smaller."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    th = min(a.shape[0], b.shape[0])
    tw = min(a.shape[1], b.shape[1])
    ac = center_crop(a, th, tw)
    bc = center_crop(b, th, tw)
    diff = ac - bc
    sign = np.sign(diff)
    return np.abs(diff), AbsDiffCache(a.shape, b.shape, sign)


def _embed_center(g: np.ndarray, shape: tuple) -> np.ndarray:
    out = np.zeros(shape, dtype=np.float64)
    top = (shape[0] - g.shape[0]) // 2
    left = (shape[1] - g.shape[1]) // 2
    out[top : top + g.shape[0], left : left + g.shape[1]] = g
    return out


def absdiff_backward(cache: AbsDiffCache, grad_out: np.ndarray):
    """sign(a-b) routed back into each operand's geometry; ties get zero."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.sign.shape:
        raise ValueError(f"grad shape {g.shape} != output shape {cache.sign.shape}")
    ga = cache.sign * g
    return _embed_center(ga, cache.shape_a), _embed_center(-ga, cache.shape_b)


def average_forward(maps: list[np.ndarray]):
    """Pixelwise mean of equally shaped maps."""
    if not maps:
        raise ValueError("average needs at least one map")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ValueError("all maps must share one shape")
    return np.mean(maps, axis=0), len(maps)


def average_backward(n_maps: int, grad_out: np.ndarray) -> list[np.ndarray]:
    g = np.asarray(grad_out, dtype=np.float64) / n_maps
    return [g.copy() for _ in range(n_maps)]


@dataclass
class GradCheckReport:
    """Per-parameter-group finite-difference comparison."""

    max_rel_err: dict[str, float]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(v < self.tolerance for v in self.max_rel_err.values())


def finite_diff_check(loss_fn, arrays: dict[str, np.ndarray],
                      analytic: dict[str, np.ndarray],
                      h: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `loss_fn()` must recompute the scalar loss from the live contents of
    `arrays`, which are perturbed in place, one element at a time.  The
    relative error is |a - n| / max(1e-8, |a| + |n|), reported as the max
    over each group.
    """
    max_rel = {}
    for name, arr in arrays.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != arr.shape:
            raise ValueError(f"group {name}: analytic shape {a.shape} != {arr.shape}")
        flat = arr.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            numeric[i] = (lp - lm) / (2.0 * h)
        af = a.reshape(-1)
        rel = np.abs(af - numeric) / np.maximum(1e-8, np.abs(af) + np.abs(numeric))
        max_rel[name] = float(rel.max())
    return GradCheckReport(max_rel, tolerance)
