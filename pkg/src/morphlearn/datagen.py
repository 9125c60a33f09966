"""Training-pair generation: oracle targets, noise models, synthetic images.

Streams are reproducible by construction: every random draw comes from a
substream keyed by (seed, stream id, sample index), so sample t is the
same no matter how many samples were drawn before it.  Stream id 0 is
training noise, 1 is held-out noise, 2 is image synthesis.

All noise outputs stay inside the normalized dynamic range
[1/512, 511/512]; "switched-off" pixels take the minimum positive value,
never 0, so downstream powers and logs remain defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from .imaging import center_crop
from .morphology import (StructuringElement, black_top_hat, closing, dilate,
                         erode, opening, white_top_hat)
from .training import SampleStream

__all__ = [
    "DARK",
    "BRIGHT",
    "TaskSpec",
    "DefectSpec",
    "substream",
    "oracle_apply",
    "oracle_target",
    "gen_pairs",
    "gen_eval_pairs",
    "external_pairs",
    "external_pairs_stream",
    "binomial_noise",
    "salt_pepper_noise",
    "gaussian_noise",
    "apply_noise",
    "synth_defects",
    "mse",
    "psnr",
]

DARK = 1.0 / 512.0
BRIGHT = 511.0 / 512.0

_ORACLES = {
    "dilate": dilate,
    "erode": erode,
    "open": opening,
    "close": closing,
    "white_top_hat": white_top_hat,
    "black_top_hat": black_top_hat,
}


def substream(seed: int, stream_id: int, index: int) -> np.random.Generator:
    """Independent generator for one (stream, index) slot."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream_id, index]))


@dataclass
class TaskSpec:
    """What to learn: oracle operator(s), SE(s), input-side noise, seed.

    operator "identity" targets the clean image itself (denoising);
    "dual_top_hat" sums two residues given by (op1, se) and (op2, se2);
    "external_target" takes paired files, handled by the caller.
    """

    operator: str
    se: StructuringElement | None = None
    op1: str = "white_top_hat"
    op2: str = "black_top_hat"
    se2: StructuringElement | None = None
    noise: tuple = ("none",)
    seed: int = 0

    def __post_init__(self):
        known = set(_ORACLES) | {"identity", "dual_top_hat", "external_target"}
        if self.operator not in known:
            raise ValueError(f"unknown operator {self.operator!r}")
        kind = self.noise[0]
        if kind not in ("none", "binomial", "salt_pepper", "gaussian"):
            raise ValueError(f"unknown noise {kind!r}")
        if kind in ("binomial", "salt_pepper") and not (0.0 <= self.noise[1] <= 1.0):
            raise ValueError("noise probability must be in [0, 1]")
        if kind == "gaussian" and self.noise[1] < 0:
            raise ValueError("noise sigma must be >= 0")
        if kind != "none" and self.operator not in ("identity", "external_target"):
            raise ValueError("noise tasks target the clean image: use operator 'identity'")


def oracle_apply(operator: str, se: StructuringElement | None, f: np.ndarray) -> np.ndarray:
    if operator == "identity":
        return np.asarray(f, dtype=np.float64).copy()
    return _ORACLES[operator](f, se)


def oracle_target(f: np.ndarray, task: TaskSpec) -> np.ndarray:
    """Full-geometry target for one clean image."""
    if task.operator == "dual_top_hat":
        t1 = oracle_apply(task.op1, task.se, f)
        t2 = oracle_apply(task.op2, task.se2, f)
        h = min(t1.shape[0], t2.shape[0])
        w = min(t1.shape[1], t2.shape[1])
        return center_crop(t1, h, w) + center_crop(t2, h, w)
    if task.operator == "external_target":
        raise ValueError("external targets come from files, not the oracle")
    return oracle_apply(task.operator, task.se, f)


def binomial_noise(f: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Switch each pixel off (to the minimum positive value) with prob p."""
    f = np.asarray(f, dtype=np.float64)
    return np.where(rng.uniform(size=f.shape) < p, DARK, f)


def salt_pepper_noise(f: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each pixel with prob p by an extreme value, salt or pepper 50/50."""
    f = np.asarray(f, dtype=np.float64)
    corrupted = rng.uniform(size=f.shape) < p
    salt = rng.uniform(size=f.shape) < 0.5
    return np.where(corrupted, np.where(salt, BRIGHT, DARK), f)


def gaussian_noise(f: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Additive N(0, sigma^2), clamped back into the positive range."""
    f = np.asarray(f, dtype=np.float64)
    return np.clip(f + sigma * rng.standard_normal(f.shape), DARK, BRIGHT)


def apply_noise(f: np.ndarray, noise: tuple, rng: np.random.Generator) -> np.ndarray:
    kind = noise[0]
    if kind == "none":
        return np.asarray(f, dtype=np.float64).copy()
    if kind == "binomial":
        return binomial_noise(f, noise[1], rng)
    if kind == "salt_pepper":
        return salt_pepper_noise(f, noise[1], rng)
    return gaussian_noise(f, noise[1], rng)


def _cropped_targets(images, task: TaskSpec, net_margin: tuple[int, int]):
    mr, mc = net_margin
    targets = []
    for f in images:
        h, w = f.shape
        if h <= mr or w <= mc:
            raise ValueError(f"image {h}x{w} smaller than network margin ({mr}, {mc})")
        t = oracle_target(f, task)
        if t.shape[0] < h - mr or t.shape[1] < w - mc:
            raise ValueError(
                f"oracle target {t.shape} smaller than network output "
                f"({h - mr}, {w - mc}); enlarge the network kernels")
        targets.append(center_crop(t, h - mr, w - mc))
    return targets


def gen_pairs(images, task: TaskSpec, net_margin: tuple[int, int]) -> SampleStream:
    """Training stream of (input, target) pairs at the network's geometry.

    Noise-free tasks cycle the fixed pairs; noise tasks redraw the input
    corruption per sample index, so the stream is effectively infinite.
    """
    images = [np.asarray(f, dtype=np.float64) for f in images]
    targets = _cropped_targets(images, task, net_margin)
    n = len(images)
    noisy = task.noise[0] != "none"

    def sample(t: int):
        i = t % n
        if not noisy:
            return images[i], targets[i]
        return apply_noise(images[i], task.noise, substream(task.seed, 0, t)), targets[i]

    return SampleStream(sample=sample, epoch_len=n)


def gen_eval_pairs(images, task: TaskSpec, net_margin: tuple[int, int]) -> list:
    """Fixed held-out pairs; noise drawn once from the held-out substream."""
    images = [np.asarray(f, dtype=np.float64) for f in images]
    targets = _cropped_targets(images, task, net_margin)
    pairs = []
    for i, (f, t) in enumerate(zip(images, targets)):
        if task.noise[0] != "none":
            f = apply_noise(f, task.noise, substream(task.seed, 1, i))
        pairs.append((f, t))
    return pairs


def external_pairs(inputs, targets, net_margin: tuple[int, int]) -> list:
    """Pairs from externally supplied images, targets cropped to geometry."""
    if len(inputs) != len(targets) or not inputs:
        raise ValueError("need equally many input and target images")
    mr, mc = net_margin
    pairs = []
    for f, t in zip(inputs, targets):
        f = np.asarray(f, dtype=np.float64)
        pairs.append((f, center_crop(np.asarray(t, dtype=np.float64),
                                     f.shape[0] - mr, f.shape[1] - mc)))
    return pairs


def external_pairs_stream(inputs, targets, net_margin: tuple[int, int]) -> SampleStream:
    """Stream over externally supplied (input, target) image pairs."""
    pairs = external_pairs(inputs, targets, net_margin)
    return SampleStream(sample=lambda t: pairs[t % len(pairs)], epoch_len=len(pairs))


@dataclass
class DefectSpec:
    """Synthetic inspection image: smooth textured background plus
    flat bright spots and thin dark line segments."""

    n_spots: int = 0
    spot_radius: float = 1.5
    n_lines: int = 0
    line_len: int = 12
    orientation: int = 90   # degrees; 90 = vertical line

    def __post_init__(self):
        if self.orientation not in (0, 45, 90, 135):
            raise ValueError(f"orientation {self.orientation} not in (0, 45, 90, 135)")


_DIRS = {0: (0, 1), 45: (-1, 1), 90: (1, 0), 135: (1, 1)}


def _smooth_field(h: int, w: int, cell: int, rng: np.random.Generator) -> np.ndarray:
    """Bilinear interpolation of a coarse uniform [-1, 1] grid."""
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.uniform(-1.0, 1.0, (gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x0 + 1] * fx
    bot = grid[y0 + 1][:, x0] * (1 - fx) + grid[y0 + 1][:, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def synth_defects(width: int, height: int, spec: DefectSpec,
                  rng: np.random.Generator) -> np.ndarray:
    """Normalized synthetic defect image, deterministic per generator state."""
    h, w = height, width
    img = 0.5 + 0.10 * _smooth_field(h, w, 8, rng) + 0.005 * rng.uniform(-1, 1, (h, w))

    # defects stay clear of the borders: valid-mode operators shrink the
    # image, and a defect outside the surviving window is unlearnable
    rmax = int(math.ceil(spec.spot_radius))
    m = rmax + 2 + min(h, w) // 6
    for _ in range(spec.n_spots):
        cy = int(rng.integers(m, h - m))
        cx = int(rng.integers(m, w - m))
        r = rng.uniform(1.0, spec.spot_radius) if spec.spot_radius > 1.0 else spec.spot_radius
        ri = int(math.ceil(r))
        value = rng.uniform(0.85, 0.95)
        dy, dx = np.ogrid[-ri : ri + 1, -ri : ri + 1]
        mask = dy * dy + dx * dx <= r * r
        patch = img[cy - ri : cy + ri + 1, cx - ri : cx + ri + 1]
        patch[mask] = value

    dr, dc = _DIRS[spec.orientation]
    m = spec.line_len // 2 + 1 + min(h, w) // 6
    for _ in range(spec.n_lines):
        cy = int(rng.integers(m, h - m))
        cx = int(rng.integers(m, w - m))
        value = rng.uniform(0.06, 0.12)
        for t in range(-((spec.line_len - 1) // 2), spec.line_len // 2 + 1):
            img[cy + t * dr, cx + t * dc] = value
    return np.clip(img, DARK, BRIGHT)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) dB for unit dynamic range; +inf when identical."""
    m = mse(a, b)
    return math.inf if m == 0.0 else 10.0 * math.log10(1.0 / m)
