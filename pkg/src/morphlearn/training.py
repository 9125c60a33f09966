"""Online stochastic gradient descent over (input, target) sample streams.

Parameters are updated sample by sample; the learning rate follows the
hyperbolic decay lr0 / (1 + t/tau).  For two-phase optimization the
trainer can alternate between updating only the kernels and only the
orders, switching every k epochs.  A held-out set is scored periodically
and the best parameter snapshot is retained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network as N

__all__ = [
    "TrainConfig",
    "SampleStream",
    "TrainReport",
    "TrainingDiverged",
    "lr_schedule",
    "evaluate",
    "train_online",
]


class TrainingDiverged(RuntimeError):
    """Loss became NaN; carries a short diagnostic of the network state."""


@dataclass
class TrainConfig:
    lr0: float = 0.01
    decay_tau: float = 1000.0
    momentum: float = 0.9
    max_samples: int = 1000
    alternate_every: int = 0      # 0 = joint updates; k = switch group every k epochs
    grad_clip: float | None = 1.0
    seed: int = 0
    eval_every: int = 50
    patience: int = 0             # 0 = no early stopping
    update_w: bool = True         # base freeze masks, overridden by alternation
    update_p: bool = True

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be >= 0")
        if self.decay_tau <= 0:
            raise ValueError("decay_tau must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class SampleStream:
    """Deterministic stream of training pairs plus a fixed held-out set.

    sample(t) must be a pure function of t (one RNG substream per sample
    index), so runs are reproducible regardless of interleaving.
    epoch_len is the nominal number of samples per pass over the data and
    drives the alternation schedule.
    """

    sample: callable
    epoch_len: int
    heldout: list = field(default_factory=list)


@dataclass
class TrainReport:
    curve: list              # rows (sample_index, train_loss, eval_mse, eval_psnr, lr)
    best_params: list
    best_eval: float
    final_params: list
    samples_run: int


def lr_schedule(lr0: float, decay_tau: float, t: int) -> float:
    """Hyperbolic decay: lr0 / (1 + t/tau)."""
    return lr0 / (1.0 + t / decay_tau)


def evaluate(net: N.Network, pairs) -> float:
    """Mean MSE over held-out pairs; does not mutate the network."""
    if not pairs:
        return math.nan
    total = 0.0
    for x, y in pairs:
        pred, _ = N.forward(net, x)
        total += float(np.mean((pred - y) ** 2))
    return total / len(pairs)


def _update_groups(t: int, epoch_len: int, alternate_every: int) -> tuple[bool, bool]:
    """(update_w, update_p) for sample t; even phases train w, odd train P."""
    if alternate_every <= 0:
        return True, True
    phase = (t // (alternate_every * epoch_len)) % 2
    return (True, False) if phase == 0 else (False, True)


def train_online(net: N.Network, stream: SampleStream, config: TrainConfig) -> TrainReport:
    """Run sample-by-sample SGD; returns the loss curve and best snapshot."""
    curve = []
    best_eval = math.inf
    best_params = net.snapshot()
    evals_since_best = 0
    run_loss = 0.0
    run_count = 0
    t = 0

    for t in range(config.max_samples):
        x, y = stream.sample(t)
        pred, caches = N.forward(net, x)
        loss, grads = N.backward(net, caches, y)
        if math.isnan(loss):
            raise TrainingDiverged(
                f"NaN loss at sample {t}; " + _diagnose(net, caches))
        if config.grad_clip is not None:
            grads, _ = N.clip_gradients(grads, config.grad_clip)
        lr = lr_schedule(config.lr0, config.decay_tau, t)
        update_w, update_p = _update_groups(t, stream.epoch_len, config.alternate_every)
        N.apply_update(net, grads, lr, config.momentum,
                       update_w=update_w and config.update_w,
                       update_p=update_p and config.update_p)
        run_loss += loss
        run_count += 1

        if config.eval_every > 0 and (t + 1) % config.eval_every == 0:
            eval_mse = evaluate(net, stream.heldout)
            eval_psnr = 10.0 * math.log10(1.0 / eval_mse) if eval_mse > 0 else math.inf
            curve.append((t + 1, run_loss / run_count, eval_mse, eval_psnr, lr))
            run_loss, run_count = 0.0, 0
            if not math.isnan(eval_mse) and eval_mse < best_eval:
                best_eval = eval_mse
                best_params = net.snapshot()
                evals_since_best = 0
            else:
                evals_since_best += 1
                if config.patience > 0 and evals_since_best >= config.patience:
                    break

    if math.isinf(best_eval):  # no evals ran; keep final parameters as best
        best_params = net.snapshot()
        best_eval = math.nan
    return TrainReport(curve, best_params, best_eval, net.snapshot(), t + 1)


def _diagnose(net: N.Network, caches) -> str:
    ps = []
    min_den = math.inf
    for idx, (ls, p) in enumerate(zip(net.spec.layers, net.params)):
        if ls.kind == "pconv":
            ps.extend(f"{fp.p:.3g}" for fp in p)
            for c in caches[1][idx]:
                min_den = min(min_den, float(c.den.min()))
    return f"last P values [{', '.join(ps)}], min denominator {min_den:.3g}"
