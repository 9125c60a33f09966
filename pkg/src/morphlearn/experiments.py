"""Experiment runner: train per config, evaluate against oracle baselines,
emit artifacts (parameter files, kernel images, predictions, CSV curves
and reports), plus the built-in presets and the gradient-check suite.

Every run is fully determined by the config file: one master seed feeds
image synthesis, network initialization and the noise substreams, and all
emitted floats use shortest round-trip formatting, so re-running a preset
reproduces its report and parameter files byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network as N
from .chm import chm_filter
from .config import ExperimentConfig, parse_config
from .datagen import (DefectSpec, external_pairs, gen_eval_pairs, gen_pairs,
                      mse, psnr, substream, synth_defects)
from .imaging import center_crop, denormalize, load_pgm, normalize, save_pgm
from .layers import (ConvParams, PConvParams, absdiff_backward, absdiff_forward,
                     average_backward, average_forward, conv_backward,
                     conv_forward, finite_diff_check, pconv_backward,
                     pconv_forward)
from .morphology import closing, dilate, erode, opening
from .training import SampleStream, TrainReport, evaluate, train_online

__all__ = ["StageError", "ExperimentReport", "run", "eval_baseline",
           "apply_params", "gradcheck_suite", "PRESETS", "materialize_preset"]

_BASELINE_OPS = {"dilate": dilate, "erode": erode, "open": opening, "close": closing}

_CORPUS_NOTE = ("synthetic stand-in imagery from the built-in defect generator; "
                "the original corpus is not distributed")


class StageError(RuntimeError):
    """Failure tagged with the experiment stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass
class ExperimentReport:
    learned_p: list                    # (label, value)
    net_metrics: list                  # (label, mse, psnr) per held-out image
    baseline_metrics: list | None
    best_eval: float
    train_report: TrainReport
    out_dir: Path


def _fmt(x) -> str:
    return repr(float(x))


def _load_normalized(paths, stage: str):
    images = []
    for p in paths:
        try:
            images.append(normalize(load_pgm(p)))
        except (OSError, ValueError) as exc:
            raise StageError(stage, f"cannot load {p}: {exc}") from exc
    return images


def _build_streams(config: ExperimentConfig, margin):
    io = config.io
    if not io.inputs:
        raise StageError("data", "io.inputs lists no images")
    train_images = _load_normalized(io.inputs, "data")
    eval_paths = io.eval_inputs
    if eval_paths:
        eval_images = _load_normalized(eval_paths, "data")
    elif len(train_images) > 1:
        # hold out the last input when no explicit eval set is given
        eval_images = [train_images.pop()]
        eval_paths = [io.inputs[-1]]
    else:
        eval_images = list(train_images)
        eval_paths = list(io.inputs)

    try:
        if config.task.operator == "external_target":
            if not io.targets:
                raise StageError("data", "external_target task needs io.targets")
            targets = _load_normalized(io.targets, "data")
            eval_targets = _load_normalized(io.eval_targets, "data")
            if not eval_targets:
                raise StageError("data", "external_target task needs io.eval_targets")
            pairs = external_pairs(train_images, targets, margin)
            stream = SampleStream(sample=lambda t: pairs[t % len(pairs)],
                                  epoch_len=len(pairs))
            stream.heldout = external_pairs(eval_images, eval_targets, margin)
        else:
            stream = gen_pairs(train_images, config.task, margin)
            stream.heldout = gen_eval_pairs(eval_images, config.task, margin)
    except ValueError as exc:
        raise StageError("data", str(exc)) from exc
    return stream, eval_images, eval_paths


def eval_baseline(pairs, pipeline) -> list:
    """Apply an oracle op sequence to each input; MSE/PSNR on the aligned
    central region against the pair's target."""
    metrics = []
    for i, (x, y) in enumerate(pairs):
        out = x
        for op, se in pipeline:
            out = _BASELINE_OPS[op](out, se)
        h = min(out.shape[0], y.shape[0])
        w = min(out.shape[1], y.shape[1])
        m = mse(center_crop(out, h, w), center_crop(y, h, w))
        metrics.append((f"eval{i}", m, psnr(center_crop(out, h, w), center_crop(y, h, w))))
    return metrics


def _net_metrics(net, pairs, baseline_pipeline=None):
    """Per-pair prediction metrics; when a baseline is present both are
    scored on the identical cropped region."""
    crop_to = None
    if baseline_pipeline is not None:
        base_margin_r = sum(se.mask.shape[0] - 1 for _, se in baseline_pipeline)
        base_margin_c = sum(se.mask.shape[1] - 1 for _, se in baseline_pipeline)
        crop_to = (base_margin_r, base_margin_c)
    metrics = []
    base_pairs = []
    for i, (x, y) in enumerate(pairs):
        pred, _ = N.forward(net, x)
        if crop_to is not None:
            h = min(pred.shape[0], x.shape[0] - crop_to[0])
            w = min(pred.shape[1], x.shape[1] - crop_to[1])
            pred_c = center_crop(pred, h, w)
            y_c = center_crop(y, h, w)
            base_pairs.append((x, y_c))
        else:
            pred_c, y_c = pred, y
        metrics.append((f"eval{i}", mse(pred_c, y_c), psnr(pred_c, y_c)))
    baseline_metrics = eval_baseline(base_pairs, baseline_pipeline) if crop_to is not None else None
    return metrics, baseline_metrics


def _write_kernels(net, out_dir: Path):
    kdir = out_dir / "kernels"
    kdir.mkdir(parents=True, exist_ok=True)
    for idx, (ls, p) in enumerate(zip(net.spec.layers, net.params)):
        if ls.kind != "pconv":
            continue
        for j, fp in enumerate(p):
            stem = kdir / f"layer{idx}_f{j}"
            with open(f"{stem}_w.csv", "w") as fh:
                for row in fp.w:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
            for tag, arr in (("w", fp.w), ("logw", np.log(fp.w))):
                lo, hi = float(arr.min()), float(arr.max())
                scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo) * 255.0
                save_pgm(scaled, f"{stem}_{tag}.pgm",
                         comment=f"{tag} affine rescale: min={_fmt(lo)} max={_fmt(hi)}")


def _predict_and_save(net, images, names, pred_dir: Path):
    pred_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for img, name in zip(images, names):
        pred, _ = N.forward(net, img)
        path = pred_dir / f"{name}_pred.pgm"
        save_pgm(denormalize(pred), path)
        written.append(path)
    return written


def _learned_p(net) -> list:
    rows = []
    for idx, (ls, p) in enumerate(zip(net.spec.layers, net.params)):
        if ls.kind == "pconv":
            rows.extend((f"layer{idx}.filter{j}.P", fp.p) for j, fp in enumerate(p))
    return rows


def _write_report(path: Path, config_label: str, seed: int, report: ExperimentReport):
    lines = ["# morphlearn report",
             f"# config = {config_label}",
             f"# master_seed = {seed}",
             f"# corpus = {_CORPUS_NOTE}",
             "section,name,value"]
    for name, value in report.learned_p:
        lines.append(f"param,{name},{_fmt(value)}")
    lines.append(f"metric,net.best_eval.mse,{_fmt(report.best_eval)}")
    for label, m, p in report.net_metrics:
        lines.append(f"metric,net.{label}.mse,{_fmt(m)}")
        lines.append(f"metric,net.{label}.psnr,{_fmt(p)}")
    mean_mse = sum(m for _, m, _ in report.net_metrics) / len(report.net_metrics)
    lines.append(f"metric,net.mean.mse,{_fmt(mean_mse)}")
    if report.baseline_metrics is not None:
        for label, m, p in report.baseline_metrics:
            lines.append(f"metric,baseline.{label}.mse,{_fmt(m)}")
            lines.append(f"metric,baseline.{label}.psnr,{_fmt(p)}")
        mean_b = sum(m for _, m, _ in report.baseline_metrics) / len(report.baseline_metrics)
        lines.append(f"metric,baseline.mean.mse,{_fmt(mean_b)}")
    path.write_text("\n".join(lines) + "\n")


def _write_curves(path: Path, train_report: TrainReport):
    lines = ["sample_index,train_loss,eval_mse,eval_psnr,lr"]
    for t, loss, m, p, lr in train_report.curve:
        lines.append(f"{t},{_fmt(loss)},{_fmt(m)},{_fmt(p)},{_fmt(lr)}")
    path.write_text("\n".join(lines) + "\n")


def run(config: ExperimentConfig, config_label: str = "<in-memory>") -> ExperimentReport:
    """Train per config and emit every artifact under io.output."""
    try:
        net = N.build(config.network, seed=config.seed)
        margin = net.output_margin()
    except (N.NetworkSpecError, ValueError) as exc:
        raise StageError("build", str(exc)) from exc

    stream, eval_images, eval_paths = _build_streams(config, margin)

    try:
        train_report = train_online(net, stream, config.train)
    except (ValueError, RuntimeError) as exc:
        raise StageError("train", str(exc)) from exc

    try:
        out = config.io.output
        (out / "params").mkdir(parents=True, exist_ok=True)
        N.save_params(net, out / "params" / "final.params")
        best = N.Network(net.spec, net.inputs, train_report.best_params)
        N.save_params(best, out / "params" / "best.params")
        _write_kernels(best, out)
        _write_curves(out / "curves.csv", train_report)
        names = [Path(p).stem for p in eval_paths]
        eval_inputs = [x for x, _ in stream.heldout]
        _predict_and_save(best, eval_inputs, names, out / "pred")
    except OSError as exc:
        raise StageError("artifacts", str(exc)) from exc

    try:
        net_metrics, baseline_metrics = _net_metrics(best, stream.heldout, config.baseline)
    except ValueError as exc:
        raise StageError("eval", str(exc)) from exc

    report = ExperimentReport(
        learned_p=_learned_p(best),
        net_metrics=net_metrics,
        baseline_metrics=baseline_metrics,
        best_eval=train_report.best_eval,
        train_report=train_report,
        out_dir=out,
    )
    _write_report(out / "report.csv", config_label, config.seed, report)
    return report


def evaluate_params(config: ExperimentConfig, params_path) -> ExperimentReport:
    """Score an existing parameter file on the config's held-out set."""
    try:
        net = N.load_params(params_path)
    except (OSError, ValueError) as exc:
        raise StageError("params", str(exc)) from exc
    if net.spec != config.network:
        raise StageError("params", "params file spec does not match the config network")
    margin = net.output_margin()
    stream, _, _ = _build_streams(config, margin)
    try:
        net_metrics, baseline_metrics = _net_metrics(net, stream.heldout, config.baseline)
    except ValueError as exc:
        raise StageError("eval", str(exc)) from exc
    return ExperimentReport(
        learned_p=_learned_p(net),
        net_metrics=net_metrics,
        baseline_metrics=baseline_metrics,
        best_eval=evaluate(net, stream.heldout),
        train_report=TrainReport([], net.params, math.nan, net.params, 0),
        out_dir=config.io.output,
    )


def apply_params(params_path, image_paths, out_dir) -> list:
    """Inference-only entry point: forward each image, write prediction PGMs."""
    try:
        net = N.load_params(params_path)
    except (OSError, ValueError) as exc:
        raise StageError("params", str(exc)) from exc
    images = _load_normalized(image_paths, "data")
    names = [Path(p).stem for p in image_paths]
    try:
        return _predict_and_save(net, images, names, Path(out_dir))
    except (OSError, ValueError) as exc:
        raise StageError("apply", str(exc)) from exc


# ---------------------------------------------------------------------------
# gradient-check suite

P_CHECK_SET = (-10.0, -5.0, -1.0, -0.5, 0.0, 0.5, 1.0, 5.0, 10.0)


def gradcheck_suite(seeds_per_p: int = 3, h: float = 1e-5, tolerance: float = 1e-4):
    """Finite-difference verification of every layer backward.

    Returns (passed, lines): one result line per checked case.  PConv
    instances are drawn away from the value extremes, where the
    finite-difference oracle itself is accurate.
    """
    lines = []
    passed = True

    for p in P_CHECK_SET:
        for s in range(seeds_per_p):
            rng = np.random.default_rng(hash((p, s)) % 2**32)
            f = rng.uniform(0.3, 0.95, (8, 8))
            w = rng.uniform(0.05, 1.0, (3, 3))
            g = rng.standard_normal((6, 6))
            _, cache = pconv_forward(f, PConvParams(w.copy(), p))
            gi, gw, gp = pconv_backward(cache, g)

            def loss():
                out, _ = pconv_forward(f, PConvParams(w.copy(), float(arrays["P"][0])))
                return float(np.sum(g * out))

            arrays = {"input": f, "w": w, "P": np.array([p])}
            rep = finite_diff_check(loss, arrays,
                                    {"input": gi, "w": gw, "P": np.array([gp])},
                                    h=h, tolerance=tolerance)
            passed &= rep.passed
            worst = max(rep.max_rel_err.values())
            lines.append(f"pconv P={p:+.1f} seed={s}: max_rel_err={worst:.2e} "
                         f"{'ok' if rep.passed else 'FAIL'}")

    rng = np.random.default_rng(99)
    maps = [rng.standard_normal((7, 7)) for _ in range(2)]
    kernels = [rng.standard_normal((3, 3)) for _ in range(2)]
    biases = rng.standard_normal(1)
    gs = [rng.standard_normal((5, 5))]
    params = ConvParams([k.copy() for k in kernels], [(0, 0), (1, 0)], biases.copy(), "relu")
    _, cache = conv_forward(maps, params)
    gm, gk, gb = conv_backward(cache, gs)

    def conv_loss():
        outs, _ = conv_forward(maps, ConvParams([k.copy() for k in kernels],
                                                [(0, 0), (1, 0)], biases.copy(), "relu"))
        return float(np.sum(gs[0] * outs[0]))

    rep = finite_diff_check(conv_loss,
                            {"m0": maps[0], "m1": maps[1], "k0": kernels[0],
                             "k1": kernels[1], "b": biases},
                            {"m0": gm[0], "m1": gm[1], "k0": gk[0],
                             "k1": gk[1], "b": gb},
                            h=h, tolerance=1e-6)
    passed &= rep.passed
    lines.append(f"conv(relu): max_rel_err={max(rep.max_rel_err.values()):.2e} "
                 f"{'ok' if rep.passed else 'FAIL'}")

    a = rng.uniform(0.0, 1.0, (6, 6))
    b = rng.uniform(2.0, 3.0, (4, 4))  # well away from ties
    g = rng.standard_normal((4, 4))
    _, cache = absdiff_forward(a, b)
    ga, gb2 = absdiff_backward(cache, g)

    def abs_loss():
        out, _ = absdiff_forward(a, b)
        return float(np.sum(g * out))

    rep = finite_diff_check(abs_loss, {"a": a, "b": b}, {"a": ga, "b": gb2},
                            h=h, tolerance=1e-6)
    passed &= rep.passed
    lines.append(f"absdiff: max_rel_err={max(rep.max_rel_err.values()):.2e} "
                 f"{'ok' if rep.passed else 'FAIL'}")

    ms = [rng.standard_normal((4, 4)) for _ in range(3)]
    g = rng.standard_normal((4, 4))
    _, n = average_forward(ms)
    parts = average_backward(n, g)

    def avg_loss():
        out, _ = average_forward(ms)
        return float(np.sum(g * out))

    rep = finite_diff_check(avg_loss, {f"m{i}": m for i, m in enumerate(ms)},
                            {f"m{i}": p for i, p in enumerate(parts)},
                            h=h, tolerance=1e-6)
    passed &= rep.passed
    lines.append(f"average: max_rel_err={max(rep.max_rel_err.values()):.2e} "
                 f"{'ok' if rep.passed else 'FAIL'}")
    return passed, lines


# ---------------------------------------------------------------------------
# presets mirroring the experiment suite


@dataclass
class Preset:
    note: str
    data: list                      # (filename, width, height, DefectSpec)
    config: str
    extra: dict = field(default_factory=dict)
    tv_standins: bool = False


def _morpho_config(operator: str, se: str, p_chain: str, k: int, seed: int,
                   lr0: float = 0.3, max_samples: int = 1500, tau: int = 500) -> str:
    layers = ", ".join(f"pconv:k={k}:p={p}" for p in p_chain.split())
    return f"""task.operator = {operator}
task.se = {se}
task.seed = {seed}

network.layers = {layers}

train.lr0 = {lr0}
train.decay_tau = {tau}
train.momentum = 0.9
train.max_samples = {max_samples}
train.grad_clip = 1.0
train.eval_every = 50
train.patience = 12

io.inputs = data/train_00.pgm
io.eval_inputs = data/eval_00.pgm
io.output = out
"""


_SPOTTY = DefectSpec(n_spots=8, spot_radius=1.5)
_SPOTTY_LINES = DefectSpec(n_spots=5, spot_radius=1.5, n_lines=2, line_len=12,
                           orientation=90)


def _pair_data(spec: DefectSpec, size: int = 128):
    return [("train_00.pgm", size, size, spec), ("eval_00.pgm", size, size, spec)]


def _tophat_mcnn_config(seed: int) -> str:
    return f"""task.operator = white_top_hat
task.se = disk:5
task.seed = {seed}

network.layers = pconv:k=11:p=-, pconv:k=11:p=+, absdiff:in=input|1

train.lr0 = 0.3
train.decay_tau = 800
train.momentum = 0.9
train.max_samples = 2400
train.grad_clip = 1.0
train.eval_every = 100
train.patience = 12

io.inputs = data/train_00.pgm, data/train_01.pgm
io.eval_inputs = data/eval_00.pgm
io.output = out
"""


def _tophat_cnn_config(seed: int) -> str:
    return f"""task.operator = white_top_hat
task.se = disk:5
task.seed = {seed}

network.layers = conv:k=11:act=relu, conv:k=11:act=relu, absdiff:in=input|1

train.lr0 = 0.05
train.decay_tau = 800
train.momentum = 0.9
train.max_samples = 2400
train.grad_clip = 1.0
train.eval_every = 100
train.patience = 12

io.inputs = data/train_00.pgm, data/train_01.pgm
io.eval_inputs = data/eval_00.pgm
io.output = out_cnn
"""


def _denoise_config(noise: str, layers: str, baseline: str, seed: int,
                    max_samples: int = 4000) -> str:
    return f"""task.operator = identity
task.noise = {noise}
task.seed = {seed}

network.layers = {layers}

train.lr0 = 0.1
train.decay_tau = 1500
train.momentum = 0.9
train.max_samples = {max_samples}
train.grad_clip = 1.0
train.eval_every = 200
train.patience = 10

io.inputs = data/train_00.pgm, data/train_01.pgm, data/train_02.pgm
io.eval_inputs = data/eval_00.pgm, data/eval_01.pgm
io.output = out

baseline.pipeline = {baseline}
"""


PRESETS: dict[str, Preset] = {
    "dilate-square5": Preset(
        note="single 11x11 unit learning a square-5 dilation",
        data=_pair_data(_SPOTTY),
        config=_morpho_config("dilate", "square:5", "+", 11, seed=11),
    ),
    "dilate-diamond5": Preset(
        note="single 11x11 unit learning a diamond-5 dilation",
        data=_pair_data(_SPOTTY),
        config=_morpho_config("dilate", "diamond:5", "+", 11, seed=12),
    ),
    "dilate-line15-45": Preset(
        note="single 15x15 unit learning a 15px 45-degree line dilation",
        data=_pair_data(_SPOTTY),
        config=_morpho_config("dilate", "line:15:45", "+", 15, seed=13),
    ),
    "erode-square5": Preset(
        note="single 11x11 unit learning a square-5 erosion",
        data=_pair_data(_SPOTTY),
        config=_morpho_config("erode", "square:5", "-", 11, seed=14),
    ),
    "erode-diamond5": Preset(
        note="single 11x11 unit learning a diamond-5 erosion",
        data=_pair_data(_SPOTTY),
        config=_morpho_config("erode", "diamond:5", "-", 11, seed=15),
    ),
    "erode-line15-45": Preset(
        note="single 15x15 unit learning a 15px 45-degree line erosion",
        data=_pair_data(_SPOTTY),
        config=_morpho_config("erode", "line:15:45", "-", 15, seed=16),
    ),
    "open-square5": Preset(
        note="two-layer pipeline learning a square-5 opening",
        data=_pair_data(_SPOTTY),
        config=_morpho_config("open", "square:5", "- +", 11, seed=17,
                              lr0=0.3, max_samples=3000, tau=1000),
    ),
    "close-line10-45": Preset(
        note="two-layer pipeline learning a 10px 45-degree line closing",
        data=_pair_data(DefectSpec(n_spots=4, spot_radius=1.5, n_lines=2,
                                   line_len=8, orientation=135)),
        config=_morpho_config("close", "line:10:45", "+ -", 11, seed=18,
                              lr0=0.3, max_samples=3000, tau=1000),
    ),
    "tophat-disk5": Preset(
        note="white top-hat via short-circuit; config_cnn.txt swaps the "
             "PConv layers for Conv+relu at identical geometry",
        data=[("train_00.pgm", 96, 96, _SPOTTY), ("train_01.pgm", 96, 96, _SPOTTY),
              ("eval_00.pgm", 96, 96, _SPOTTY)],
        config=_tophat_mcnn_config(seed=19),
        extra={"config_cnn.txt": _tophat_cnn_config(seed=19)},
    ),
    "dual-tophat": Preset(
        note="two-filter pipeline learning disk-5 white + line-10 black "
             "top-hats jointly, mixed by a 1x1 conv",
        data=[("train_00.pgm", 96, 96, _SPOTTY_LINES),
              ("train_01.pgm", 96, 96, _SPOTTY_LINES),
              ("eval_00.pgm", 96, 96, _SPOTTY_LINES)],
        config="""task.operator = dual_top_hat
task.op1 = white_top_hat
task.se = disk:5
task.op2 = black_top_hat
task.se2 = line:10:0
task.seed = 20

network.layers = pconv:k=11:n=2:p=-|+, pconv:k=11:n=2:p=+|-, conv:k=1, absdiff:in=input|2

train.lr0 = 0.2
train.decay_tau = 1000
train.momentum = 0.9
train.max_samples = 3000
train.grad_clip = 1.0
train.eval_every = 100
train.patience = 12

io.inputs = data/train_00.pgm, data/train_01.pgm
io.eval_inputs = data/eval_00.pgm
io.output = out
""",
    ),
    "denoise-binomial": Preset(
        note="2-layer 5x5 pipeline vs close(square 2) on 10% binomial noise",
        data=[(f"train_{i:02d}.pgm", 64, 64, _SPOTTY) for i in range(3)]
             + [(f"eval_{i:02d}.pgm", 64, 64, _SPOTTY) for i in range(2)],
        config=_denoise_config("binomial:0.1", "pconv:k=5:p=+, pconv:k=5:p=-",
                               "close:square:2", seed=21),
    ),
    "denoise-saltpepper": Preset(
        note="4-layer 5x5 pipeline vs open(square 2) on close(square 2) "
             "for 10% salt-and-pepper noise",
        data=[(f"train_{i:02d}.pgm", 64, 64, _SPOTTY) for i in range(3)]
             + [(f"eval_{i:02d}.pgm", 64, 64, _SPOTTY) for i in range(2)],
        config=_denoise_config(
            "salt_pepper:0.1",
            "pconv:k=5:p=+, pconv:k=5:p=-, pconv:k=5:p=-, pconv:k=5:p=+",
            "close:square:2, open:square:2", seed=22, max_samples=6000),
    ),
    "tv-approx": Preset(
        note="two 2-filter pipelines plus averaging, fit to external target "
             "files (stand-in smoothed targets are generated; replace "
             "data/tv/*.pgm with real TV-restored images to reproduce the "
             "original task)",
        data=[(f"clean_{i:02d}.pgm", 64, 64, _SPOTTY) for i in range(3)],
        config="""task.operator = external_target
task.seed = 23

network.layers = pconv:k=5:n=2:p=+|-, pconv:k=5:n=2:p=-|+, average:in=1

train.lr0 = 0.1
train.decay_tau = 1500
train.momentum = 0.9
train.max_samples = 3000
train.grad_clip = 1.0
train.eval_every = 200
train.patience = 10

io.inputs = data/noisy/noisy_00.pgm, data/noisy/noisy_01.pgm
io.eval_inputs = data/noisy/noisy_02.pgm
io.targets = data/tv/tv_00.pgm, data/tv/tv_01.pgm
io.eval_targets = data/tv/tv_02.pgm
io.output = out
""",
        tv_standins=True,
    ),
}


def materialize_preset(name: str, out_dir) -> Path:
    """Write a preset's data and config file(s); returns the config path."""
    if name not in PRESETS:
        raise StageError("preset", f"unknown preset {name!r}; "
                                   f"known: {', '.join(sorted(PRESETS))}")
    preset = PRESETS[name]
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)

    # one synthesis substream per file index, keyed by the preset seed
    seed_line = [ln for ln in preset.config.splitlines() if ln.startswith("task.seed")]
    seed = int(seed_line[0].split("=")[1])
    images = []
    for i, (fname, w, h, spec) in enumerate(preset.data):
        img = synth_defects(w, h, spec, substream(seed, 2, i))
        save_pgm(denormalize(img), data_dir / fname)
        images.append(img)

    if preset.tv_standins:
        (data_dir / "noisy").mkdir(exist_ok=True)
        (data_dir / "tv").mkdir(exist_ok=True)
        from .datagen import gaussian_noise
        box = np.full((3, 3), 1.0 / 9.0)
        for i, img in enumerate(images):
            noisy = gaussian_noise(img, 0.06, substream(seed, 3, i))
            save_pgm(denormalize(noisy), data_dir / "noisy" / f"noisy_{i:02d}.pgm")
            # stand-in target: box-smoothed noisy frame (replace with real
            # TV-restored files for the original task)
            smooth = chm_filter(noisy, box, 0.0)
            save_pgm(denormalize(smooth), data_dir / "tv" / f"tv_{i:02d}.pgm")
        for fname, _, _, _ in preset.data:
            (data_dir / fname).unlink()  # only the noisy/tv pairs are inputs

    config_path = out_dir / "config.txt"
    config_path.write_text(f"# preset {name}: {preset.note}\n" + preset.config)
    for fname, text in preset.extra.items():
        (out_dir / fname).write_text(f"# preset {name} (variant): {preset.note}\n" + text)
    return config_path
