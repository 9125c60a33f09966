"""Line-oriented experiment config files: `section.key = value`.

One experiment per file; `#` starts a comment; arrays are comma lists.
Layer descriptors pack options colon-separated (pconv:k=11:p=+), with
pipe-separated sublists where a value is itself a list (p=-|+ for two
filters, in=input|2 for two input refs).  Relative paths are resolved
against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .datagen import TaskSpec
from .morphology import (StructuringElement, se_diamond, se_disk, se_line,
                         se_square)
from .network import LayerSpec, NetworkSpec
from .training import TrainConfig

__all__ = ["ConfigError", "IOConfig", "ExperimentConfig", "parse_config",
           "parse_se", "parse_layers"]


class ConfigError(ValueError):
    """Bad experiment config file."""


@dataclass
class IOConfig:
    inputs: list = field(default_factory=list)        # training images
    eval_inputs: list = field(default_factory=list)   # held-out images
    targets: list = field(default_factory=list)       # external targets (train)
    eval_targets: list = field(default_factory=list)  # external targets (eval)
    output: Path = Path("out")


@dataclass
class ExperimentConfig:
    task: TaskSpec
    network: NetworkSpec
    train: TrainConfig
    io: IOConfig
    baseline: list | None = None     # [(op name, SE), ...] applied in order
    seed: int = 0                    # master seed échoed into reports


_SE_MAKERS = {"square": se_square, "diamond": se_diamond, "disk": se_disk}


def parse_se(text: str) -> StructuringElement:
    parts = text.strip().split(":")
    name, args = parts[0], parts[1:]
    try:
        if name == "line":
            length, angle = int(args[0]), int(args[1])
            return se_line(length, angle)
        if name in _SE_MAKERS:
            return _SE_MAKERS[name](int(args[0]))
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad structuring element {text!r}: {exc}") from exc
    raise ConfigError(f"unknown structuring element kind {name!r}")


def _parse_p_entry(tok: str):
    if tok in ("+", "-"):
        return tok
    if tok == "auto":
        return None
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"bad p entry {tok!r}") from None


def _parse_ref(tok: str):
    if tok in ("input", "prev"):
        return tok
    try:
        return int(tok)
    except ValueError:
        raise ConfigError(f"bad input ref {tok!r}") from None


def parse_layers(text: str) -> NetworkSpec:
    layers = []
    for desc in (d.strip() for d in text.split(",")):
        if not desc:
            raise ConfigError("empty layer descriptor")
        fields = desc.split(":")
        kind = fields[0]
        kw = {}
        for f in fields[1:]:
            if "=" not in f:
                raise ConfigError(f"bad layer option {f!r} in {desc!r}")
            key, val = f.split("=", 1)
            kw[key] = val
        spec = LayerSpec(
            kind=kind,
            kernel_size=int(kw.get("k", 1)),
            n_filters=int(kw.get("n", 1)),
            activation=kw.get("act", "identity"),
            p_init=tuple(_parse_p_entry(t) for t in kw["p"].split("|")) if "p" in kw else (),
            inputs=tuple(_parse_ref(t) for t in kw["in"].split("|")) if "in" in kw else ("prev",),
        )
        layers.append(spec)
    return NetworkSpec(tuple(layers))


def _parse_noise(text: str) -> tuple:
    parts = text.split(":")
    if parts[0] == "none":
        return ("none",)
    if parts[0] in ("binomial", "salt_pepper", "gaussian"):
        try:
            return (parts[0], float(parts[1]))
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad noise spec {text!r}: {exc}") from exc
    raise ConfigError(f"unknown noise kind {parts[0]!r}")


def _parse_paths(value: str, base: Path) -> list:
    """Comma list of files and/or directories (directories expand to *.pgm)."""
    out = []
    for tok in (t.strip() for t in value.split(",")):
        if not tok:
            continue
        p = base / tok
        if p.is_dir():
            out.extend(sorted(p.glob("*.pgm")))
        else:
            out.append(p)
    return out


_TASK_KEYS = {"operator", "se", "se2", "op1", "op2", "noise", "seed"}
_TRAIN_KEYS = {"lr0", "decay_tau", "momentum", "max_samples", "alternate",
               "grad_clip", "eval_every", "patience", "seed", "update_w", "update_p"}
_IO_KEYS = {"inputs", "eval_inputs", "targets", "eval_targets", "output"}


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    base = path.parent
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{path}:{lineno}: key must be section.name")
        raw[key] = value

    def pop(key, default=None):
        return raw.pop(key, default)

    task_kw = {}
    if (v := pop("task.operator")) is None:
        raise ConfigError("task.operator is required")
    task_kw["operator"] = v
    if (v := pop("task.se")) is not None:
        task_kw["se"] = parse_se(v)
    if (v := pop("task.se2")) is not None:
        task_kw["se2"] = parse_se(v)
    if (v := pop("task.op1")) is not None:
        task_kw["op1"] = v
    if (v := pop("task.op2")) is not None:
        task_kw["op2"] = v
    if (v := pop("task.noise")) is not None:
        task_kw["noise"] = _parse_noise(v)
    master_seed = int(pop("task.seed", "0"))
    task_kw["seed"] = master_seed
    try:
        task = TaskSpec(**task_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if (v := pop("network.layers")) is None:
        raise ConfigError("network.layers is required")
    network = parse_layers(v)

    train_kw = {}
    for key in list(raw):
        if key.startswith("train."):
            name = key.split(".", 1)[1]
            if name not in _TRAIN_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            train_kw[name] = raw.pop(key)
    for name in ("lr0", "decay_tau", "momentum"):
        if name in train_kw:
            train_kw[name] = float(train_kw[name])
    for name in ("max_samples", "eval_every", "patience", "seed"):
        if name in train_kw:
            train_kw[name] = int(train_kw[name])
    for name in ("update_w", "update_p"):
        if name in train_kw:
            train_kw[name] = train_kw[name].lower() in ("1", "true", "yes")
    if "grad_clip" in train_kw:
        v = train_kw["grad_clip"]
        train_kw["grad_clip"] = None if v == "none" else float(v)
    if "alternate" in train_kw:
        v = train_kw.pop("alternate")
        if v == "off":
            train_kw["alternate_every"] = 0
        elif v.startswith("every_k_epochs:"):
            train_kw["alternate_every"] = int(v.split(":", 1)[1])
        else:
            raise ConfigError(f"bad train.alternate {v!r}")
    train_kw.setdefault("seed", master_seed)
    try:
        train = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    io = IOConfig()
    for name in _IO_KEYS:
        if (v := pop(f"io.{name}")) is not None:
            if name == "output":
                io.output = base / v
            else:
                setattr(io, name, _parse_paths(v, base))

    baseline = None
    if (v := pop("baseline.pipeline")) is not None:
        baseline = []
        if v.strip() != "identity":
            for step in (s.strip() for s in v.split(",")):
                op, _, se_text = step.partition(":")
                if op not in ("dilate", "erode", "open", "close"):
                    raise ConfigError(f"unknown baseline op {op!r}")
                if not se_text:
                    raise ConfigError(f"baseline step {step!r} needs a structuring element")
                baseline.append((op, parse_se(se_text)))

    if raw:
        raise ConfigError(f"unknown keys: {', '.join(sorted(raw))}")
    return ExperimentConfig(task=task, network=network, train=train, io=io,
                            baseline=baseline, seed=master_seed)
