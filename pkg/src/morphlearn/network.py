"""Layer DAG assembly: specs, initialization, forward/backward, updates.

A network is an ordered list of layers; each layer references earlier
layers (or the token "input") and produces a list of maps.  PConv layers
apply one (w, P) filter per map path; Conv layers mix maps through a full
connection table; AbsDiff implements the short-circuit residue against an
earlier map; Average merges parallel pipelines.  The final layer must
yield a single map, scored with per-pixel MSE.

Only positivity-preserving sources (the input or other PConv outputs) may
feed a PConv layer, since its powers and logs require positive values.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .chm import KERNEL_FLOOR, P_LIMIT

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "Network",
    "NetworkSpecError",
    "build",
    "forward",
    "backward",
    "apply_update",
    "global_grad_norm",
    "clip_gradients",
    "save_params",
    "load_params",
]

_KINDS = ("pconv", "conv", "absdiff", "average")


class NetworkSpecError(ValueError):
    """Invalid layer graph or layer configuration."""


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    p_init entries (one per filter, pconv only) may be a float (pinned
    value), "+" or "-" (pinned sign, random magnitude) or None (random
    sign and magnitude).
    """

    kind: str
    kernel_size: int = 1
    n_filters: int = 1
    activation: str = "identity"
    p_init: tuple = ()
    inputs: tuple = ("prev",)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


def _resolve_inputs(spec: NetworkSpec) -> list[tuple]:
    """Replace "prev" tokens and validate the DAG ordering."""
    resolved = []
    for idx, ls in enumerate(spec.layers):
        refs = []
        for ref in ls.inputs:
            if ref == "prev":
                ref = "input" if idx == 0 else idx - 1
            if ref == "input":
                refs.append(ref)
                continue
            if not isinstance(ref, int):
                raise NetworkSpecError(f"layer {idx}: bad input ref {ref!r}")
            if not (0 <= ref < idx):
                raise NetworkSpecError(
                    f"layer {idx}: ref {ref} must point to an earlier layer")
            refs.append(ref)
        resolved.append(tuple(refs))
    return resolved


def _validate(spec: NetworkSpec):
    """Full spec validation; returns (resolved inputs, map counts, positive flags)."""
    if not spec.layers:
        raise NetworkSpecError("network has no layers")
    resolved = _resolve_inputs(spec)
    n_maps: list[int] = []
    positive: list[bool] = []

    def maps_of(ref):
        return 1 if ref == "input" else n_maps[ref]

    for idx, (ls, refs) in enumerate(zip(spec.layers, resolved)):
        if ls.kind not in _KINDS:
            raise NetworkSpecError(f"layer {idx}: unknown kind {ls.kind!r}")
        if ls.kind in ("pconv", "conv"):
            if len(refs) != 1:
                raise NetworkSpecError(f"layer {idx}: {ls.kind} takes exactly one input ref")
            if ls.kernel_size < 1 or ls.kernel_size % 2 == 0:
                raise NetworkSpecError(f"layer {idx}: kernel size {ls.kernel_size} must be odd")
            if ls.n_filters < 1:
                raise NetworkSpecError(f"layer {idx}: n_filters must be >= 1")
        if ls.kind == "pconv":
            src = refs[0]
            if not (src == "input" or positive[src]):
                raise NetworkSpecError(
                    f"layer {idx}: pconv requires a positivity-guaranteed source, "
                    f"got layer {src}")
            m = maps_of(src)
            if m not in (1, ls.n_filters):
                raise NetworkSpecError(
                    f"layer {idx}: pconv with {ls.n_filters} filters cannot take {m} maps")
            if ls.p_init and len(ls.p_init) != ls.n_filters:
                raise NetworkSpecError(f"layer {idx}: p_init must list one entry per filter")
            n_maps.append(ls.n_filters)
            positive.append(True)
        elif ls.kind == "conv":
            if ls.activation not in ("identity", "relu"):
                raise NetworkSpecError(f"layer {idx}: unknown activation {ls.activation!r}")
            n_maps.append(ls.n_filters)
            positive.append(False)
        elif ls.kind == "absdiff":
            if len(refs) != 2:
                raise NetworkSpecError(f"layer {idx}: absdiff takes exactly 2 input refs")
            if any(maps_of(r) != 1 for r in refs):
                raise NetworkSpecError(f"layer {idx}: absdiff operands must be single maps")
            n_maps.append(1)
            positive.append(False)
        else:  # average
            if not refs:
                raise NetworkSpecError(f"layer {idx}: average needs at least one input ref")
            n_maps.append(1)
            positive.append(False)
    if n_maps[-1] != 1:
        raise NetworkSpecError("final layer must produce exactly one map")
    return resolved, n_maps, positive


@dataclass
class Network:
    """Instantiated layers: parameters plus matching momentum buffers."""

    spec: NetworkSpec
    inputs: list[tuple]
    params: list
    velocity: list = field(default=None)

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = _zero_like_params(self.params)

    def output_margin(self) -> tuple[int, int]:
        """Total valid shrinkage (rows, cols) from input to prediction."""
        margins = []
        for ls, refs in zip(self.spec.layers, self.inputs):
            def m(ref):
                return (0, 0) if ref == "input" else margins[ref]
            if ls.kind in ("pconv", "conv"):
                mr, mc = m(refs[0])
                margins.append((mr + ls.kernel_size - 1, mc + ls.kernel_size - 1))
            elif ls.kind == "absdiff":
                (ar, ac), (br, bc) = m(refs[0]), m(refs[1])
                margins.append((max(ar, br), max(ac, bc)))
            else:
                margins.append(m(refs[0]))
        return margins[-1]

    def snapshot(self) -> list:
        return copy.deepcopy(self.params)

    def restore(self, snapshot: list):
        self.params = copy.deepcopy(snapshot)


def _zero_like_params(params):
    vel = []
    for p in params:
        if p is None:
            vel.append(None)
        elif isinstance(p, list):  # pconv filters
            vel.append([(np.zeros_like(f.w), 0.0) for f in p])
        else:  # ConvParams
            vel.append(([np.zeros_like(k) for k in p.kernels], np.zeros_like(p.biases)))
    return vel


def _draw_p(policy, rng) -> float:
    if isinstance(policy, (int, float)):
        p = float(policy)
        if abs(p) > P_LIMIT:
            raise NetworkSpecError(f"pinned P {p} exceeds limit {P_LIMIT}")
        return p
    mag = rng.uniform(0.5, 2.0)
    if policy == "+":
        return mag
    if policy == "-":
        return -mag
    if policy is None:
        return mag if rng.uniform() < 0.5 else -mag
    raise NetworkSpecError(f"bad p_init entry {policy!r}")


def build(spec: NetworkSpec, seed: int) -> Network:
    """Instantiate a network with deterministic seeded initialization.

    PConv kernels start near-flat (1/k^2 with +-10% jitter, floored);
    P starts away from the linear regime per its policy.  Conv kernels
    are uniform in [-a, a] with a = 1/(k sqrt(fan_in)); biases start at 0.
    """
    resolved, n_maps, _ = _validate(spec)
    rng = np.random.default_rng(seed)
    params = []
    for idx, (ls, refs) in enumerate(zip(spec.layers, resolved)):
        if ls.kind == "pconv":
            k = ls.kernel_size
            filters = []
            for j in range(ls.n_filters):
                w = rng.uniform(0.9, 1.1, (k, k)) / (k * k)
                w = np.maximum(w, KERNEL_FLOOR)
                policy = ls.p_init[j] if ls.p_init else None
                filters.append(L.PConvParams(w, _draw_p(policy, rng)))
            params.append(filters)
        elif ls.kind == "conv":
            src = refs[0]
            fan_in = 1 if src == "input" else n_maps[src]
            k = ls.kernel_size
            a = 1.0 / (k * np.sqrt(fan_in))
            kernels, table = [], []
            for i in range(fan_in):
                for j in range(ls.n_filters):
                    kernels.append(rng.uniform(-a, a, (k, k)))
                    table.append((i, j))
            params.append(L.ConvParams(kernels, table, np.zeros(ls.n_filters),
                                       ls.activation))
        else:
            params.append(None)
    return Network(spec, resolved, params)


def forward(net: Network, image: np.ndarray):
    """Topological-order evaluation; returns (prediction, per-layer caches)."""
    image = np.asarray(image, dtype=np.float64)
    outputs: list[list[np.ndarray]] = []
    caches = []

    def maps_of(ref):
        return [image] if ref == "input" else outputs[ref]

    for idx, (ls, refs) in enumerate(zip(net.spec.layers, net.inputs)):
        if ls.kind == "pconv":
            src_maps = maps_of(refs[0])
            outs, fcaches = [], []
            for j, fp in enumerate(net.params[idx]):
                src = src_maps[0] if len(src_maps) == 1 else src_maps[j]
                o, c = L.pconv_forward(src, fp)
                outs.append(o)
                fcaches.append(c)
            outputs.append(outs)
            caches.append(fcaches)
        elif ls.kind == "conv":
            outs, c = L.conv_forward(maps_of(refs[0]), net.params[idx])
            outputs.append(outs)
            caches.append(c)
        elif ls.kind == "absdiff":
            a = maps_of(refs[0])[0]
            b = maps_of(refs[1])[0]
            o, c = L.absdiff_forward(a, b)
            outputs.append([o])
            caches.append(c)
        else:  # average
            collected = [m for r in refs for m in maps_of(r)]
            o, n = L.average_forward(collected)
            outputs.append([o])
            caches.append(n)
    return outputs[-1][0], (outputs, caches)


def backward(net: Network, caches, target: np.ndarray):
    """MSE loss and gradients for every parameter; fan-out grads are summed.

    Returns (loss, grads) where grads mirrors net.params.
    """
    outputs, layer_caches = caches
    pred = outputs[-1][0]
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"target shape {target.shape} != prediction {pred.shape}")
    n = pred.size
    resid = pred - target
    loss = float(np.mean(resid * resid))

    out_grads: list = [None] * len(net.spec.layers)
    out_grads[-1] = [2.0 * resid / n]
    grads: list = [None] * len(net.spec.layers)

    def add_to(ref, which, g):
        if ref == "input":
            return
        if out_grads[ref] is None:
            out_grads[ref] = [np.zeros_like(m) for m in outputs[ref]]
        out_grads[ref][which] += g

    for idx in range(len(net.spec.layers) - 1, -1, -1):
        ls, refs = net.spec.layers[idx], net.inputs[idx]
        gouts = out_grads[idx]
        if gouts is None:
            gouts = [np.zeros_like(m) for m in outputs[idx]]
        if ls.kind == "pconv":
            src_count = 1 if refs[0] == "input" else len(outputs[refs[0]])
            fgrads = []
            for j, c in enumerate(layer_caches[idx]):
                gi, gw, gp = L.pconv_backward(c, gouts[j])
                fgrads.append((gw, gp))
                add_to(refs[0], 0 if src_count == 1 else j, gi)
            grads[idx] = fgrads
        elif ls.kind == "conv":
            gmaps, gk, gb = L.conv_backward(layer_caches[idx], gouts)
            grads[idx] = (gk, gb)
            src_count = 1 if refs[0] == "input" else len(outputs[refs[0]])
            for i, gm in enumerate(gmaps):
                add_to(refs[0], 0 if src_count == 1 else i, gm)
        elif ls.kind == "absdiff":
            ga, gb = L.absdiff_backward(layer_caches[idx], gouts[0])
            add_to(refs[0], 0, ga)
            add_to(refs[1], 0, gb)
            grads[idx] = None
        else:  # average
            parts = L.average_backward(layer_caches[idx], gouts[0])
            pos = 0
            for r in refs:
                count = 1 if r == "input" else len(outputs[r])
                for which in range(count):
                    add_to(r, which, parts[pos])
                    pos += 1
            grads[idx] = None
    return loss, grads


def global_grad_norm(grads) -> float:
    total = 0.0
    for g in grads:
        if g is None:
            continue
        if isinstance(g, list):
            for gw, gp in g:
                total += float(np.sum(gw * gw)) + gp * gp
        else:
            gk, gb = g
            total += sum(float(np.sum(k * k)) for k in gk) + float(np.sum(gb * gb))
    return float(np.sqrt(total))


def clip_gradients(grads, max_norm: float):
    """Scale all gradients so the global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    clipped = []
    for g in grads:
        if g is None:
            clipped.append(None)
        elif isinstance(g, list):
            clipped.append([(gw * scale, gp * scale) for gw, gp in g])
        else:
            gk, gb = g
            clipped.append(([k * scale for k in gk], gb * scale))
    assert global_grad_norm(clipped) <= max_norm * (1.0 + 1e-12)
    return clipped, norm


def apply_update(net: Network, grads, lr: float, momentum: float,
                 update_w: bool = True, update_p: bool = True):
    """Momentum SGD step with projections.

    Velocity v <- momentum*v - lr*grad, param += v, then PConv kernels are
    floored at KERNEL_FLOOR and P clamped to [-P_LIMIT, P_LIMIT].  Frozen
    groups (weights or orders) are left bitwise untouched, velocity
    included.
    """
    for idx, g in enumerate(grads):
        if g is None:
            continue
        p = net.params[idx]
        v = net.velocity[idx]
        if isinstance(g, list):  # pconv
            for j, (gw, gp) in enumerate(g):
                vw, vp = v[j]
                if update_w:
                    vw = momentum * vw - lr * gw
                    p[j].w = np.maximum(p[j].w + vw, KERNEL_FLOOR)
                if update_p:
                    vp = momentum * vp - lr * gp
                    p[j].p = float(np.clip(p[j].p + vp, -P_LIMIT, P_LIMIT))
                v[j] = (vw, vp)
        else:  # conv
            if not update_w:
                continue
            gk, gb = g
            vk, vb = v
            for e in range(len(p.kernels)):
                vk[e] = momentum * vk[e] - lr * gk[e]
                p.kernels[e] = p.kernels[e] + vk[e]
            vb[:] = momentum * vb - lr * gb
            p.biases = p.biases + vb
            net.velocity[idx] = (vk, vb)


def _fmt(x: float) -> str:
    return repr(float(x))


def _spec_line(ls: LayerSpec, refs: tuple) -> str:
    fields = [ls.kind, f"k={ls.kernel_size}", f"filters={ls.n_filters}",
              f"activation={ls.activation}"]
    if ls.p_init:
        fields.append("p_init=" + ",".join("auto" if e is None else str(e)
                                           for e in ls.p_init))
    fields.append("inputs=" + ",".join(str(r) for r in refs))
    return "layer " + " ".join(fields)


def save_params(net: Network, path) -> None:
    """Serialize spec echo and parameters as round-trip-exact decimal text."""
    lines = ["morphlearn-params v1", f"layers {len(net.spec.layers)}"]
    for ls, refs in zip(net.spec.layers, net.inputs):
        lines.append(_spec_line(ls, refs))
    lines.append("begin-params")
    for idx, (ls, p) in enumerate(zip(net.spec.layers, net.params)):
        if ls.kind == "pconv":
            for j, fp in enumerate(p):
                lines.append(f"pconv {idx} filter {j}")
                for row in fp.w:
                    lines.append(" ".join(_fmt(x) for x in row))
                lines.append(f"P {_fmt(fp.p)}")
        elif ls.kind == "conv":
            for (i, j), k in zip(p.table, p.kernels):
                lines.append(f"conv {idx} kernel {i} {j}")
                for row in k:
                    lines.append(" ".join(_fmt(x) for x in row))
            for j, b in enumerate(p.biases):
                lines.append(f"conv {idx} bias {j} {_fmt(b)}")
    lines.append("end-params")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_p_init(text: str):
    out = []
    for tok in text.split(","):
        if tok == "auto":
            out.append(None)
        elif tok in ("+", "-"):
            out.append(tok)
        else:
            out.append(float(tok))
    return tuple(out)


def load_params(path) -> Network:
    """Rebuild a network (spec and parameters) from a params file."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    try:
        if lines[0] != "morphlearn-params v1":
            raise ValueError(f"bad params header {lines[0]!r}")
        n_layers = int(lines[1].split()[1])
        specs = []
        for ln in lines[2 : 2 + n_layers]:
            parts = ln.split()
            if parts[0] != "layer":
                raise ValueError(f"expected layer line, got {ln!r}")
            kw = dict(part.split("=", 1) for part in parts[2:])
            inputs = tuple("input" if r == "input" else int(r)
                           for r in kw["inputs"].split(","))
            specs.append(LayerSpec(
                kind=parts[1],
                kernel_size=int(kw["k"]),
                n_filters=int(kw["filters"]),
                activation=kw["activation"],
                p_init=_parse_p_init(kw["p_init"]) if "p_init" in kw else (),
                inputs=inputs,
            ))
        if lines[2 + n_layers] != "begin-params":
            raise ValueError("missing begin-params")
    except (IndexError, KeyError) as exc:
        raise ValueError(f"truncated or malformed params file: {exc}") from exc

    spec = NetworkSpec(tuple(specs))
    net = build(spec, seed=0)
    pos = 3 + n_layers

    def take_rows(k):
        nonlocal pos
        rows = []
        for _ in range(k):
            rows.append([float(t) for t in lines[pos].split()])
            pos += 1
        arr = np.array(rows, dtype=np.float64)
        if arr.shape != (k, k):
            raise ValueError(f"kernel block has shape {arr.shape}, expected {(k, k)}")
        return arr

    try:
        for idx, ls in enumerate(spec.layers):
            if ls.kind == "pconv":
                for j in range(ls.n_filters):
                    if lines[pos] != f"pconv {idx} filter {j}":
                        raise ValueError(f"expected 'pconv {idx} filter {j}', got {lines[pos]!r}")
                    pos += 1
                    w = take_rows(ls.kernel_size)
                    if not lines[pos].startswith("P "):
                        raise ValueError(f"expected P line, got {lines[pos]!r}")
                    p = float(lines[pos].split()[1])
                    pos += 1
                    net.params[idx][j] = L.PConvParams(w, p)
            elif ls.kind == "conv":
                cp = net.params[idx]
                for e, (i, j) in enumerate(cp.table):
                    if lines[pos] != f"conv {idx} kernel {i} {j}":
                        raise ValueError(f"expected 'conv {idx} kernel {i} {j}', got {lines[pos]!r}")
                    pos += 1
                    cp.kernels[e] = take_rows(ls.kernel_size)
                for j in range(len(cp.biases)):
                    parts = lines[pos].split()
                    if parts[:3] != ["conv", str(idx), "bias"] or int(parts[3]) != j:
                        raise ValueError(f"expected 'conv {idx} bias {j}', got {lines[pos]!r}")
                    cp.biases[j] = float(parts[4])
                    pos += 1
        if lines[pos] != "end-params":
            raise ValueError("missing end-params")
    except IndexError:
        raise ValueError("truncated params file") from None
    net.velocity = _zero_like_params(net.params)
    return net
