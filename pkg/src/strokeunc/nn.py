"""Small fixed-vocabulary neural network engine.

Supports exactly what the aggregation models need: dense, valid conv1d,
ReLU, inverted dropout, global max pooling, concatenation of parallel
pathways, and a two-way softmax head trained with binary cross-entropy
and Adam. Everything runs in float64 with an explicit leading batch axis.

A network is described by an immutable :class:`NetworkGraph`; parameters
live in a :class:`ParameterStore` keyed by ``"<block>.<layer>.<W|b>"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

LAYER_KINDS = ("dense", "conv1d", "relu", "dropout", "global_max_pool", "softmax", "concat")
MODES = ("train", "mc_inference", "deterministic")
PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    filters: int = 0
    kernel: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and self.units < 1:
            raise ValueError("dense layer needs units >= 1")
        if self.kind == "conv1d":
            if self.filters < 1:
                raise ValueError("conv1d needs filters >= 1")
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ValueError("conv1d kernel length must be odd and >= 1")
        if self.kind == "dropout" and not (0.0 <= self.rate < 1.0):
            raise ValueError("dropout rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "dense":
            d["units"] = self.units
        elif self.kind == "conv1d":
            d["filters"] = self.filters
            d["kernel"] = self.kernel
        elif self.kind == "dropout":
            d["rate"] = self.rate
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def conv1d(filters: int, kernel: int) -> LayerSpec:
    return LayerSpec("conv1d", filters=filters, kernel=kernel)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


RELU = LayerSpec("relu")
SOFTMAX = LayerSpec("softmax")
CONCAT = LayerSpec("concat")
GLOBAL_MAX_POOL = LayerSpec("global_max_pool")


@dataclass(frozen=True)
class NetworkGraph:
    """Layer stack with optional parallel pathways in front of it.

    ``input_shape`` is per sample. Sequence inputs use ``None`` for the
    length, e.g. ``(None, 5)``. With pathways, the input is ``(K, d)``:
    row ``k`` goes through pathway ``k`` (all pathways share weights when
    ``shared`` is set) and ``layers`` must start with a concat node.
    """

    input_shape: tuple
    layers: tuple[LayerSpec, ...]
    pathway: tuple[LayerSpec, ...] = ()
    shared: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "pathway", tuple(self.pathway))
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ValueError("network must end in a softmax layer")
        if sum(l.kind == "softmax" for l in self.layers + self.pathway) != 1:
            raise ValueError("network must contain exactly one softmax layer")
        if self.pathway:
            if len(self.input_shape) != 2 or self.input_shape[0] is None:
                raise ValueError("pathway networks need input_shape (K, d)")
            if self.layers[0].kind != "concat":
                raise ValueError("pathway outputs must feed a concat layer")
            if any(l.kind not in ("dense", "relu", "dropout") for l in self.pathway):
                raise ValueError("pathways may contain only dense, relu and dropout layers")
        elif any(l.kind == "concat" for l in self.layers):
            raise ValueError("concat layer requires parallel pathways")
        shapes = _infer_shapes(self)
        if shapes["out"] != (2,):
            raise ValueError(f"softmax output must have width 2, got {shapes['out']}")

    @property
    def n_pathways(self) -> int:
        return int(self.input_shape[0]) if self.pathway else 0

    @property
    def is_sequence(self) -> bool:
        return self.input_shape[0] is None

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "pathway": [l.to_dict() for l in self.pathway],
            "shared": self.shared,
            "layers": [l.to_dict() for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkGraph":
        return cls(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            pathway=tuple(LayerSpec.from_dict(l) for l in d.get("pathway", [])),
            shared=bool(d.get("shared", True)),
        )


def _walk(layers, shape, prefix, param_shapes, n_path=None):
    for i, layer in enumerate(layers):
        name = f"{prefix}.{i}"
        if layer.kind == "dense":
            if len(shape) != 1:
                raise ValueError(f"{name}: dense expects a flat input, got {shape}")
            W, b = (shape[0], layer.units), (layer.units,)
            if n_path is not None:
                W, b = (n_path,) + W, (n_path,) + b
            param_shapes[name + ".W"] = W
            param_shapes[name + ".b"] = b
            shape = (layer.units,)
        elif layer.kind == "conv1d":
            if len(shape) != 2:
                raise ValueError(f"{name}: conv1d expects (length, channels), got {shape}")
            param_shapes[name + ".W"] = (layer.kernel, shape[1], layer.filters)
            param_shapes[name + ".b"] = (layer.filters,)
            length = None if shape[0] is None else shape[0] - layer.kernel + 1
            if length is not None and length < 1:
                raise ValueError(f"{name}: sequence shorter than kernel")
            shape = (length, layer.filters)
        elif layer.kind == "global_max_pool":
            if len(shape) != 2:
                raise ValueError(f"{name}: global_max_pool expects (length, channels)")
            shape = (shape[1],)
        elif layer.kind == "softmax":
            if len(shape) != 1:
                raise ValueError(f"{name}: softmax expects a flat input")
    return shape


def _infer_shapes(net: NetworkGraph) -> dict:
    param_shapes: dict[str, tuple] = {}
    if net.pathway:
        K, d = net.input_shape
        h = _walk(net.pathway, (d,), "path", param_shapes, None if net.shared else K)
        shape = (K * h[0],)
        out = _walk(net.layers[1:], shape, "head", param_shapes)
        # keep head indices aligned with net.layers (concat is layer 0)
        param_shapes = {_shift_head(k): v for k, v in param_shapes.items()}
    else:
        out = _walk(net.layers, net.input_shape, "head", param_shapes)
    return {"params": param_shapes, "out": out}


def _shift_head(name: str) -> str:
    block, idx, leaf = name.split(".")
    if block != "head":
        return name
    return f"head.{int(idx) + 1}.{leaf}"


def parameter_shapes(net: NetworkGraph) -> dict[str, tuple]:
    return _infer_shapes(net)["params"]


def n_parameters(net: NetworkGraph) -> int:
    return sum(math.prod(s) for s in parameter_shapes(net).values())


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


@dataclass
class ParameterStore:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        for k, v in self.params.items():
            g = self.grads.get(k)
            if g is None or g.shape != v.shape:
                self.grads[k] = np.zeros_like(v)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self.params.items()})

    def n_values(self) -> int:
        return sum(v.size for v in self.params.values())

    def to_dict(self) -> dict:
        return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterStore":
        return cls(
            {k: np.array(e["data"], dtype=np.float64).reshape(e["shape"]) for k, e in d.items()}
        )


def init_params(net: NetworkGraph, rng: np.random.Generator) -> ParameterStore:
    """Glorot-uniform weights, zero biases, drawn in parameter-name order."""
    params = {}
    for name, shape in parameter_shapes(net).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        if len(shape) == 3 and name.startswith("head"):  # conv1d (k, C, F)
            k, c, f = shape
            fan_in, fan_out = k * c, k * f
        else:
            fan_in, fan_out = shape[-2], shape[-1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return ParameterStore(params)


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _dense_fwd(x, W, b):
    if W.ndim == 3:  # unshared pathways: x (B, K, in), W (K, in, out)
        return np.einsum("bki,kio->bko", x, W) + b
    return x @ W + b


def _dense_bwd(x, W, g):
    if W.ndim == 3:
        dW = np.einsum("bki,bko->kio", x, g)
        db = g.sum(axis=0)
        dx = np.einsum("bko,kio->bki", g, W)
        return dx, dW, db
    n_in, n_out = W.shape
    dW = x.reshape(-1, n_in).T @ g.reshape(-1, n_out)
    db = g.reshape(-1, n_out).sum(axis=0)
    dx = g @ W.T
    return dx, dW, db


def _run_block(layers, prefix, offset, x, params, mode, rng, cache):
    for i, layer in enumerate(layers):
        name = f"{prefix}.{i + offset}"
        kind = layer.kind
        entry = {"kind": kind, "name": name, "input": x}
        if kind == "dense":
            x = _dense_fwd(x, params[name + ".W"], params[name + ".b"])
        elif kind == "conv1d":
            if x.shape[1] < layer.kernel:
                raise ShapeError(f"sequence length {x.shape[1]} is shorter than kernel {layer.kernel}")
            x = _kernels.conv1d_forward(x, params[name + ".W"], params[name + ".b"])
        elif kind == "relu":
            x = np.maximum(x, 0.0)
        elif kind == "dropout":
            if mode != "deterministic" and layer.rate > 0.0:
                keep = rng.random(x.shape) >= layer.rate
                mask = keep / (1.0 - layer.rate)
                entry["mask"] = mask
                x = x * mask
        elif kind == "global_max_pool":
            arg = x.argmax(axis=1)
            entry["argmax"] = arg
            x = np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]
        elif kind == "concat":
            x = x.reshape(x.shape[0], -1)
        elif kind == "softmax":
            entry["logits"] = x
            x = softmax(x)
        cache.append(entry)
    return x


def _check_input(net: NetworkGraph, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    n_dims = len(net.input_shape)
    single = x.ndim == n_dims
    if single:
        x = x[None]
    if x.ndim != n_dims + 1:
        raise ShapeError(f"input has {x.ndim} axes, expected {n_dims} or {n_dims + 1}")
    for want, got in zip(net.input_shape, x.shape[1:]):
        if want is not None and want != got:
            raise ShapeError(f"input shape {x.shape[1:]} does not match {net.input_shape}")
    return x, single


def forward(net: NetworkGraph, params, x, mode: str = "deterministic", rng=None):
    """Run the network; returns ``(probs, cache)``.

    ``x`` is one sample (shape ``input_shape``) or a batch with a leading
    axis. In ``train`` and ``mc_inference`` modes dropout masks are drawn
    from ``rng`` and kept units are scaled by ``1/keep``; ``deterministic``
    mode applies no dropout and needs no rescaling.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if isinstance(params, ParameterStore):
        params = params.params
    if mode != "deterministic" and rng is None:
        raise ValueError(f"mode {mode!r} requires a random generator")
    x, single = _check_input(net, x)
    cache: list[dict] = []
    if net.pathway:
        x = _run_block(net.pathway, "path", 0, x, params, mode, rng, cache)
    probs = _run_block(net.layers, "head", 0, x, params, mode, rng, cache)
    state = {"entries": cache, "probs": probs, "single": single, "mode": mode}
    return (probs[0] if single else probs), state


def predict_proba(net, params, x) -> np.ndarray:
    return forward(net, params, x, "deterministic")[0]


def cross_entropy_loss(probs, label) -> float:
    """Mean binary cross-entropy; probabilities are floored at 1e-12."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    label = np.atleast_1d(np.asarray(label, dtype=np.int64))
    p_true = np.where(label == 1, probs[:, 1], probs[:, 0])
    return float(-np.log(np.clip(p_true, PROB_FLOOR, 1.0)).mean())


def backward(net: NetworkGraph, params, cache, labels) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean cross-entropy w.r.t. every parameter.

    Reuses the dropout masks stored in ``cache`` by :func:`forward`.
    """
    if cache is None or "entries" not in cache:
        raise ValueError("backward needs the cache returned by forward")
    if isinstance(params, ParameterStore):
        params = params.params
    probs = cache["probs"]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != probs.shape[0]:
        raise ShapeError("labels do not match the batch size")
    onehot = np.zeros_like(probs)
    onehot[np.arange(labels.size), labels] = 1.0
    g = (probs - onehot) / probs.shape[0]

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    for entry in reversed(cache["entries"]):
        kind = entry["kind"]
        x = entry["input"]
        name = entry["name"]
        if kind == "softmax":
            continue  # folded into the cross-entropy gradient above
        if kind == "dense":
            g, dW, db = _dense_bwd(x, params[name + ".W"], g)
            grads[name + ".W"] += dW
            grads[name + ".b"] += db
        elif kind == "conv1d":
            g, dW, db = _kernels.conv1d_backward(x, params[name + ".W"], g)
            grads[name + ".W"] += dW
            grads[name + ".b"] += db
        elif kind == "relu":
            g = g * (x > 0.0)
        elif kind == "dropout":
            if "mask" in entry:
                g = g * entry["mask"]
        elif kind == "global_max_pool":
            dx = np.zeros_like(x)
            np.put_along_axis(dx, entry["argmax"][:, None, :], g[:, None, :], axis=1)
            g = dx
        elif kind == "concat":
            g = g.reshape(x.shape)
    return grads


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state: AdamState, params: ParameterStore, grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, w in params.params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        w -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
