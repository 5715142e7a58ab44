"""A small 1D CNN with hand-written backprop.

The layer vocabulary is fixed (Conv1D, ReLU, MaxPool, GlobalAveragePool,
Dense) so gradients with respect to both the parameters and the input are
computed in closed form.  Everything is float64.

Activations inside the network have shape ``(batch, channels, length)``
until a GlobalAveragePool or Dense layer flattens them to
``(batch, features)``.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from smoothadv.data import N_CLASSES, Dataset, RhythmClass, fit_length

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Layer shapes do not chain, or an input does not fit the model."""


class TrainingError(RuntimeError):
    pass


class IntegrityError(ValueError):
    """A weights file is truncated or corrupted."""


class UnsupportedVersionError(ValueError):
    pass


# -- layer vocabulary --------------------------------------------------------


@dataclass(frozen=True)
class Conv1D:
    out_channels: int
    kernel_size: int
    stride: int = 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    width: int


@dataclass(frozen=True)
class GlobalAveragePool:
    pass


@dataclass(frozen=True)
class Dense:
    out_features: int


Layer = Union[Conv1D, ReLU, MaxPool, GlobalAveragePool, Dense]
_LAYER_TYPES = {cls.__name__: cls for cls in (Conv1D, ReLU, MaxPool, GlobalAveragePool, Dense)}


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_length: int
    n_classes: int = N_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()  # validate eagerly

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-example activation shape before the first layer and after each layer."""
        if self.n_classes != N_CLASSES:
            raise ConfigurationError(f"n_classes must be {N_CLASSES}, got {self.n_classes}")
        if self.input_length < 1:
            raise ConfigurationError("input_length must be positive")
        shape: tuple[int, ...] = (1, self.input_length)
        out = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv1D):
                if len(shape) != 2:
                    raise ConfigurationError(f"layer {i}: Conv1D needs a (channels, length) input, got {shape}")
                if min(layer.out_channels, layer.kernel_size, layer.stride) < 1:
                    raise ConfigurationError(f"layer {i}: Conv1D arguments must be positive")
                c, n = shape
                if n < layer.kernel_size:
                    raise ConfigurationError(
                        f"layer {i}: length {n} is shorter than kernel {layer.kernel_size}"
                    )
                shape = (layer.out_channels, (n - layer.kernel_size) // layer.stride + 1)
            elif isinstance(layer, MaxPool):
                if len(shape) != 2:
                    raise ConfigurationError(f"layer {i}: MaxPool needs a (channels, length) input")
                if layer.width < 1 or shape[1] < layer.width:
                    raise ConfigurationError(f"layer {i}: bad pool width {layer.width} for length {shape[1]}")
                shape = (shape[0], shape[1] // layer.width)
            elif isinstance(layer, GlobalAveragePool):
                if len(shape) != 2:
                    raise ConfigurationError(f"layer {i}: GlobalAveragePool needs a (channels, length) input")
                shape = (shape[0],)
            elif isinstance(layer, Dense):
                if layer.out_features < 1:
                    raise ConfigurationError(f"layer {i}: Dense needs out_features >= 1")
                shape = (layer.out_features,)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise ConfigurationError(f"layer {i}: unknown layer {layer!r}")
            out.append(shape)
        if out[-1] != (self.n_classes,):
            raise ConfigurationError(f"final activation must be ({self.n_classes},) logits, got {out[-1]}")
        return out

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"type": type(layer).__name__}
            d.update(layer.__dict__)
            layers.append(d)
        return {"input_length": self.input_length, "n_classes": self.n_classes, "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = []
        for item in d["layers"]:
            item = dict(item)
            kind = item.pop("type")
            if kind not in _LAYER_TYPES:
                raise ConfigurationError(f"unknown layer type {kind!r}")
            layers.append(_LAYER_TYPES[kind](**item))
        return cls(tuple(layers), int(d["input_length"]), int(d.get("n_classes", N_CLASSES)))


def default_spec(input_length: int = 512) -> ModelSpec:
    layers: list = []
    for ch in (8, 16, 32, 32):
        layers += [Conv1D(ch, 7, 2), ReLU()]
    layers += [GlobalAveragePool(), Dense(N_CLASSES)]
    return ModelSpec(tuple(layers), input_length)


# -- parameters --------------------------------------------------------------

# {layer_index: {"weight": array, "bias": array}} for Conv1D and Dense layers
ModelParams = dict


def param_shapes(spec: ModelSpec) -> dict[int, dict[str, tuple[int, ...]]]:
    shapes = spec.shapes()
    out = {}
    for i, layer in enumerate(spec.layers):
        in_shape = shapes[i]
        if isinstance(layer, Conv1D):
            out[i] = {"weight": (layer.out_channels, in_shape[0], layer.kernel_size), "bias": (layer.out_channels,)}
        elif isinstance(layer, Dense):
            fan_in = int(np.prod(in_shape))
            out[i] = {"weight": (layer.out_features, fan_in), "bias": (layer.out_features,)}
    return out


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, shp in param_shapes(spec).items():
        w_shape = shp["weight"]
        if len(w_shape) == 3:
            fan_in, fan_out = w_shape[1] * w_shape[2], w_shape[0] * w_shape[2]
        else:
            fan_in, fan_out = w_shape[1], w_shape[0]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[i] = {
            "weight": rng.uniform(-limit, limit, size=w_shape),
            "bias": np.zeros(shp["bias"]),
        }
    return params


def zeros_like_params(params: ModelParams) -> ModelParams:
    return {i: {k: np.zeros_like(v) for k, v in p.items()} for i, p in params.items()}


def copy_params(params: ModelParams) -> ModelParams:
    return {i: {k: v.copy() for k, v in p.items()} for i, p in params.items()}


def check_params(spec: ModelSpec, params: ModelParams) -> None:
    expected = param_shapes(spec)
    if set(expected) != set(params):
        raise ConfigurationError(f"parameter layers {sorted(params)} do not match spec {sorted(expected)}")
    for i, shp in expected.items():
        for name, s in shp.items():
            got = np.shape(params[i].get(name))
            if got != s:
                raise ConfigurationError(f"layer {i} {name}: expected shape {s}, got {got}")


# -- forward / backward ------------------------------------------------------


@dataclass
class ForwardTrace:
    """Inputs (and routing info) cached per layer for the backward pass."""

    inputs: list = field(default_factory=list)
    aux: list = field(default_factory=list)
    batched: bool = True


def _as_batch(x, spec: ModelSpec) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2:
        raise ConfigurationError(f"expected a signal or a (batch, length) array, got shape {x.shape}")
    if x.shape[1] != spec.input_length:
        x = fit_length(x, spec.input_length)
    return x, single


def _im2col(h: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(B, C, L) -> (B, Lout, C*k) patches, channel-major within a patch."""
    win = sliding_window_view(h, k, axis=2)[:, :, ::stride, :]
    b, c, n_out, _ = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, n_out, c * k)


def forward(spec: ModelSpec, params: ModelParams, x) -> tuple[np.ndarray, ForwardTrace]:
    """Logits for one signal ``(L,)`` -> ``(4,)`` or a batch ``(B, L)`` -> ``(B, 4)``.

    Signals whose length differs from ``spec.input_length`` are zero-padded
    or truncated at the tail.
    """
    h, single = _as_batch(x, spec)
    h = h[:, None, :]
    trace = ForwardTrace(batched=not single)
    for i, layer in enumerate(spec.layers):
        trace.inputs.append(h)
        aux = None
        if isinstance(layer, Conv1D):
            p = params[i]
            cols = _im2col(h, layer.kernel_size, layer.stride)
            w = p["weight"].reshape(p["weight"].shape[0], -1)
            # stacked matmul runs one GEMM per example, so batch rows match single calls bitwise
            h = (cols @ w.T).transpose(0, 2, 1) + p["bias"][None, :, None]
        elif isinstance(layer, ReLU):
            h = np.where(h > 0, h, 0.0)
        elif isinstance(layer, MaxPool):
            b, c, n = h.shape
            n_out = n // layer.width
            blocks = h[:, :, : n_out * layer.width].reshape(b, c, n_out, layer.width)
            aux = np.argmax(blocks, axis=3)  # first index wins ties
            h = np.take_along_axis(blocks, aux[..., None], axis=3)[..., 0]
        elif isinstance(layer, GlobalAveragePool):
            h = h.mean(axis=2)
        elif isinstance(layer, Dense):
            p = params[i]
            h = (h.reshape(h.shape[0], 1, -1) @ p["weight"].T)[:, 0, :] + p["bias"]
        trace.aux.append(aux)
    if single:
        h = h[0]
    return h, trace


def _backward(spec: ModelSpec, params: ModelParams, trace: ForwardTrace, dlogits: np.ndarray, want_params: bool):
    """Reverse pass; returns (d input of shape (B, L), d params or None)."""
    g = dlogits if dlogits.ndim == 2 else dlogits[None, :]
    grads = zeros_like_params(params) if want_params else None
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        h_in = trace.inputs[i]
        if isinstance(layer, Conv1D):
            w = params[i]["weight"]
            o, c, k = w.shape
            s = layer.stride
            n_out = g.shape[2]
            if want_params:
                cols = _im2col(h_in, k, s)  # (B, Lout, C*k)
                grads[i]["weight"] = np.tensordot(g, cols, axes=([0, 2], [0, 1])).reshape(w.shape)
                grads[i]["bias"] = g.sum(axis=(0, 2))
            dcols = (g.transpose(0, 2, 1) @ w.reshape(o, -1)).reshape(g.shape[0], n_out, c, k)
            dh = np.zeros_like(h_in)
            span = s * (n_out - 1) + 1
            for j in range(k):
                dh[:, :, j : j + span : s] += dcols[:, :, :, j].transpose(0, 2, 1)
            g = dh
        elif isinstance(layer, ReLU):
            g = np.where(h_in > 0, g, 0.0)
        elif isinstance(layer, MaxPool):
            idx = trace.aux[i]
            b, c, n_out = idx.shape
            blocks = np.zeros((b, c, n_out, layer.width))
            np.put_along_axis(blocks, idx[..., None], g[..., None], axis=3)
            dh = np.zeros_like(h_in)
            dh[:, :, : n_out * layer.width] = blocks.reshape(b, c, -1)
            g = dh
        elif isinstance(layer, GlobalAveragePool):
            n = h_in.shape[2]
            g = np.repeat(g[:, :, None] / n, n, axis=2)
        elif isinstance(layer, Dense):
            w = params[i]["weight"]
            flat = h_in.reshape(h_in.shape[0], -1)
            if want_params:
                grads[i]["weight"] = g.T @ flat
                grads[i]["bias"] = g.sum(axis=0)
            g = (g[:, None, :] @ w)[:, 0, :].reshape(h_in.shape)
    return g[:, 0, :], grads


# -- loss --------------------------------------------------------------------


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    # log(sum) = log1p(sum of all but one max term): keeps ~1e-22 losses representable
    top = np.argmax(z, axis=-1)[..., None]
    rest = e.sum(axis=-1, keepdims=True) - np.take_along_axis(e, top, axis=-1)
    return z - m - np.log1p(rest)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss(logits, y) -> np.ndarray | float:
    """Cross-entropy of ``softmax(logits)`` against class ``y`` (per example for batches)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] != N_CLASSES:
        raise ConfigurationError(f"expected {N_CLASSES} logits, got shape {z.shape}")
    y = np.asarray(y, dtype=np.intp)
    lp = log_softmax(z)
    if z.ndim == 1:
        return float(max(-lp[int(y)], 0.0))
    return np.maximum(-np.take_along_axis(lp, y.reshape(-1, 1), axis=1)[:, 0], 0.0)


def _dloss_dlogits(logits: np.ndarray, y) -> np.ndarray:
    p = softmax(logits)
    y = np.broadcast_to(np.asarray(y, dtype=np.intp), p.shape[:-1])
    if p.ndim == 1:
        p[int(y)] -= 1.0
    else:
        p[np.arange(p.shape[0]), y] -= 1.0
    return p


def grad_input(spec: ModelSpec, params: ModelParams, x, y) -> np.ndarray:
    """Gradient of the loss with respect to the (length-fitted) input.

    For a batch the result row ``b`` is the gradient of example ``b``'s own
    loss, not of the batch mean.
    """
    logits, trace = forward(spec, params, x)
    dx, _ = _backward(spec, params, trace, _dloss_dlogits(logits, y), want_params=False)
    return dx if trace.batched else dx[0]


def grad_params(spec: ModelSpec, params: ModelParams, x, y) -> ModelParams:
    """Gradient of the mean loss over the batch with respect to every parameter."""
    logits, trace = forward(spec, params, x)
    d = _dloss_dlogits(logits, y)
    if d.ndim == 2:
        d = d / d.shape[0]
    _, grads = _backward(spec, params, trace, d, want_params=True)
    return grads


def loss_and_grads(spec: ModelSpec, params: ModelParams, x, y) -> tuple[float, ModelParams]:
    logits, trace = forward(spec, params, x)
    per_example = np.atleast_1d(loss(logits, y))
    d = _dloss_dlogits(logits, y)
    if d.ndim == 2:
        d = d / d.shape[0]
    _, grads = _backward(spec, params, trace, d, want_params=True)
    return float(per_example.mean()), grads


# -- prediction --------------------------------------------------------------


def predict(spec: ModelSpec, params: ModelParams, x) -> tuple[RhythmClass, float]:
    logits, _ = forward(spec, params, x)
    if logits.ndim != 1:
        raise ConfigurationError("predict takes a single signal; use predict_batch")
    p = softmax(logits)
    k = int(np.argmax(p))
    return RhythmClass.from_index(k), float(p[k])


def predict_batch(spec: ModelSpec, params: ModelParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Class indices and confidences for a ``(B, L)`` batch."""
    logits, _ = forward(spec, params, np.atleast_2d(x))
    p = softmax(logits)
    k = np.argmax(p, axis=1)
    return k, p[np.arange(len(k)), k]


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0


def train(spec: ModelSpec, dataset: Dataset, hyper: TrainConfig = TrainConfig(), init: ModelParams | None = None) -> ModelParams:
    """Minibatch SGD with a fixed learning rate, seeded shuffling and init."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    x, y = dataset.arrays(spec.input_length)
    params = copy_params(init) if init is not None else init_params(spec, hyper.seed)
    check_params(spec, params)
    rng = np.random.default_rng([hyper.seed, 1])
    n = len(y)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            batch_loss, grads = loss_and_grads(spec, params, x[idx], y[idx])
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}")
            total += batch_loss * len(idx)
            for i, g in grads.items():
                for name in g:
                    params[i][name] -= hyper.learning_rate * g[name]
        mean_loss = total / n
        if not np.isfinite(mean_loss) or not _params_finite(params):
            raise TrainingError(f"training diverged in epoch {epoch}")
        logger.debug("epoch %d loss %.6f", epoch, mean_loss)
    return params


def _params_finite(params: ModelParams) -> bool:
    return all(np.isfinite(v).all() for p in params.values() for v in p.values())


# -- model bundle ------------------------------------------------------------


@dataclass
class Classifier:
    """A spec with its weights; the object the attacks talk to."""

    spec: ModelSpec
    params: ModelParams

    def __post_init__(self):
        check_params(self.spec, self.params)

    @property
    def input_length(self) -> int:
        return self.spec.input_length

    def logits(self, x) -> np.ndarray:
        return forward(self.spec, self.params, x)[0]

    def loss(self, x, y):
        return loss(self.logits(x), y)

    def grad_input(self, x, y) -> np.ndarray:
        return grad_input(self.spec, self.params, x, y)

    def predict(self, x) -> tuple[RhythmClass, float]:
        return predict(self.spec, self.params, x)

    def predict_batch(self, x) -> tuple[np.ndarray, np.ndarray]:
        return predict_batch(self.spec, self.params, x)

    def save(self, path) -> None:
        save_params(path, self.spec, self.params)

    @classmethod
    def load(cls, path) -> "Classifier":
        return cls(*load_params(path))


# -- weights file ------------------------------------------------------------
#
# Layout (all integers little-endian):
#   b"SAPW" | u32 version | u32 n | n bytes UTF-8 JSON ModelSpec
#   u32 array count, then per array:
#     u32 layer index | u8 name length | name | u32 ndim | ndim x u64 dims | float64 data
#   u32 CRC-32 of everything before it

MAGIC = b"SAPW"
FORMAT_VERSION = 1


def save_params(path, spec: ModelSpec, params: ModelParams) -> None:
    check_params(spec, params)
    spec_bytes = json.dumps(spec.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(spec_bytes)), spec_bytes]
    arrays = [(i, name, params[i][name]) for i in sorted(params) for name in ("weight", "bias")]
    parts.append(struct.pack("<I", len(arrays)))
    for i, name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("ascii")
        parts.append(struct.pack("<IB", i, len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError("weights file is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_params(path) -> tuple[ModelSpec, ModelParams]:
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise IntegrityError("not a weights file (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"weights format version {version} is not supported (expected {FORMAT_VERSION})")
    if len(buf) < 8 + 4:
        raise IntegrityError("weights file is truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise IntegrityError("weights file checksum mismatch (truncated or corrupted)")
    (n,) = r.unpack("<I")
    spec = ModelSpec.from_dict(json.loads(r.take(n).decode("utf-8")))
    (count,) = r.unpack("<I")
    params: ModelParams = {}
    for _ in range(count):
        i, name_len = r.unpack("<IB")
        name = r.take(name_len).decode("ascii")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        params.setdefault(i, {})[name] = data
    if r.pos != len(body):
        raise IntegrityError("trailing bytes in weights file")
    check_params(spec, params)
    return spec, params
