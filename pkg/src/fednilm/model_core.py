"""Minimal 1-D conv / dense network engine for seq2point load disaggregation.

Networks map a fixed-length window of aggregate power to one scalar: the
on/off score of the target appliance at the window midpoint.  Everything is
float64 and purely functional: forward, backward and the optimizer steps are
deterministic functions of their arguments, and parameters travel as flat
immutable vectors so they can be exchanged and averaged by the federation
layer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import SplitMix64, derive_seed


class SpecError(ValueError):
    """Invalid network architecture description."""


class ShapeError(ValueError):
    """Mismatched array lengths or layouts."""


class InputError(ValueError):
    """Non-finite or otherwise unusable numeric input."""


class NonFiniteError(FloatingPointError):
    """A parameter update produced NaN or Inf."""


_ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class Conv1D:
    filters: int
    kernel: int
    activation: str = "relu"


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "relu"


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack applied to one input window of ``input_window`` samples."""

    input_window: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        _validate(self)

    def to_json(self) -> str:
        doc = {"input_window": self.input_window, "layers": []}
        for layer in self.layers:
            if isinstance(layer, Conv1D):
                doc["layers"].append(
                    {"type": "conv1d", "filters": layer.filters,
                     "kernel": layer.kernel, "activation": layer.activation})
            else:
                doc["layers"].append(
                    {"type": "dense", "units": layer.units,
                     "activation": layer.activation})
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "NetworkSpec":
        doc = json.loads(text)
        layers = []
        for entry in doc["layers"]:
            kind = entry.get("type")
            if kind == "conv1d":
                layers.append(Conv1D(entry["filters"], entry["kernel"],
                                     entry.get("activation", "relu")))
            elif kind == "dense":
                layers.append(Dense(entry["units"], entry.get("activation", "relu")))
            else:
                raise SpecError(f"unknown layer type {kind!r}")
        return NetworkSpec(doc["input_window"], tuple(layers))


def _validate(spec: NetworkSpec) -> None:
    if spec.input_window < 1:
        raise SpecError("input_window must be positive")
    if not spec.layers:
        raise SpecError("network needs at least one layer")
    channels, length = 1, spec.input_window
    flat = None  # set once the stack switches to dense layers
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv1D):
            if flat is not None:
                raise SpecError(f"layer {i}: conv1d after a dense layer")
            if layer.filters < 1 or layer.kernel < 1:
                raise SpecError(f"layer {i}: filters and kernel must be positive")
            if layer.kernel > length:
                raise SpecError(
                    f"layer {i}: kernel {layer.kernel} longer than input {length}")
            if layer.activation not in _ACTIVATIONS:
                raise SpecError(f"layer {i}: unknown activation {layer.activation!r}")
            channels, length = layer.filters, length - layer.kernel + 1
        elif isinstance(layer, Dense):
            if layer.units < 1:
                raise SpecError(f"layer {i}: units must be positive")
            if layer.activation not in _ACTIVATIONS:
                raise SpecError(f"layer {i}: unknown activation {layer.activation!r}")
            if flat is None:
                flat = channels * length
            flat = layer.units
        else:
            raise SpecError(f"layer {i}: unsupported layer {layer!r}")
    last = spec.layers[-1]
    if not (isinstance(last, Dense) and last.units == 1):
        raise SpecError("final layer must be Dense with exactly 1 unit")


def desk_spec(window: int = 99) -> NetworkSpec:
    """Small network that trains in seconds on a laptop CPU."""
    return NetworkSpec(window, (
        Conv1D(8, 9, "relu"),
        Conv1D(8, 5, "relu"),
        Dense(64, "relu"),
        Dense(1, "linear"),
    ))


def paper_like_spec(window: int = 599) -> NetworkSpec:
    """Full-size five-conv seq2point stack (heavy; not used by the test suite)."""
    return NetworkSpec(window, (
        Conv1D(30, 10, "relu"),
        Conv1D(30, 8, "relu"),
        Conv1D(40, 6, "relu"),
        Conv1D(50, 5, "relu"),
        Conv1D(50, 5, "relu"),
        Dense(1024, "relu"),
        Dense(1, "linear"),
    ))


def layer_shapes(spec: NetworkSpec) -> list:
    """Per-layer (weight_shape, bias_shape) in parameter order."""
    shapes = []
    channels, length = 1, spec.input_window
    flat = None
    for layer in spec.layers:
        if isinstance(layer, Conv1D):
            shapes.append(((layer.filters, channels, layer.kernel), (layer.filters,)))
            channels, length = layer.filters, length - layer.kernel + 1
        else:
            if flat is None:
                flat = channels * length
            shapes.append(((layer.units, flat), (layer.units,)))
            flat = layer.units
    return shapes


def layout_for(spec: NetworkSpec) -> tuple:
    """Flat-vector layout: one (offset, shape) record per tensor."""
    records, offset = [], 0
    for w_shape, b_shape in layer_shapes(spec):
        for shape in (w_shape, b_shape):
            records.append((offset, shape))
            offset += int(np.prod(shape))
    return tuple(records)


def param_count(spec: NetworkSpec) -> int:
    offset, shape = layout_for(spec)[-1]
    return offset + int(np.prod(shape))


@dataclass(frozen=True)
class ParameterVector:
    """Immutable flat view of every trainable weight of one network."""

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(self.layout))
        expected = self.layout[-1][0] + int(np.prod(self.layout[-1][1]))
        if values.ndim != 1 or len(values) != expected:
            raise ShapeError(
                f"parameter vector length {values.shape} does not match layout "
                f"({expected} values)")

    def __len__(self) -> int:
        return len(self.values)

    def tensors(self) -> list:
        """Unflatten into the per-layer tensors described by the layout."""
        return [self.values[off:off + int(np.prod(shape))].reshape(shape)
                for off, shape in self.layout]

    def replace_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.layout)


def flatten_tensors(tensors, layout) -> np.ndarray:
    out = np.empty(layout[-1][0] + int(np.prod(layout[-1][1])), dtype=np.float64)
    for tensor, (off, shape) in zip(tensors, layout):
        if tuple(np.shape(tensor)) != tuple(shape):
            raise ShapeError(f"tensor shape {np.shape(tensor)} != layout {shape}")
        out[off:off + int(np.prod(shape))] = np.asarray(tensor, dtype=np.float64).ravel()
    return out


def init_params(spec: NetworkSpec, seed: int) -> ParameterVector:
    """Deterministic init: weights uniform +/- sqrt(6/fan_in), biases zero."""
    layout = layout_for(spec)
    stream = SplitMix64(derive_seed("init", seed))
    values = np.zeros(layout[-1][0] + int(np.prod(layout[-1][1])), dtype=np.float64)
    for w_rec, _b_rec in zip(layout[::2], layout[1::2]):
        off, shape = w_rec
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        n = int(np.prod(shape))
        values[off:off + n] = stream.uniform(n, -bound, bound)
    return ParameterVector(values, layout)


def _check_batch(spec: NetworkSpec, params: ParameterVector, windows) -> np.ndarray:
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_window:
        raise ShapeError(
            f"windows must be (batch, {spec.input_window}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("windows contain non-finite samples")
    if params.layout != layout_for(spec):
        raise ShapeError("parameter layout does not match network spec")
    return x


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else z


def _forward_cached(spec: NetworkSpec, params: ParameterVector, x: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    tensors = params.tensors()
    a = x[:, None, :]  # (batch, channels=1, length)
    caches = []
    for i, layer in enumerate(spec.layers):
        weight, bias = tensors[2 * i], tensors[2 * i + 1]
        if isinstance(layer, Conv1D):
            win = sliding_window_view(a, layer.kernel, axis=2)
            z = np.einsum("nclk,fck->nfl", win, weight, optimize=True)
            z += bias[None, :, None]
        else:
            a = a.reshape(a.shape[0], -1)
            z = a @ weight.T + bias
        caches.append((a, z))
        a = _activate(z, layer.activation)
    return a[:, 0], caches


def forward(spec: NetworkSpec, params: ParameterVector, windows) -> np.ndarray:
    """One scalar prediction per window; deterministic and pure."""
    x = _check_batch(spec, params, windows)
    preds, _ = _forward_cached(spec, params, x)
    return preds


def loss(predictions, targets) -> float:
    """Summed squared error over the batch."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} vs targets {t.shape}")
    return float(np.sum((t - p) ** 2))


def backward(spec: NetworkSpec, params: ParameterVector, windows, targets):
    """Summed-squared-error loss and its exact gradient, flattened like params."""
    x = _check_batch(spec, params, windows)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != (x.shape[0],):
        raise ShapeError(f"targets must be ({x.shape[0]},), got {t.shape}")
    preds, caches = _forward_cached(spec, params, x)
    total = float(np.sum((t - preds) ** 2))

    tensors = params.tensors()
    grads = [None] * len(tensors)
    da = (2.0 * (preds - t))[:, None]  # d(loss)/d(final activation)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        a_in, z = caches[i]
        dz = da * (z > 0.0) if layer.activation == "relu" else da
        weight = tensors[2 * i]
        if isinstance(layer, Dense):
            grads[2 * i] = dz.T @ a_in
            grads[2 * i + 1] = dz.sum(axis=0)
            da = dz @ weight
            if i > 0 and isinstance(spec.layers[i - 1], Conv1D):
                _, z_prev = caches[i - 1]
                da = da.reshape(z_prev.shape)
        else:
            win = sliding_window_view(a_in, layer.kernel, axis=2)
            grads[2 * i] = np.einsum("nclk,nfl->fck", win, dz, optimize=True)
            grads[2 * i + 1] = dz.sum(axis=(0, 2))
            if i > 0:
                k = layer.kernel
                padded = np.pad(dz, ((0, 0), (0, 0), (k - 1, k - 1)))
                win_p = sliding_window_view(padded, k, axis=2)
                da = np.einsum("nftj,fcj->nct", win_p, weight[:, :, ::-1],
                               optimize=True)
    return total, flatten_tensors(grads, params.layout)


def _check_grad(params: ParameterVector, grad) -> np.ndarray:
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != params.values.shape:
        raise ShapeError(f"gradient shape {g.shape} != params {params.values.shape}")
    return g


def _finished(values: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("update produced non-finite parameters")
    return values


def sgd_step(params: ParameterVector, grad, lr: float) -> ParameterVector:
    """Plain descent step params - lr * grad."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    g = _check_grad(params, grad)
    return params.replace_values(_finished(params.values - lr * g))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        for name in ("m", "v"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.m.shape != self.v.shape:
            raise ShapeError("m and v must have the same shape")


def fresh_adam_state(n: int, beta1: float = 0.9, beta2: float = 0.999,
                     epsilon: float = 1e-8) -> AdamState:
    return AdamState(np.zeros(n), np.zeros(n), 0, beta1, beta2, epsilon)


def adam_step(params: ParameterVector, grad, state: AdamState, lr: float):
    """Bias-corrected Adam update; returns (new params, new state)."""
    g = _check_grad(params, grad)
    if state.m.shape != params.values.shape:
        raise ShapeError("optimizer state does not match parameter count")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    return params.replace_values(_finished(values)), new_state


# --- finite-difference gradient verification -------------------------------

def _replay(spec: NetworkSpec, layer_index: int, z: np.ndarray, tensors,
            targets: np.ndarray) -> np.ndarray:
    """Finish the network from layer ``layer_index``'s pre-activation for M
    perturbed copies at once; returns the summed squared error per copy."""
    a = _activate(z, spec.layers[layer_index].activation)
    for j in range(layer_index + 1, len(spec.layers)):
        layer = spec.layers[j]
        weight, bias = tensors[2 * j], tensors[2 * j + 1]
        if isinstance(layer, Conv1D):
            win = sliding_window_view(a, layer.kernel, axis=3)
            z = np.einsum("mnclk,fck->mnfl", win, weight, optimize=True)
            z += bias[None, None, :, None]
        else:
            a = a.reshape(a.shape[0], a.shape[1], -1)
            z = a @ weight.T + bias
        a = _activate(z, layer.activation)
    return np.sum((targets[None, :] - a[:, :, 0]) ** 2, axis=1)


def fd_gradient(spec: NetworkSpec, params: ParameterVector, windows, targets,
                h: float = 1e-5, budget: int = 8_000_000) -> np.ndarray:
    """Central-difference gradient of the summed squared error.

    Numeric oracle for backward(), using no analytic derivatives.  Each
    layer's pre-activation is affine in that layer's own parameters, so the
    perturbed pre-activation is formed exactly and only the downstream layers
    are re-evaluated, vectorized over many perturbations at once; this is
    arithmetically the central difference of the true loss.
    """
    x = _check_batch(spec, params, windows)
    t = np.asarray(targets, dtype=np.float64)
    tensors = params.tensors()
    grad = np.empty(len(params), dtype=np.float64)

    a = x[:, None, :]
    for i, layer in enumerate(spec.layers):
        weight, bias = tensors[2 * i], tensors[2 * i + 1]
        if isinstance(layer, Conv1D):
            a_in = a
            win_in = sliding_window_view(a_in, layer.kernel, axis=2)
            z_base = np.einsum("nclk,fck->nfl", win_in, weight, optimize=True)
            z_base += bias[None, :, None]
        else:
            a_in = a.reshape(a.shape[0], -1)
            z_base = a_in @ weight.T + bias

        for rec in (2 * i, 2 * i + 1):
            off, shape = params.layout[rec]
            total = int(np.prod(shape))
            chunk = max(1, min(total, budget // max(1, z_base.size)))
            for start in range(0, total, chunk):
                idx = np.arange(start, min(start + chunk, total))
                m = len(idx)
                rows = np.arange(m)
                losses = []
                for sign in (h, -h):
                    z = np.repeat(z_base[None], m, axis=0)
                    if isinstance(layer, Conv1D):
                        if rec == 2 * i:
                            f_idx, c_idx, k_idx = np.unravel_index(idx, shape)
                            z[rows, :, f_idx, :] += sign * win_in[:, c_idx, :, k_idx]
                        else:
                            z[rows, :, idx, :] += sign
                    else:
                        if rec == 2 * i:
                            u_idx, f_idx = np.unravel_index(idx, shape)
                            z[rows, :, u_idx] += sign * a_in[:, f_idx].T
                        else:
                            z[rows, :, idx] += sign
                    losses.append(_replay(spec, i, z, tensors, t))
                grad[off + idx] = (losses[0] - losses[1]) / (2.0 * h)
        a = _activate(z_base, layer.activation)
    return grad


# --- checkpoint format ------------------------------------------------------

CHECKPOINT_MAGIC = b"FNLM"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ParameterVector) -> None:
    """Binary checkpoint: magic, version u16, layout records, little-endian f64s."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(params.layout)))
        for _off, shape in params.layout:
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(params)))
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> ParameterVector:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a FNLM checkpoint")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (n_records,) = struct.unpack("<I", fh.read(4))
        records, offset = [], 0
        for _ in range(n_records):
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            records.append((offset, tuple(int(d) for d in shape)))
            offset += int(np.prod(shape))
        (count,) = struct.unpack("<Q", fh.read(8))
        if count != offset:
            raise ValueError(f"{path}: value count {count} does not match layout")
        values = np.frombuffer(fh.read(8 * count), dtype="<f8")
        if len(values) != count:
            raise ValueError(f"{path}: truncated checkpoint")
    return ParameterVector(values.astype(np.float64), tuple(records))
