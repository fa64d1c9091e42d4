"""Fully-connected softmax classifier with hand-written backpropagation.

The model is a stack of dense layers with ReLU on hidden layers and raw
logits at the output. A temperature divides the logits inside the softmax
only; predictions come straight from the logits, so they are invariant to
temperature. Trained models are immutable and safe to share across workers.
"""

import io
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import AdamState, adam_step, as_vector

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MLPCKPT1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed, truncated or version-mismatched checkpoints."""


@dataclass(frozen=True)
class LabeledDataset:
    """Inputs in [0,1]^n paired with integer class labels."""

    inputs: np.ndarray   # (count, n) float64
    labels: np.ndarray   # (count,) int

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if len(self.inputs) != len(self.labels):
            raise ValueError(
                f"count mismatch: {len(self.inputs)} inputs vs {len(self.labels)} labels"
            )
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("input entries must lie in [0,1]")

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset(self.inputs[idx].copy(), self.labels[idx].copy())


@dataclass(frozen=True)
class MlpModel:
    """Dense ReLU network; weights[l] has shape (dims[l+1], dims[l])."""

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    temperature: float = 1.0

    def __post_init__(self):
        dims = self.layer_dims
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"bad layer dims {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("one weight matrix and bias per layer transition required")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ValueError(
                    f"layer {l}: weight {w.shape} / bias {b.shape} disagree "
                    f"with dims {dims[l]}->{dims[l + 1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]


def init_model(layer_dims, seed: int, temperature: float = 1.0) -> MlpModel:
    """He-initialized random model, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in layer_dims)
    weights = []
    biases = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(2.0 / d_in)
        weights.append(rng.normal(0.0, scale, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return MlpModel(dims, tuple(weights), tuple(biases), float(temperature))


def _check_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = as_vector(x)
    if x.size != model.input_dim:
        raise ValueError(f"input length {x.size} != model input dim {model.input_dim}")
    return x


def _forward_cached(model: MlpModel, x: np.ndarray):
    """Forward pass keeping hidden activations for backprop."""
    hidden = []
    a = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        pre = w @ a + b
        if l == last:
            return pre, (x, hidden)
        a = np.maximum(pre, 0.0)
        hidden.append(a)
    raise AssertionError("unreachable")


def _backprop_input(model: MlpModel, cache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss with respect to the input, given dloss/dlogits.

    ReLU subgradient at exactly 0 is taken as 0.
    """
    _, hidden = cache
    g = dlogits
    for l in range(len(model.weights) - 1, 0, -1):
        g = model.weights[l].T @ g
        g = g * (hidden[l - 1] > 0.0)
    return model.weights[0].T @ g


def logits(model: MlpModel, x) -> np.ndarray:
    """Pre-softmax output Z(x)."""
    x = _check_input(model, x)
    z, _ = _forward_cached(model, x)
    return z


def probabilities(model: MlpModel, x) -> np.ndarray:
    """softmax(Z(x)/T), computed with max subtraction for stability."""
    z = logits(model, x) / model.temperature
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def predict(model: MlpModel, x) -> int:
    """Class of maximum logit; ties break to the lowest index."""
    return int(np.argmax(logits(model, x)))


def input_gradient(model: MlpModel, x, loss_grad) -> np.ndarray:
    """Exact reverse-mode gradient of loss(Z(x)) with respect to x.

    loss_grad maps the logits vector to the gradient of the scalar loss
    with respect to the logits.
    """
    x = _check_input(model, x)
    z, cache = _forward_cached(model, x)
    return _backprop_input(model, cache, np.asarray(loss_grad(z), dtype=np.float64))


# -- training ----------------------------------------------------------------


def _forward_batch(model: MlpModel, xs: np.ndarray):
    acts = [xs]
    a = xs
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        pre = a @ w.T + b
        a = pre if l == last else np.maximum(pre, 0.0)
        acts.append(a)
    return acts


def _softened_softmax(z: np.ndarray, temperature: float) -> np.ndarray:
    t = z / temperature
    t = t - t.max(axis=1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=1, keepdims=True)


def accuracy(model: MlpModel, data: LabeledDataset) -> float:
    acts = _forward_batch(model, data.inputs)
    return float(np.mean(np.argmax(acts[-1], axis=1) == data.labels))


def train_history(model: MlpModel, data: LabeledDataset, epochs: int,
                  batch_size: int, lr: float, seed: int):
    """Adam cross-entropy training; returns (model, per-epoch mean losses).

    The cross entropy is taken against softmax(Z/T) with the model's stored
    temperature, so distilled models inflate their logit scale during
    training. Deterministic for a given seed.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.inputs.shape[1] != model.input_dim:
        raise ValueError("dataset dimension disagrees with the model")
    rng = np.random.default_rng(seed)
    temp = model.temperature
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    params = weights + biases
    states = [
        AdamState.fresh(p.size, learning_rate=lr) for p in params
    ]
    onehot = np.eye(model.num_classes)[data.labels]
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            xs, ys = data.inputs[idx], onehot[idx]
            acts = _forward_batch(
                MlpModel(model.layer_dims, tuple(weights), tuple(biases), temp), xs
            )
            probs = _softened_softmax(acts[-1], temp)
            epoch_loss += float(-np.sum(np.log(probs[ys.astype(bool)] + 1e-300)))
            dlogits = (probs - ys) / (temp * len(idx))
            # backprop through the layer stack
            grads_w = [None] * len(weights)
            grads_b = [None] * len(biases)
            g = dlogits
            for l in range(len(weights) - 1, -1, -1):
                grads_w[l] = g.T @ acts[l]
                grads_b[l] = g.sum(axis=0)
                if l > 0:
                    g = (g @ weights[l]) * (acts[l] > 0.0)
            flat_grads = grads_w + grads_b
            for i, p in enumerate(params):
                moved, states[i] = adam_step(
                    states[i], p.reshape(-1), flat_grads[i].reshape(-1)
                )
                p[...] = moved.reshape(p.shape)
        losses.append(epoch_loss / len(data))
    trained = MlpModel(model.layer_dims, tuple(weights), tuple(biases), temp)
    log.info("training finished: accuracy %.4f", accuracy(trained, data))
    return trained, losses


def train(model: MlpModel, data: LabeledDataset, epochs: int, batch_size: int,
          lr: float, seed: int) -> MlpModel:
    """Train a copy of the model; the input model is left untouched."""
    trained, _ = train_history(model, data, epochs, batch_size, lr, seed)
    return trained


# -- checkpoint I/O ----------------------------------------------------------
#
# Byte layout (all integers little-endian):
#   8 bytes  | magic "MLPCKPT1"
#   u32      | format version (1)
#   u32      | number of layer dims
#   u32[]    | layer dims
#   f64      | temperature
# then per layer transition: weight matrix rows (f64, row-major), bias (f64).


def checkpoint_bytes(model: MlpModel) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(model.layer_dims)))
    buf.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
    buf.write(struct.pack("<d", model.temperature))
    for w, b in zip(model.weights, model.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def _take(raw: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(raw):
        raise CheckpointError(
            f"truncated checkpoint: needed {count} bytes for {what} "
            f"at offset {offset}, file has {len(raw)}"
        )
    return raw[offset:offset + count], offset + count


def load_model(path) -> MlpModel:
    with open(path, "rb") as f:
        return model_from_bytes(f.read())


def model_from_bytes(raw: bytes) -> MlpModel:
    chunk, off = _take(raw, 0, 8, "magic")
    if chunk != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {chunk!r} at offset 0")
    chunk, off = _take(raw, off, 8, "header")
    version, ndims = struct.unpack("<II", chunk)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    chunk, off = _take(raw, off, 4 * ndims, "layer dims")
    dims = struct.unpack(f"<{ndims}I", chunk)
    chunk, off = _take(raw, off, 8, "temperature")
    (temperature,) = struct.unpack("<d", chunk)
    weights = []
    biases = []
    for l, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        chunk, off = _take(raw, off, 8 * d_in * d_out, f"layer {l} weights")
        weights.append(np.frombuffer(chunk, dtype="<f8").reshape(d_out, d_in).copy())
        chunk, off = _take(raw, off, 8 * d_out, f"layer {l} bias")
        biases.append(np.frombuffer(chunk, dtype="<f8").copy())
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes at offset {off}")
    return MlpModel(dims, tuple(weights), tuple(biases), temperature)
