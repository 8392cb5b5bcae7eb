"""Feedforward networks in plain numpy: forward/backward passes, L1-penalised
Adam training with early stopping, and the GWNN model file format."""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    FormatError,
    StaleTraceError,
    TrainingError,
    TruncatedError,
    VersionError,
)
from .genotype import write_atomic

HEAD_BINARY = "sigmoid-binary"
HEAD_REGRESSION = "identity-regression"
ACTIVATIONS = ("identity", "relu")
PROB_FLOOR = 1e-12

GWNN_MAGIC = b"GWNN"
GWNN_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class MlpModel:
    layers: list[Layer]
    head: str = HEAD_BINARY
    input_dim: int = 0
    arch_tag: str = ""
    train_meta: dict = field(default_factory=dict)
    step: int = 0  # bumped on every parameter update; guards against stale traces

    def __post_init__(self):
        if self.head not in (HEAD_BINARY, HEAD_REGRESSION):
            raise ConfigError(f"unknown output head {self.head!r}")
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        width = self.input_dim
        for k, layer in enumerate(self.layers):
            out, inp = layer.weight.shape
            if inp != width or layer.bias.shape != (out,):
                raise ConfigError(f"layer {k} has shape {layer.weight.shape}, expected input width {width}")
            width = out
        if width != 1:
            raise ConfigError("output layer must have a single unit")

    @property
    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def l1_norm(self) -> float:
        return float(np.abs(self.layers[0].weight).sum())


def arch_tag(hidden: Sequence[int]) -> str:
    return " by ".join(str(h) for h in hidden)


def init_model(hidden: Sequence[int], input_dim: int, seed: int, head: str = HEAD_BINARY) -> MlpModel:
    """Glorot-uniform weights, zero biases; ReLU hidden layers and one linear output unit."""
    hidden = [int(h) for h in hidden]
    if input_dim < 1 or any(h < 1 for h in hidden):
        raise ConfigError(f"layer widths must be positive, got input {input_dim}, hidden {hidden}")
    widths = [input_dim, *hidden, 1]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rngmod.stream(seed, "init", k).uniform(-bound, bound, size=(fan_out, fan_in))
        act = "relu" if k < len(hidden) else "identity"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpModel(layers, head, input_dim, arch_tag(hidden))


def activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "identity":
        return z
    if activation == "sigmoid":
        return sigmoid(z)
    raise ConfigError(f"unknown activation {activation!r}")


def activation_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0).astype(np.float64)
    if activation == "identity":
        return np.ones_like(z, dtype=np.float64)
    if activation == "sigmoid":
        p = sigmoid(z)
        return p * (1.0 - p)
    raise ConfigError(f"unknown activation {activation!r}")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]  # pre-activation per layer
    post: list[np.ndarray]  # activation per layer
    step: int

    @property
    def output(self) -> np.ndarray:
        """Final-layer logits (or regression outputs), shape (batch,)."""
        return self.post[-1][:, 0]


def _as_batch(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise DataError(f"input width {x.shape[1]} does not match model input_dim {model.input_dim}")
    return x.astype(np.float64, copy=False)


def forward(model: MlpModel, x) -> ForwardTrace:
    h = _as_batch(model, x)
    inputs = h
    pre, post = [], []
    for layer in model.layers:
        z = h @ layer.weight.T
        z += layer.bias
        h = activate(z, layer.activation)
        pre.append(z)
        post.append(h)
    return ForwardTrace(inputs, pre, post, model.step)


def predict(model: MlpModel, x) -> np.ndarray:
    """Probabilities for a binary head, raw outputs for regression."""
    out = forward(model, x).output
    return sigmoid(out) if model.head == HEAD_BINARY else out


def _check_targets(model: MlpModel, y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (n,):
        raise DataError(f"{y.size} targets for a batch of {n}")
    if model.head == HEAD_BINARY and not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("binary head requires targets in {0, 1}")
    return y


def data_loss(model: MlpModel, logits: np.ndarray, y: np.ndarray) -> float:
    if model.head == HEAD_BINARY:
        return float(np.mean(softplus(logits) - y * logits))
    return float(np.mean((logits - y) ** 2))


def loss(model: MlpModel, x, y, l1_coeff: float = 0.0) -> float:
    """Mean cross-entropy (binary) or MSE (regression) plus ``l1_coeff * sum|W1|``."""
    trace = forward(model, x)
    y = _check_targets(model, y, trace.inputs.shape[0])
    return data_loss(model, trace.output, y) + l1_coeff * model.l1_norm()


def backward(model: MlpModel, trace: ForwardTrace, y, l1_coeff: float = 0.0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact gradients of ``loss`` as ``[(dW, db), ...]`` per layer.

    The L1 term uses the subgradient ``sign(w)`` with ``sign(0) = 0``.
    """
    if trace.step != model.step:
        raise StaleTraceError(f"trace from step {trace.step} used with model at step {model.step}")
    n = trace.inputs.shape[0]
    y = _check_targets(model, y, n)
    z = trace.output
    if model.head == HEAD_BINARY:
        delta = (sigmoid(z) - y) / n
    else:
        delta = 2.0 * (z - y) / n
    grad_post = delta[:, None]  # d loss / d output of the current layer
    grads = []
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        grad_pre = grad_post if layer.activation == "identity" else grad_post * activation_grad(trace.pre[k], layer.activation)
        below = trace.post[k - 1] if k > 0 else trace.inputs
        grads.append((grad_pre.T @ below, grad_pre.sum(axis=0)))
        grad_post = grad_pre @ layer.weight
    grads.reverse()
    if l1_coeff:
        grads[0] = (grads[0][0] + l1_coeff * np.sign(model.layers[0].weight), grads[0][1])
    return grads


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    l1_coeff: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    split: tuple[float, float, float] = (0.5, 0.25, 0.25)
    split_seed: int = 0
    # How l1_coeff relates to the per-sample (mean) objective:
    #   "sum":   penalises the summed training NLL -> l1_coeff / n_train
    #   "batch": penalises each minibatch's summed NLL -> l1_coeff / batch_size
    #   "mean":  added as-is to the mean loss
    l1_scale: str = "batch"
    # Optimise on inputs centred at the training-split mean, then fold the
    # shift into the first-layer bias so the returned model takes raw inputs.
    center_inputs: bool = True

    def __post_init__(self):
        if len(self.split) != 3 or any(f <= 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be three positive numbers summing to 1, got {self.split}")
        if self.l1_coeff < 0:
            raise ConfigError("l1_coeff must be non-negative")
        if self.l1_scale not in ("sum", "batch", "mean"):
            raise ConfigError(f"l1_scale must be 'sum', 'batch' or 'mean', got {self.l1_scale!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("learning_rate, batch_size and patience must be positive")


def effective_l1(cfg: TrainConfig, n_train: int) -> float:
    """Coefficient on ``sum|W1|`` in the per-sample (mean) objective."""
    if cfg.l1_scale == "sum":
        return cfg.l1_coeff / n_train
    if cfg.l1_scale == "batch":
        return cfg.l1_coeff / min(cfg.batch_size, n_train)
    return cfg.l1_coeff


def split_indices(n: int, fractions=(0.5, 0.25, 0.25), seed: int = 0):
    """Deterministic shuffle of ``range(n)`` cut into train / early-stop / validation."""
    perm = rngmod.stream(seed, "split").permutation(n)
    n_train = int(round(n * fractions[0]))
    n_stop = int(round(n * fractions[1]))
    return perm[:n_train], perm[n_train : n_train + n_stop], perm[n_train + n_stop :]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p -= (self.lr / c1) * m / denom


def _params(model: MlpModel) -> list[np.ndarray]:
    out = []
    for layer in model.layers:
        out += [layer.weight, layer.bias]
    return out


def _training_mean(x, idx, chunk: int = 2048) -> np.ndarray:
    total = np.zeros(np.shape(x)[1])
    for start in range(0, len(idx), chunk):
        total += np.asarray(x[idx[start : start + chunk]], dtype=np.float64).sum(axis=0)
    return total / len(idx)


def _chunked_data_loss(model: MlpModel, x, y, chunk: int = 1024) -> float:
    total = 0.0
    for start in range(0, len(y), chunk):
        out = forward(model, x[start : start + chunk]).output
        total += data_loss(model, out, y[start : start + chunk]) * len(out)
    return total / len(y)


def train(model: MlpModel, x, y, cfg: TrainConfig, train_idx=None, stop_idx=None):
    """Fit a copy of ``model`` with Adam on shuffled minibatches.

    Early stopping watches the unpenalised data loss on the early-stop split
    and the weights of the best epoch (epoch 0 = initial weights) are
    restored. Splits default to ``split_indices(len(y), cfg.split, cfg.split_seed)``.
    Returns ``(trained_model, history)``.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if train_idx is None or stop_idx is None:
        train_idx, stop_idx, _ = split_indices(len(y), cfg.split, cfg.split_seed)
    train_idx = np.asarray(train_idx)
    stop_idx = np.asarray(stop_idx)
    if len(train_idx) == 0 or len(stop_idx) == 0:
        raise TrainingError("empty training or early-stop split")
    if len(x) != len(y):
        raise DataError(f"{len(x)} input rows but {len(y)} targets")

    model = copy.deepcopy(model)
    _check_targets(model, y[train_idx], len(train_idx))
    shift = _training_mean(x, train_idx) if cfg.center_inputs else np.zeros(model.input_dim)

    def batch(idx):
        return np.asarray(x[idx], dtype=np.float64) - shift

    x_stop, y_stop = batch(stop_idx), y[stop_idx]
    opt = Adam(_params(model), cfg.learning_rate)
    l1 = effective_l1(cfg, len(train_idx))

    best_loss = _chunked_data_loss(model, x_stop, y_stop)
    best_params = [p.copy() for p in _params(model)]
    best_epoch, waited = 0, 0
    history = [{"epoch": 0, "train_loss": float("nan"), "stop_loss": best_loss}]
    for epoch in range(1, cfg.max_epochs + 1):
        order = train_idx[rngmod.stream(cfg.seed, "shuffle", epoch).permutation(len(train_idx))]
        running, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            trace = forward(model, batch(idx))
            yb = y[idx]
            running += data_loss(model, trace.output, yb) * len(idx)
            seen += len(idx)
            grads = backward(model, trace, yb, l1)
            opt.update([g for pair in grads for g in pair])
            model.step += 1
        stop_loss = _chunked_data_loss(model, x_stop, y_stop)
        train_loss = running / seen
        if not (math.isfinite(stop_loss) and math.isfinite(train_loss)):
            raise TrainingError(
                f"non-finite loss at epoch {epoch} (train {train_loss}, early-stop {stop_loss}); "
                f"try a smaller learning rate than {cfg.learning_rate}"
            )
        history.append({"epoch": epoch, "train_loss": train_loss, "stop_loss": stop_loss})
        if stop_loss < best_loss:
            best_loss, best_epoch, waited = stop_loss, epoch, 0
            best_params = [p.copy() for p in _params(model)]
        else:
            waited += 1
            if waited >= cfg.patience:
                break

    for p, best in zip(_params(model), best_params):
        p[...] = best
    first = model.layers[0]
    first.bias -= first.weight @ shift
    model.step += 1
    model.train_meta = {
        "seed": cfg.seed,
        "config": {**asdict(cfg), "split": list(cfg.split)},
        "best_epoch": best_epoch,
        "best_stop_loss": best_loss,
        "epochs_run": history[-1]["epoch"],
        "effective_l1": l1,
        "l1_norm_first_layer": model.l1_norm(),
    }
    return model, history


def validation_loglik(model: MlpModel, x, y, chunk: int = 1024) -> float:
    """Mean per-sample log-likelihood: Bernoulli for binary heads, unit-variance
    Gaussian for regression heads."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise DataError("empty validation set")
    total = 0.0
    for start in range(0, len(y), chunk):
        out = forward(model, x[start : start + chunk]).output
        yb = y[start : start + chunk]
        if model.head == HEAD_BINARY:
            p = np.clip(sigmoid(out), PROB_FLOOR, 1.0 - PROB_FLOOR)
            total += float(np.sum(yb * np.log(p) + (1.0 - yb) * np.log1p(-p)))
        else:
            total += float(np.sum(-0.5 * math.log(2 * math.pi) - 0.5 * (yb - out) ** 2))
    return total / len(y)


# --- persistence ----------------------------------------------------------------

_HEAD_CODES = {HEAD_BINARY: 0, HEAD_REGRESSION: 1}
_ACT_CODES = {"identity": 0, "relu": 1}


def encode_model(model: MlpModel) -> bytes:
    out = bytearray(GWNN_MAGIC)
    out += struct.pack("<IBIQ", GWNN_VERSION, _HEAD_CODES[model.head], len(model.layers), model.input_dim)
    for layer in model.layers:
        o, i = layer.weight.shape
        out += struct.pack("<QQB", o, i, _ACT_CODES[layer.activation])
        out += np.ascontiguousarray(layer.weight, dtype="<f8").tobytes()
        out += np.ascontiguousarray(layer.bias, dtype="<f8").tobytes()
    meta = json.dumps({"arch_tag": model.arch_tag, "step": model.step, "train_meta": model.train_meta}, sort_keys=True)
    raw = meta.encode("utf-8")
    out += struct.pack("<I", len(raw)) + raw
    return bytes(out)


def decode_model(buf: bytes) -> MlpModel:
    if buf[:4] != GWNN_MAGIC:
        raise BadMagicError("not a GWNN model file")
    try:
        version, head, n_layers, input_dim = struct.unpack_from("<IBIQ", buf, 4)
        if version != GWNN_VERSION:
            raise VersionError(f"unsupported GWNN version {version} (expected {GWNN_VERSION})")
        pos = 4 + struct.calcsize("<IBIQ")
        layers = []
        for _ in range(n_layers):
            o, i, act = struct.unpack_from("<QQB", buf, pos)
            pos += struct.calcsize("<QQB")
            nbytes = 8 * (o * i + o)
            if pos + nbytes > len(buf):
                raise TruncatedError("layer payload truncated")
            w = np.frombuffer(buf, "<f8", o * i, pos).reshape(o, i).astype(np.float64)
            b = np.frombuffer(buf, "<f8", o, pos + 8 * o * i).astype(np.float64)
            pos += nbytes
            layers.append(Layer(w, b, {v: k for k, v in _ACT_CODES.items()}[act]))
        (meta_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + meta_len != len(buf):
            raise TruncatedError("metadata block truncated or followed by junk")
        meta = json.loads(buf[pos : pos + meta_len].decode("utf-8"))
    except struct.error as exc:
        raise TruncatedError(f"model file truncated: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise FormatError(f"corrupt model file: {exc}") from None
    head_name = {v: k for k, v in _HEAD_CODES.items()}[head]
    return MlpModel(layers, head_name, input_dim, meta["arch_tag"], meta["train_meta"], meta["step"])


def save_model(model: MlpModel, path) -> None:
    write_atomic(path, encode_model(model))


def load_model(path) -> MlpModel:
    return decode_model(Path(path).read_bytes())
