"""Logistic-linear and MLP classifiers with hand-written gradients.

Both model kinds expose class logits of shape ``(n, C)``. A binary
:class:`LinearClassifier` is treated as the two-class model with logits
``(0, w.x + b)``, so softmax cross-entropy on it is the logistic loss on the
signed margin and the same KL machinery serves both kinds.

Parameters are flattened as ``[w..., b]`` for the linear model and as
``W1 (row-major, in x out), b1, W2, b2, ...`` for the MLP.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .rng import generator

FORMAT_VERSION = 1
ACTIVATIONS = ("tanh", "relu")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray
    intercept: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(w)) and math.isfinite(self.intercept)):
            raise ValueError("linear classifier parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercept", float(self.intercept))

    kind = "linear"
    class_count = 2

    @property
    def dims(self) -> list[int]:
        return [self.weights.shape[0], 1]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def param_count(self) -> int:
        return self.weights.shape[0] + 1

    def params(self) -> np.ndarray:
        return np.append(self.weights, self.intercept)

    def with_params(self, flat) -> "LinearClassifier":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} parameters, got {flat.shape}")
        return LinearClassifier(flat[:-1].copy(), float(flat[-1]))

    def normalized_intercept(self) -> float:
        """Intercept rescaled so that ``|w|_2 = sqrt(p)``, i.e. comparable to the all-ones weight."""
        return self.intercept * math.sqrt(self.input_dim) / float(np.linalg.norm(self.weights))


@dataclass(frozen=True)
class MlpClassifier:
    layer_dims: tuple
    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        dims = tuple(int(v) for v in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"bad layer dims {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and bias per layer")
        ws, bs = [], []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.array(W, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if W.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} shapes {W.shape}, {b.shape} do not match dims {dims}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("MLP parameters must be finite")
            W.setflags(write=False)
            b.setflags(write=False)
            ws.append(W)
            bs.append(b)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    kind = "mlp"

    @property
    def dims(self) -> list[int]:
        return list(self.layer_dims)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def class_count(self) -> int:
        return self.layer_dims[-1]

    @property
    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def params(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    def with_params(self, flat) -> "MlpClassifier":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} parameters, got {flat.shape}")
        ws, bs, pos = [], [], 0
        for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            ws.append(flat[pos:pos + a * b].reshape(a, b).copy())
            pos += a * b
            bs.append(flat[pos:pos + b].copy())
            pos += b
        return MlpClassifier(self.layer_dims, tuple(ws), tuple(bs), self.activation)


Model = Union[LinearClassifier, MlpClassifier]


@dataclass
class LossGrad:
    loss: float
    grad: np.ndarray | None
    input_grad: np.ndarray | None = None
    row_losses: np.ndarray | None = None


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"input dimension {x.shape[-1]} does not match model input {model.input_dim}")
    return x, single


def _act(kind: str, h: np.ndarray) -> np.ndarray:
    return np.tanh(h) if kind == "tanh" else np.maximum(h, 0.0)


def _act_grad(kind: str, h: np.ndarray, a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a if kind == "tanh" else (h > 0).astype(np.float64)


def _forward_cache(model: Model, x: np.ndarray):
    if isinstance(model, LinearClassifier):
        margin = x @ model.weights + model.intercept
        logits = np.zeros((x.shape[0], 2))
        logits[:, 1] = margin
        return logits, None
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        if i < last:
            pre.append(z)
            h = _act(model.activation, z)
            acts.append(h)
        else:
            h = z
    return h, (acts, pre)


def _backward(model: Model, x: np.ndarray, cache, dlogits: np.ndarray, want_input: bool, want_params: bool = True):
    """Parameter gradient (summed over the batch) and per-row input gradient."""
    if isinstance(model, LinearClassifier):
        dm = dlogits[:, 1]
        grad = np.append(dm @ x, dm.sum()) if want_params else None
        dx = np.outer(dm, model.weights) if want_input else None
        return grad, dx
    acts, pre = cache
    parts = []
    delta = dlogits
    for i in range(len(model.weights) - 1, -1, -1):
        if want_params:
            parts.append(delta.sum(axis=0))
            parts.append((acts[i].T @ delta).reshape(-1))
        if i > 0 or want_input:
            delta = delta @ model.weights[i].T
            if i > 0:
                delta = delta * _act_grad(model.activation, pre[i - 1], acts[i])
    parts.reverse()
    grad = np.concatenate(parts) if want_params else None
    return grad, (delta if want_input else None)


def logits(model: Model, x) -> np.ndarray:
    """Class logits, always ``(n, C)`` (or ``(C,)`` for one row)."""
    xb, single = _as_batch(model, x)
    out, _ = _forward_cache(model, xb)
    return out[0] if single else out


def forward(model: Model, x):
    """Margin ``w.x + b`` for a linear model, logits for an MLP."""
    xb, single = _as_batch(model, x)
    out, _ = _forward_cache(model, xb)
    if isinstance(model, LinearClassifier):
        out = out[:, 1]
    return out[0] if single else out


def predict(model: Model, x) -> np.ndarray:
    xb, single = _as_batch(model, x)
    out, _ = _forward_cache(model, xb)
    pred = np.argmax(out, axis=1)
    return pred[0] if single else pred


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _weights(sample_weight, n: int) -> np.ndarray:
    w = np.broadcast_to(np.asarray(sample_weight, dtype=np.float64), (n,))
    if np.any(w < 0):
        raise ValueError("sample weights must be non-negative")
    return w


def cross_entropy_grad(model: Model, x, y, sample_weight=1.0, want_input: bool = True, want_params: bool = True) -> LossGrad:
    """Weighted softmax cross-entropy, summed over rows."""
    xb, single = _as_batch(model, x)
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (xb.shape[0],):
        raise ValueError("one label per row required")
    if np.any(y < 0) or np.any(y >= model.class_count) or not np.all(np.mod(y, 1) == 0):
        raise ValueError(f"class index out of range [0, {model.class_count})")
    y = y.astype(np.int64)
    sw = _weights(sample_weight, xb.shape[0])
    z, cache = _forward_cache(model, xb)
    logp = _log_softmax(z)
    rows = np.arange(xb.shape[0])
    per_row = -logp[rows, y]
    loss = float((sw * per_row).sum())
    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    dz *= sw[:, None]
    grad, dx = _backward(model, xb, cache, dz, want_input, want_params)
    if dx is not None and single:
        dx = dx[0]
    return LossGrad(loss, grad, dx, per_row)


def kl_boundary_grad(model: Model, x_clean, x_adv, sample_weight=1.0, want_input: bool = True, want_params: bool = True) -> LossGrad:
    """Weighted ``KL(softmax f(x_clean) || softmax f(x_adv))``, summed over rows.

    Both branches depend on the parameters and both contribute to ``grad``.
    ``input_grad`` is taken with respect to ``x_adv``.
    """
    xc, single = _as_batch(model, x_clean)
    xa, _ = _as_batch(model, x_adv)
    if xc.shape != xa.shape:
        raise ValueError("clean and adversarial batches differ in shape")
    sw = _weights(sample_weight, xc.shape[0])
    zc, cc = _forward_cache(model, xc)
    za, ca = _forward_cache(model, xa)
    logp = _log_softmax(zc)
    logq = _log_softmax(za)
    p = np.exp(logp)
    diff = logp - logq
    per_row = (p * diff).sum(axis=1)
    loss = float((sw * np.maximum(per_row, 0.0)).sum())
    dzc = p * (diff - per_row[:, None]) * sw[:, None]
    dza = (np.exp(logq) - p) * sw[:, None]
    ga, dx = _backward(model, xa, ca, dza, want_input, want_params)
    grad = None
    if want_params:
        gc, _ = _backward(model, xc, cc, dzc, False)
        grad = gc + ga
    if dx is not None and single:
        dx = dx[0]
    return LossGrad(loss, grad, dx, per_row)


def init_model(kind: str, dims, seed: int, activation: str = "tanh") -> Model:
    """Uniform init in ``+-1/sqrt(fan_in)``, deterministic in ``seed``.

    ``dims`` is ``[p]`` (or ``[p, 1]``) for ``kind="linear"`` and
    ``[p, h, ..., C]`` for ``kind="mlp"``.
    """
    dims = [int(v) for v in dims]
    rng = generator(seed, "init", kind)
    if kind == "linear":
        p = dims[0]
        bound = 1.0 / math.sqrt(p)
        return LinearClassifier(rng.uniform(-bound, bound, p), 0.0)
    if kind == "mlp":
        ws, bs = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(a)
            ws.append(rng.uniform(-bound, bound, (a, b)))
            bs.append(rng.uniform(-bound, bound, b))
        return MlpClassifier(tuple(dims), tuple(ws), tuple(bs), activation)
    raise ValueError(f"unknown model kind {kind!r}")


def zeros_like(model: Model) -> Model:
    return model.with_params(np.zeros(model.param_count))


def sgd_step(model: Model, gradient, lr: float) -> Model:
    if not lr > 0:
        raise ValueError("lr must be positive")
    gradient = np.asarray(gradient, dtype=np.float64)
    return model.with_params(model.params() - lr * gradient)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def serialize_model(model: Model) -> str:
    """Versioned JSON text; parameters printed with 17 significant digits."""
    head = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "dims": model.dims,
        "activation": getattr(model, "activation", None),
    }
    body = json.dumps(head)[:-1]
    params = ", ".join(_fmt(v) for v in model.params())
    return body + ', "params": [' + params + "]}\n"


def deserialize_model(document: str) -> Model:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    for key in ("format_version", "kind", "dims", "params"):
        if key not in doc:
            raise ModelFormatError(f"model document lacks {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {doc['format_version']!r}")
    params = np.asarray(doc["params"], dtype=np.float64)
    dims = doc["dims"]
    try:
        if doc["kind"] == "linear":
            template = LinearClassifier(np.zeros(int(dims[0])), 0.0)
        elif doc["kind"] == "mlp":
            template = zeros_like(init_model("mlp", dims, 0, doc.get("activation") or "tanh"))
        else:
            raise ModelFormatError(f"unknown model kind {doc['kind']!r}")
        return template.with_params(params)
    except (ValueError, TypeError, IndexError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc}") from None
