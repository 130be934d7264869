"""Small MLP predictor with hand-written backprop and Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from slm.errors import InvalidInputError

CHECKPOINT_VERSION = 1


@dataclass
class Predictor:
    """ReLU MLP; ``layers`` hidden layers of width ``hidden`` then an output layer.

    ``output`` is ``"softmax"`` (class probabilities) or ``"linear"`` (one
    real output per sample).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output: str = "softmax"

    @classmethod
    def init(
        cls,
        n_inputs: int,
        n_outputs: int,
        hidden: int = 50,
        layers: int = 1,
        output: str = "softmax",
        rng: np.random.Generator | None = None,
    ) -> "Predictor":
        if output not in ("softmax", "linear"):
            raise InvalidInputError(f"unknown output {output!r}")
        rng = np.random.default_rng() if rng is None else rng
        dims = [n_inputs] + [hidden] * layers + [n_outputs]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, output)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "Predictor":
        return Predictor([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.output)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each linear layer
    pre: list[np.ndarray]  # pre-activations of hidden layers
    out: np.ndarray


def forward(model: Predictor, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Returns probabilities (b x c) or outputs (b,), plus the cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise InvalidInputError(f"input shape {x.shape} does not match model width {model.n_inputs}")
    inputs, pre = [], []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    out = softmax(h) if model.output == "softmax" else h[:, 0]
    return out, ForwardCache(inputs, pre, out)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given a gradient w.r.t. softmax probabilities."""
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def backward(model: Predictor, cache: ForwardCache, grad_out: np.ndarray) -> Gradients:
    """Backpropagate a gradient w.r.t. the final pre-activation.

    For softmax models ``grad_out`` is the gradient w.r.t. the logits (b x c);
    for linear models it is the gradient w.r.t. the outputs (b,).
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    n = len(model.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ model.weights[i].T
        if i > 0:
            g = g * (cache.pre[i - 1] > 0)
    return Gradients(gw, gb, g)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(len(labels)), labels.astype(int)]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def cross_entropy_grad_logits(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    g = probs.copy()
    g[np.arange(len(labels)), labels.astype(int)] -= 1.0
    return g / len(labels)


def mae(outputs: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(np.abs(outputs - targets)))


def mae_grad(outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.sign(outputs - targets) / len(targets)


@dataclass
class Adam:
    """Adam with learning rate ``lr * decay_rate ** (t / decay_steps)``."""

    lr: float = 1e-3
    decay_steps: int = 1000
    decay_rate: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def learning_rate(self, t: int | None = None) -> float:
        t = self.step if t is None else t
        return self.lr * self.decay_rate ** (t / self.decay_steps)

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """One in-place step over ``params``; moment buffers are created lazily."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(params) != len(self.m):
            raise InvalidInputError("parameter list changed between steps")
        lr = self.learning_rate()
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(opt: Adam, params: list[np.ndarray], grads: list[np.ndarray]) -> Adam:
    opt.update(params, grads)
    return opt


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(path, model: Predictor, opt: Adam | None = None, extra: dict | None = None) -> None:
    """Write an ``.npz`` checkpoint; arrays are stored little-endian float64.

    Layout: ``meta`` (JSON string with version, dims, output kind, optimizer
    scalars), ``W{i}``/``b{i}`` per layer, ``adam_m{k}``/``adam_v{k}`` per
    parameter in ``model.params()`` order, plus any ``extra`` arrays.
    """
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "output": model.output,
        "dims": [model.n_inputs] + [w.shape[1] for w in model.weights],
    }
    arrays = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = w.astype("<f8")
        arrays[f"b{i}"] = b.astype("<f8")
    if opt is not None:
        meta["adam"] = {
            k: getattr(opt, k) for k in ("lr", "decay_steps", "decay_rate", "beta1", "beta2", "eps", "step")
        }
        for k, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"adam_m{k}"] = m.astype("<f8")
            arrays[f"adam_v{k}"] = v.astype("<f8")
    for k, a in (extra or {}).items():
        arrays[k] = np.asarray(a).astype("<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[Predictor, Adam | None, dict[str, np.ndarray]]:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {meta.get('format_version')}")
        n = len(meta["dims"]) - 1
        weights = [data[f"W{i}"].astype(np.float64) for i in range(n)]
        biases = [data[f"b{i}"].astype(np.float64) for i in range(n)]
        model = Predictor(weights, biases, meta["output"])
        opt = None
        if "adam" in meta:
            opt = Adam(**meta["adam"])
            k = 0
            while f"adam_m{k}" in data:
                opt.m.append(data[f"adam_m{k}"].astype(np.float64))
                opt.v.append(data[f"adam_v{k}"].astype(np.float64))
                k += 1
        known = {"meta"} | {f"W{i}" for i in range(n)} | {f"b{i}" for i in range(n)}
        extra = {
            k: data[k].astype(np.float64)
            for k in data.files
            if k not in known and not k.startswith("adam_")
        }
    return model, opt, extra
