"""Dense networks with hand-written backprop, plus Adam.

Everything that creates or updates parameters lives here. A model is a flat
float64 parameter vector together with the layer widths; for each layer the
weight matrix (in, out) is stored row-major, followed by its bias (out,).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


class ShapeError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def num_params(topology) -> int:
    return sum((a + 1) * b for a, b in zip(topology[:-1], topology[1:]))


@dataclass(frozen=True)
class ModelState:
    topology: tuple[int, ...]
    activations: tuple[str, ...]
    params: np.ndarray

    def __post_init__(self):
        topology = tuple(int(w) for w in self.topology)
        object.__setattr__(self, "topology", topology)
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(topology) < 2 or min(topology) < 1:
            raise ShapeError(f"bad topology {topology}")
        if len(self.activations) != len(topology) - 1:
            raise ShapeError("need one activation per layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (num_params(topology),):
            raise ShapeError(
                f"params has shape {params.shape}, topology needs {num_params(topology)}"
            )
        if not np.all(np.isfinite(params)):
            raise NumericError("non-finite parameter")
        object.__setattr__(self, "params", params)

    @property
    def input_dim(self) -> int:
        return self.topology[0]

    @property
    def output_dim(self) -> int:
        return self.topology[-1]

    def layers(self) -> Iterator[tuple[np.ndarray, np.ndarray, str]]:
        """Yield (weight, bias, activation) views into ``params``."""
        offset = 0
        for (n_in, n_out), act in zip(zip(self.topology[:-1], self.topology[1:]), self.activations):
            w = self.params[offset:offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = self.params[offset:offset + n_out]
            offset += n_out
            yield w, b, act

    def with_params(self, params: np.ndarray) -> "ModelState":
        return replace(self, params=params)


def init_model(topology, rng: np.random.Generator, hidden_activation="tanh",
               output_activation="identity") -> ModelState:
    """Glorot-uniform weights, zero biases."""
    topology = tuple(int(w) for w in topology)
    chunks = []
    for n_in, n_out in zip(topology[:-1], topology[1:]):
        bound = math.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    acts = (hidden_activation,) * (len(topology) - 2) + (output_activation,)
    return ModelState(topology, acts, np.concatenate(chunks))


@dataclass(frozen=True)
class GradientVector:
    values: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "norm", float(np.linalg.norm(values)))

    def __len__(self):
        return self.values.shape[0]

    def dot(self, other: "GradientVector") -> float:
        return float(self.values @ other.values)


def _activate(z, act):
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z, a, act):
    if act == "tanh":
        return 1.0 - a * a
    if act == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def _check_inputs(model, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"inputs of shape {x.shape} do not match input width {model.input_dim}")
    return x


def _forward_trace(model, x):
    trace = []
    a = x
    for w, b, act in model.layers():
        z = a @ w + b
        out = _activate(z, act)
        trace.append((a, z, out))
        a = out
    return a, trace


def forward(model: ModelState, inputs) -> np.ndarray:
    x = _check_inputs(model, inputs)
    out, _ = _forward_trace(model, x)
    return out


def _targets(task, y, n, out_dim):
    if task.kind == "classification":
        y = np.asarray(y)
        if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
            raise ShapeError("classification targets must be an integer vector")
        if y.size and (y.min() < 0 or y.max() >= out_dim):
            raise ShapeError(f"class index out of range [0, {out_dim})")
        return y
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != (n, out_dim):
        raise ShapeError(f"targets of shape {y.shape}, expected {(n, out_dim)}")
    return y


def _per_example_nll(task, out, y):
    """Per-example loss and d(loss_i)/d(out_i)."""
    if task.kind == "classification":
        shifted = out - out.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(out.shape[0])
        losses = log_norm - shifted[rows, y]
        dout = np.exp(shifted - log_norm[:, None])
        dout[rows, y] -= 1.0
        return losses, dout
    # unit-variance Gaussian NLL without its additive constant
    resid = out - y
    return 0.5 * np.sum(resid * resid, axis=1), resid


def _backward(model, trace, dout):
    """Backprop a (n, out) upstream gradient; returns per-layer (a_in, delta)."""
    deltas = []
    grad_a = dout
    layers = list(model.layers())
    for (w, _, act), (a_in, z, a_out) in zip(reversed(layers), reversed(trace)):
        delta = grad_a * _activation_grad(z, a_out, act)
        deltas.append((a_in, delta))
        grad_a = delta @ w.T
    deltas.reverse()
    return deltas


def per_example_losses(model: ModelState, inputs, targets, task) -> np.ndarray:
    x = _check_inputs(model, inputs)
    if x.shape[0] == 0:
        raise EmptyBatchError("empty batch")
    out, _ = _forward_trace(model, x)
    y = _targets(task, targets, x.shape[0], model.output_dim)
    losses, _ = _per_example_nll(task, out, y)
    return losses


def loss_and_grad(model: ModelState, inputs, targets, task) -> tuple[float, GradientVector]:
    """Batch-mean negative log-likelihood and its exact gradient."""
    x = _check_inputs(model, inputs)
    n = x.shape[0]
    if n == 0:
        raise EmptyBatchError("empty batch")
    y = _targets(task, targets, n, model.output_dim)
    with np.errstate(over="ignore", invalid="ignore"):
        out, trace = _forward_trace(model, x)
        losses, dout = _per_example_nll(task, out, y)
        loss = float(losses.mean())
        deltas = _backward(model, trace, dout / n)
        chunks = []
        for a_in, delta in deltas:
            chunks.append((a_in.T @ delta).ravel())
            chunks.append(delta.sum(axis=0))
        grad = np.concatenate(chunks)
    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss or gradient")
    return loss, GradientVector(grad)


def per_example_grad_norms(model: ModelState, inputs, targets, task) -> np.ndarray:
    """Euclidean norm of each single-example loss gradient.

    For a dense layer the weight gradient of one example is the outer product
    of its input activation and its delta, so its squared Frobenius norm is the
    product of the two squared norms.
    """
    x = _check_inputs(model, inputs)
    if x.shape[0] == 0:
        raise EmptyBatchError("empty batch")
    y = _targets(task, targets, x.shape[0], model.output_dim)
    out, trace = _forward_trace(model, x)
    _, dout = _per_example_nll(task, out, y)
    sq = np.zeros(x.shape[0])
    for a_in, delta in _backward(model, trace, dout):
        sq += (np.sum(a_in * a_in, axis=1) + 1.0) * np.sum(delta * delta, axis=1)
    return np.sqrt(sq)


def grad_check(model: ModelState, inputs, targets, task, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / (|analytic| + step)."""
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    _, grad = loss_and_grad(model, inputs, targets, task)
    theta = model.params
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        up, _ = loss_and_grad(model.with_params(bumped), inputs, targets, task)
        bumped[i] = theta[i] - step
        down, _ = loss_and_grad(model.with_params(bumped), inputs, targets, task)
        numeric[i] = (up - down) / (2.0 * step)
    return float(np.max(np.abs(grad.values - numeric) / (np.abs(grad.values) + step)))


@dataclass(frozen=True)
class OptimizerState:
    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.first_moment.shape != self.second_moment.shape:
            raise ShapeError("moment vectors differ in shape")
        if self.step_count < 0:
            raise ValueError("negative step count")
        if not (self.lr > 0 and self.beta1 > 0 and self.beta2 > 0 and self.epsilon > 0):
            raise ValueError("Adam hyperparameters must be positive")


def init_optimizer(dim: int, lr: float, beta1=0.9, beta2=0.999, epsilon=1e-8) -> OptimizerState:
    return OptimizerState(0, np.zeros(dim), np.zeros(dim), lr, beta1, beta2, epsilon)


def adam_step(opt: OptimizerState, model: ModelState,
              grad: GradientVector) -> tuple[OptimizerState, ModelState]:
    g = grad.values
    if g.shape != model.params.shape or g.shape != opt.first_moment.shape:
        raise ShapeError("gradient, parameter and moment dimensions disagree")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    t = opt.step_count + 1
    m = opt.beta1 * opt.first_moment + (1.0 - opt.beta1) * g
    v = opt.beta2 * opt.second_moment + (1.0 - opt.beta2) * g * g
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    params = model.params - opt.lr * m_hat / (np.sqrt(v_hat) + opt.epsilon)
    return replace(opt, step_count=t, first_moment=m, second_moment=v), model.with_params(params)
