"""
HRL Neural
Small numpy networks with hand-written gradients.

Provides dense layers, a gated recurrent unit, back-propagation through
time for episode tapes, Adam and RMSprop optimizers, the Huber loss and a
versioned JSON parameter dump. Everything runs in float64.

Parameters are kept in flat ``{name: ndarray}`` dictionaries whose arrays
are shared with the layers, so optimizers update them in place.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from hrl.errors import CheckpointError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("linear", "relu", "softmax")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, computed through tanh."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform draw in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def check_finite(values: Params, what: str):
    """Raise NumericalError if any array in ``values`` holds NaN or inf."""
    for name, value in values.items():
        if not np.all(np.isfinite(value)):
            raise NumericalError(f"non-finite {what} in {name}")


def zeros_like(params: Params) -> Params:
    """Zero arrays shaped like ``params``."""
    return {name: np.zeros_like(value) for name, value in params.items()}


class DenseLayer:
    """Fully connected layer ``y = act(W x + b)`` on vectors or row batches."""

    def __init__(self, input_size: int, output_size: int, activation: str = "linear",
                 rng: Optional[np.random.Generator] = None, name: str = "dense"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.name = name
        self.activation = activation
        self.weights = glorot_uniform(rng, output_size, input_size)
        self.bias = np.zeros(output_size)

    @property
    def input_size(self) -> int:
        """Number of input features."""
        return self.weights.shape[1]

    @property
    def output_size(self) -> int:
        """Number of output units."""
        return self.weights.shape[0]

    @property
    def params(self) -> Params:
        """Weights and bias, keyed by name."""
        return {f"{self.name}.weights": self.weights, f"{self.name}.bias": self.bias}

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Tuple]:
        """Returns (activation, cache for backward)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = np.atleast_2d(x)
        if batch.shape[1] != self.input_size:
            raise ShapeError(f"{self.name}: expected input size {self.input_size}, got {batch.shape[1]}")
        z = batch @ self.weights.T + self.bias
        if self.activation == "relu":
            y = np.maximum(z, 0.0)
        elif self.activation == "softmax":
            y = softmax(z)
        else:
            y = z
        return (y[0] if single else y), (batch, z, y, single)

    def backward(self, cache: Tuple, grad_output: np.ndarray) -> Tuple[np.ndarray, Params]:
        """Returns (grad input, parameter grads) for the cached forward pass."""
        batch, z, y, single = cache
        grad = np.atleast_2d(grad_output)
        if self.activation == "relu":
            grad = grad * (z > 0.0)
        elif self.activation == "softmax":
            grad = y * (grad - np.sum(grad * y, axis=1, keepdims=True))
        grads = {
            f"{self.name}.weights": grad.T @ batch,
            f"{self.name}.bias": grad.sum(axis=0),
        }
        grad_input = grad @ self.weights
        return (grad_input[0] if single else grad_input), grads


class FeedforwardNetwork:
    """
    Stack of dense layers.

    Hidden layers use ``hidden_activation``; the last layer uses
    ``output_activation``. ``sizes`` runs from input to output, so an empty
    hidden part (``sizes=[n_in, n_out]``) gives a single linear map.
    """

    def __init__(self, sizes: Sequence[int], hidden_activation: str = "relu",
                 output_activation: str = "linear", rng: Optional[np.random.Generator] = None,
                 name: str = "net"):
        if len(sizes) < 2:
            raise ValueError("a network needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng()
        self.name = name
        self.layers: List[DenseLayer] = []
        for index, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = index == len(sizes) - 2
            activation = output_activation if last else hidden_activation
            self.layers.append(DenseLayer(n_in, n_out, activation, rng, name=f"{name}.layer{index}"))

    @property
    def params(self) -> Params:
        """Parameters of every layer, keyed by name."""
        merged: Params = {}
        for layer in self.layers:
            merged.update(layer.params)
        return merged

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[Tuple]]:
        """Returns (output, per-layer caches)."""
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, caches: List[Tuple], grad_output: np.ndarray) -> Tuple[np.ndarray, Params]:
        """Back-propagate through all layers; returns (grad input, parameter grads)."""
        grads: Params = {}
        grad = grad_output
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad, layer_grads = layer.backward(cache, grad)
            grads.update(layer_grads)
        return grad, grads

    def copy_from(self, other: "FeedforwardNetwork"):
        """Copy every parameter of ``other`` into this network."""
        for name, value in other.params.items():
            self.params[name.replace(other.name, self.name, 1)][...] = value

    def soft_update_from(self, other: "FeedforwardNetwork", rate: float):
        """Move parameters a fraction ``rate`` of the way towards ``other``."""
        own = self.params
        for name, value in other.params.items():
            target = own[name.replace(other.name, self.name, 1)]
            target += rate * (value - target)


class GruCell:
    """
    Gated recurrent unit.

        z  = sigmoid(Wz x + Uz h + bz)
        r  = sigmoid(Wr x + Ur h + br)
        h~ = tanh(Wh x + Uh (r * h) + bh)
        h' = z * h + (1 - z) * h~
    """

    GATES = ("z", "r", "h")

    def __init__(self, input_size: int, hidden_size: int,
                 rng: Optional[np.random.Generator] = None, name: str = "gru"):
        rng = rng if rng is not None else np.random.default_rng()
        self.name = name
        self.input_size = input_size
        self.hidden_size = hidden_size
        self._params: Params = {}
        for gate in self.GATES:
            self._params[f"{name}.W{gate}"] = glorot_uniform(rng, hidden_size, input_size)
            self._params[f"{name}.U{gate}"] = glorot_uniform(rng, hidden_size, hidden_size)
            self._params[f"{name}.b{gate}"] = np.zeros(hidden_size)

    @property
    def params(self) -> Params:
        """Gate and candidate parameters, keyed by name."""
        return dict(self._params)

    def _p(self, key: str) -> np.ndarray:
        return self._params[f"{self.name}.{key}"]

    def initial_hidden(self) -> np.ndarray:
        """Zero hidden state for the start of an episode."""
        return np.zeros(self.hidden_size)

    def forward(self, x: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, Tuple]:
        """One GRU step; returns (new hidden state, cache for backward)."""
        x = np.asarray(x, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        if x.shape != (self.input_size,):
            raise ShapeError(f"{self.name}: expected input shape ({self.input_size},), got {x.shape}")
        if h.shape != (self.hidden_size,):
            raise ShapeError(f"{self.name}: expected hidden shape ({self.hidden_size},), got {h.shape}")
        z = sigmoid(self._p("Wz") @ x + self._p("Uz") @ h + self._p("bz"))
        r = sigmoid(self._p("Wr") @ x + self._p("Ur") @ h + self._p("br"))
        candidate = np.tanh(self._p("Wh") @ x + self._p("Uh") @ (r * h) + self._p("bh"))
        h_new = z * h + (1.0 - z) * candidate
        return h_new, (x, h, z, r, candidate)

    def backward(self, cache: Tuple, grad_h_new: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Params]:
        """Back-propagate one step; returns (grad x, grad h, parameter grads)."""
        x, h, z, r, candidate = cache
        grad_z = grad_h_new * (h - candidate)
        grad_candidate = grad_h_new * (1.0 - z)
        grad_h = grad_h_new * z

        grad_a = grad_candidate * (1.0 - candidate ** 2)
        grad_rh = self._p("Uh").T @ grad_a
        grad_r = grad_rh * h
        grad_h += grad_rh * r

        grad_z_pre = grad_z * z * (1.0 - z)
        grad_r_pre = grad_r * r * (1.0 - r)

        n = self.name
        grads = {
            f"{n}.Wz": np.outer(grad_z_pre, x), f"{n}.Uz": np.outer(grad_z_pre, h), f"{n}.bz": grad_z_pre,
            f"{n}.Wr": np.outer(grad_r_pre, x), f"{n}.Ur": np.outer(grad_r_pre, h), f"{n}.br": grad_r_pre,
            f"{n}.Wh": np.outer(grad_a, x), f"{n}.Uh": np.outer(grad_a, r * h), f"{n}.bh": grad_a,
        }
        grad_x = self._p("Wz").T @ grad_z_pre + self._p("Wr").T @ grad_r_pre + self._p("Wh").T @ grad_a
        grad_h += self._p("Uz").T @ grad_z_pre + self._p("Ur").T @ grad_r_pre
        return grad_x, grad_h, grads


def gru_forward(cell: GruCell, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One recurrent step; raises ShapeError on dimension mismatch."""
    return cell.forward(x, h)[0]


class RecurrentPolicy:
    """GRU layer followed by a linear layer whose softmax gives goal probabilities."""

    def __init__(self, input_size: int, hidden_size: int, output_size: int,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.cell = GruCell(input_size, hidden_size, rng, name="gru")
        self.head = DenseLayer(hidden_size, output_size, "linear", rng, name="output")

    @property
    def params(self) -> Params:
        """GRU and output layer parameters, keyed by name."""
        merged = self.cell.params
        merged.update(self.head.params)
        return merged

    def initial_hidden(self) -> np.ndarray:
        """Zero hidden state for the start of an episode."""
        return self.cell.initial_hidden()

    def step(self, x: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (new hidden state, goal logits)."""
        h_new = gru_forward(self.cell, x, h)
        logits, _ = self.head.forward(h_new)
        return h_new, logits

    def logits_for(self, inputs: Sequence[np.ndarray]) -> np.ndarray:
        """Goal logits after reading a whole input sequence from a zero hidden state."""
        h = self.initial_hidden()
        logits = np.zeros(self.head.output_size)
        for x in inputs:
            h, logits = self.step(x, h)
        return logits


@dataclass
class EpisodeTape:
    """The inputs and chosen goal indices of one episode, in decision order."""

    initial_hidden: np.ndarray
    inputs: List[np.ndarray] = field(default_factory=list)
    choices: List[int] = field(default_factory=list)

    def record(self, x: np.ndarray, choice: int):
        """Append one decision's input and chosen goal index."""
        self.inputs.append(np.asarray(x, dtype=np.float64))
        self.choices.append(int(choice))

    def __len__(self) -> int:
        return len(self.choices)


def bptt_policy_gradient(policy: RecurrentPolicy, tape: EpisodeTape, returns: Sequence[float]) -> Params:
    """
    Gradient of ``sum_t G_t ln pi(choice_t | history_t)`` with respect to
    every policy parameter, by back-propagation through time.

    The forward pass is re-run from the tape so caches match the current
    parameters.
    """
    if len(returns) != len(tape):
        raise ShapeError(f"{len(returns)} returns for a tape of {len(tape)} decisions")

    h = tape.initial_hidden
    cell_caches, head_caches = [], []
    for x in tape.inputs:
        h, cell_cache = policy.cell.forward(x, h)
        _, head_cache = policy.head.forward(h)
        cell_caches.append(cell_cache)
        head_caches.append(head_cache)

    grads = zeros_like(policy.params)
    grad_h_next = np.zeros(policy.cell.hidden_size)
    for t in reversed(range(len(tape))):
        logits = head_caches[t][1][0]
        grad_logits = -float(returns[t]) * softmax(logits)
        grad_logits[tape.choices[t]] += float(returns[t])

        grad_h, head_grads = policy.head.backward(head_caches[t], grad_logits)
        _, grad_h_prev, cell_grads = policy.cell.backward(cell_caches[t], grad_h + grad_h_next)
        for name, value in head_grads.items():
            grads[name] += value
        for name, value in cell_grads.items():
            grads[name] += value
        grad_h_next = grad_h_prev

    check_finite(grads, "gradient")
    return grads


def feedforward_policy_gradient(network: FeedforwardNetwork, inputs: np.ndarray,
                                choices: Sequence[int], returns: Sequence[float]) -> Params:
    """Gradient of ``sum_t G_t ln softmax(net(x_t))[choice_t]`` for a linear-output network."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    logits, caches = network.forward(inputs)
    returns = np.asarray(returns, dtype=np.float64)
    grad_logits = -returns[:, None] * softmax(logits)
    grad_logits[np.arange(len(choices)), np.asarray(choices)] += returns
    _, grads = network.backward(caches, grad_logits)
    check_finite(grads, "gradient")
    return grads


def huber_loss(predicted: np.ndarray, target: np.ndarray, delta: float = 1.0) -> Tuple[float, np.ndarray]:
    """Mean Huber loss and its gradient with respect to ``predicted``."""
    error = np.asarray(predicted, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    small = np.abs(error) <= delta
    loss = np.where(small, 0.5 * error ** 2, delta * (np.abs(error) - 0.5 * delta))
    grad = np.where(small, error, delta * np.sign(error)) / error.size
    return float(loss.mean()), grad


class OptimizerKind(Enum):
    ADAM = "adam"
    RMSPROP = "rmsprop"


class Direction(Enum):
    ASCEND = "ascend"
    DESCEND = "descend"


class OptimizerState:
    """
    Per-parameter moment estimates for Adam or RMSprop.

    Adam uses beta1=0.9, beta2=0.999, epsilon=1e-8 with bias correction.
    RMSprop uses rho=0.9 and adds epsilon=1e-7 outside the square root.
    """

    def __init__(self, kind: OptimizerKind = OptimizerKind.ADAM, learning_rate: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, rho: float = 0.9,
                 epsilon: Optional[float] = None):
        self.kind = kind
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.rho = rho
        self.epsilon = epsilon if epsilon is not None else (1e-8 if kind is OptimizerKind.ADAM else 1e-7)
        self.first_moment: Params = {}
        self.second_moment: Params = {}
        self.step_count = 0


def optimizer_apply(state: OptimizerState, params: Params, gradient: Params,
                    direction: Direction = Direction.DESCEND) -> Params:
    """
    Apply one optimizer step in place.

    All updates are computed before any parameter changes, so a
    non-finite update leaves the parameters untouched.

    Raises:
        NumericalError: if the gradient or the resulting update is not finite
    """
    check_finite(gradient, "gradient")
    sign = 1.0 if direction is Direction.ASCEND else -1.0
    step = state.step_count + 1
    updates: Params = {}
    moments: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    for name, grad in gradient.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name}")
        if state.kind is OptimizerKind.ADAM:
            m = state.beta1 * state.first_moment.get(name, 0.0) + (1.0 - state.beta1) * grad
            v = state.beta2 * state.second_moment.get(name, 0.0) + (1.0 - state.beta2) * grad ** 2
            m_hat = m / (1.0 - state.beta1 ** step)
            v_hat = v / (1.0 - state.beta2 ** step)
            updates[name] = sign * state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
            moments[name] = (m, v)
        else:
            v = state.rho * state.second_moment.get(name, 0.0) + (1.0 - state.rho) * grad ** 2
            updates[name] = sign * state.learning_rate * grad / (np.sqrt(v) + state.epsilon)
            moments[name] = (np.zeros_like(grad), v)

    check_finite(updates, "update")
    for name, update in updates.items():
        params[name] += update
        m, v = moments[name]
        state.first_moment[name] = m
        state.second_moment[name] = v
    state.step_count = step
    return params


def save_checkpoint(path: Union[str, Path], params: Params):
    """Write named tensors as versioned JSON; float reprs round-trip exactly."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "tensors": {
            name: {"shape": list(value.shape), "data": np.asarray(value, dtype=np.float64).ravel().tolist()}
            for name, value in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: Union[str, Path], params: Params) -> Params:
    """
    Read a checkpoint into existing parameter arrays.

    Raises:
        CheckpointError: on version, name or shape mismatches
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    tensors = payload.get("tensors", {})
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise CheckpointError(f"checkpoint names differ: missing {missing}, unexpected {extra}")

    loaded = {}
    for name, target in params.items():
        entry = tensors[name]
        if tuple(entry["shape"]) != target.shape:
            raise CheckpointError(f"{name}: checkpoint shape {tuple(entry['shape'])} != {target.shape}")
        loaded[name] = np.asarray(entry["data"], dtype=np.float64).reshape(target.shape)
    for name, value in loaded.items():
        params[name][...] = value
    logger.debug("loaded %d tensors from %s", len(loaded), path)
    return params
