"""Feed-forward Q-value networks in NumPy.

Dense and factorised-noise layers, an optional dueling head, weighted
mean-squared error on the taken action, exact backpropagation and Adam.
"""

import json
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .constants import CHECKPOINT_FORMAT_VERSION


class NoiseMode(Enum):
    FROZEN = "frozen"      # reuse the current noise draw
    RESAMPLE = "resample"  # draw fresh noise before the pass
    ZERO = "zero"          # deterministic, mean weights only


def _scale_noise(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.sqrt(np.abs(x))


def combine_dueling(value: np.ndarray, advantage: np.ndarray) -> np.ndarray:
    """Q = V + A - mean(A) over the action axis."""
    value = np.asarray(value, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return value + advantage - advantage.mean(axis=-1, keepdims=True)


class DenseLayer:
    """Fully connected layer y = x W + b."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.bias = rng.uniform(-bound, bound, size=n_out)
        self._input = None

    def parameters(self) -> List[np.ndarray]:
        return [self.weight, self.bias]

    def resample(self, rng: np.random.Generator):
        pass

    def forward(self, x: np.ndarray, noise_mode: NoiseMode) -> np.ndarray:
        self._input = x
        return x @ self.weight + self.bias

    def backward(self, grad_out: np.ndarray):
        grads = [self._input.T @ grad_out, grad_out.sum(axis=0)]
        return grad_out @ self.weight.T, grads


class NoisyDenseLayer:
    """Dense layer with learned factorised Gaussian weight noise.

    W = mu_W + sigma_W * f(eps_in) f(eps_out)^T, b = mu_b + sigma_b * f(eps_out),
    with f(x) = sign(x) sqrt(|x|).
    """

    kind = "noisy"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 sigma_init: float = 0.5):
        bound = 1.0 / np.sqrt(n_in)
        self.weight_mu = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.bias_mu = rng.uniform(-bound, bound, size=n_out)
        self.weight_sigma = np.full((n_in, n_out), sigma_init / np.sqrt(n_in))
        self.bias_sigma = np.full(n_out, sigma_init / np.sqrt(n_in))
        self.eps_in = np.zeros(n_in)
        self.eps_out = np.zeros(n_out)
        self._input = None
        self._weight_eps = None
        self._weight = None

    def parameters(self) -> List[np.ndarray]:
        return [self.weight_mu, self.bias_mu, self.weight_sigma, self.bias_sigma]

    def resample(self, rng: np.random.Generator):
        self.eps_in = _scale_noise(rng.standard_normal(self.eps_in.shape))
        self.eps_out = _scale_noise(rng.standard_normal(self.eps_out.shape))

    def forward(self, x: np.ndarray, noise_mode: NoiseMode) -> np.ndarray:
        self._input = x
        if noise_mode is NoiseMode.ZERO:
            self._weight_eps = None
            weight, bias = self.weight_mu, self.bias_mu
        else:
            self._weight_eps = np.outer(self.eps_in, self.eps_out)
            weight = self.weight_mu + self.weight_sigma * self._weight_eps
            bias = self.bias_mu + self.bias_sigma * self.eps_out
        self._weight = weight
        return x @ weight + bias

    def backward(self, grad_out: np.ndarray):
        grad_weight = self._input.T @ grad_out
        grad_bias = grad_out.sum(axis=0)
        if self._weight_eps is None:
            sigma_grads = [np.zeros_like(self.weight_sigma), np.zeros_like(self.bias_sigma)]
        else:
            sigma_grads = [grad_weight * self._weight_eps, grad_bias * self.eps_out]
        return grad_out @ self._weight.T, [grad_weight, grad_bias] + sigma_grads


@dataclass(frozen=True)
class Architecture:
    """Descriptor sufficient to rebuild a network."""

    input_dim: int
    n_actions: int
    hidden_layers: tuple
    dueling: bool
    noisy: bool
    sigma_init: float

    def to_json(self) -> str:
        data = asdict(self)
        data["hidden_layers"] = list(self.hidden_layers)
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        data = json.loads(text)
        data["hidden_layers"] = tuple(data["hidden_layers"])
        return cls(**data)


@dataclass
class BackwardResult:
    loss: float
    gradients: List[np.ndarray]
    td_errors: np.ndarray  # Q(s, a) - target, per sample


class QNetwork:
    """Feed-forward action-value network.

    The first layer is always a plain dense layer; in noisy networks every
    later layer (hidden and head) is a ``NoisyDenseLayer``. Hidden layers use
    ReLU. The dueling head splits after the last hidden layer into a one-unit
    value stream and an n-action advantage stream.
    """

    def __init__(self, input_dim: int, n_actions: int, hidden_layers: Sequence[int] = (128, 128),
                 dueling: bool = False, noisy: bool = False, sigma_init: float = 0.5,
                 seed: Optional[int] = None):
        self.architecture = Architecture(
            input_dim=int(input_dim),
            n_actions=int(n_actions),
            hidden_layers=tuple(int(h) for h in hidden_layers),
            dueling=bool(dueling),
            noisy=bool(noisy),
            sigma_init=float(sigma_init),
        )
        seed_seq = np.random.SeedSequence(seed)
        init_seed, noise_seed = seed_seq.spawn(2)
        rng = np.random.default_rng(init_seed)
        self.noise_rng = np.random.default_rng(noise_seed)

        sizes = [self.input_dim, *self.architecture.hidden_layers]
        self.body = [self._make_layer(sizes[i], sizes[i + 1], i, rng) for i in range(len(sizes) - 1)]

        head_index = len(self.body)
        if dueling:
            self.value_head = self._make_layer(sizes[-1], 1, head_index, rng)
            self.advantage_head = self._make_layer(sizes[-1], self.n_actions, head_index, rng)
            self.heads = [self.value_head, self.advantage_head]
        else:
            self.output_head = self._make_layer(sizes[-1], self.n_actions, head_index, rng)
            self.heads = [self.output_head]

        self._relu_masks: List[np.ndarray] = []
        if noisy:
            self.resample_noise()

    def _make_layer(self, n_in: int, n_out: int, index: int, rng: np.random.Generator):
        if self.architecture.noisy and index > 0:
            return NoisyDenseLayer(n_in, n_out, rng, self.architecture.sigma_init)
        return DenseLayer(n_in, n_out, rng)

    @property
    def input_dim(self) -> int:
        return self.architecture.input_dim

    @property
    def n_actions(self) -> int:
        return self.architecture.n_actions

    @property
    def layers(self) -> list:
        return self.body + self.heads

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def has_noise(self) -> bool:
        return any(layer.kind == "noisy" for layer in self.layers)

    def resample_noise(self):
        """Draw fresh factorised noise for every noisy layer (no-op otherwise)."""
        for layer in self.layers:
            layer.resample(self.noise_rng)

    def reseed_noise(self, seed: int):
        self.noise_rng = np.random.default_rng(seed)

    def _hidden(self, x: np.ndarray, noise_mode: NoiseMode) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"Expected input of width {self.input_dim}, got shape {x.shape}")

        if noise_mode is NoiseMode.RESAMPLE:
            self.resample_noise()

        self._relu_masks = []
        h = x
        for layer in self.body:
            z = layer.forward(h, noise_mode)
            mask = z > 0
            self._relu_masks.append(mask)
            h = z * mask
        return h

    def value_and_advantage(self, x: np.ndarray, noise_mode: NoiseMode = NoiseMode.FROZEN):
        """Separate value and advantage streams of a dueling network."""
        if not self.architecture.dueling:
            raise ValueError("value_and_advantage requires a dueling network")
        single = np.ndim(x) == 1
        h = self._hidden(np.atleast_2d(x), noise_mode)
        value = self.value_head.forward(h, noise_mode)
        advantage = self.advantage_head.forward(h, noise_mode)
        if single:
            return value[0], advantage[0]
        return value, advantage

    def forward(self, x: np.ndarray, noise_mode: NoiseMode = NoiseMode.FROZEN) -> np.ndarray:
        """Q values for a single input vector or a batch of inputs."""
        single = np.ndim(x) == 1
        h = self._hidden(np.atleast_2d(x), noise_mode)
        if self.architecture.dueling:
            q = combine_dueling(self.value_head.forward(h, noise_mode),
                                self.advantage_head.forward(h, noise_mode))
        else:
            q = self.output_head.forward(h, noise_mode)
        return q[0] if single else q

    def backward(self, inputs: np.ndarray, actions: np.ndarray, targets: np.ndarray,
                 weights: Optional[np.ndarray] = None,
                 noise_mode: NoiseMode = NoiseMode.FROZEN) -> BackwardResult:
        """Gradients of the weighted mean-squared TD error on the taken actions.

        loss = mean_i w_i (Q(s_i, a_i) - y_i)^2
        """
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.float64)
        batch = len(actions)
        weights = np.ones(batch) if weights is None else np.asarray(weights, dtype=np.float64)

        q = self.forward(inputs, noise_mode)
        rows = np.arange(batch)
        td_errors = q[rows, actions] - targets
        loss = float(np.mean(weights * td_errors ** 2))

        grad_q = np.zeros_like(q)
        grad_q[rows, actions] = 2.0 * weights * td_errors / batch

        if self.architecture.dueling:
            grad_value = grad_q.sum(axis=1, keepdims=True)
            grad_advantage = grad_q - grad_q.mean(axis=1, keepdims=True)
            grad_h_v, value_grads = self.value_head.backward(grad_value)
            grad_h_a, advantage_grads = self.advantage_head.backward(grad_advantage)
            grad_h = grad_h_v + grad_h_a
            head_grads = value_grads + advantage_grads
        else:
            grad_h, head_grads = self.output_head.backward(grad_q)

        body_grads = []
        for layer, mask in zip(reversed(self.body), reversed(self._relu_masks)):
            grad_h, layer_grads = layer.backward(grad_h * mask)
            body_grads = layer_grads + body_grads

        return BackwardResult(loss=loss, gradients=body_grads + head_grads, td_errors=td_errors)


def copy_parameters(source: QNetwork, destination: QNetwork):
    """Copy parameters (not noise draws) between networks of identical architecture."""
    if source.architecture != destination.architecture:
        raise ValueError(
            f"Architecture mismatch: {source.architecture} vs {destination.architecture}"
        )
    for src, dst in zip(source.parameters(), destination.parameters()):
        np.copyto(dst, src)


def clip_by_global_norm(gradients: List[np.ndarray], max_norm: float) -> List[np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in gradients))
    if total <= max_norm or total == 0.0:
        return gradients
    scale = max_norm / total
    return [g * scale for g in gradients]


class AdamOptimizer:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, parameters: List[np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8,
                 max_grad_norm: Optional[float] = None):
        self.parameters = list(parameters)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.max_grad_norm = max_grad_norm
        self.first_moments = [np.zeros_like(p) for p in self.parameters]
        self.second_moments = [np.zeros_like(p) for p in self.parameters]
        self.step_count = 0

    def step(self, gradients: List[np.ndarray]):
        if len(gradients) != len(self.parameters):
            raise ValueError(f"Expected {len(self.parameters)} gradients, got {len(gradients)}")
        for p, g in zip(self.parameters, gradients):
            if p.shape != g.shape:
                raise ValueError(f"Gradient shape {g.shape} does not match parameter {p.shape}")

        if self.max_grad_norm is not None:
            gradients = clip_by_global_norm(gradients, self.max_grad_norm)

        t = self.step_count + 1
        new_moments = []
        new_values = []
        for p, g, m, v in zip(self.parameters, gradients, self.first_moments, self.second_moments):
            m_new = self.beta1 * m + (1.0 - self.beta1) * g
            v_new = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m_new / (1.0 - self.beta1 ** t)
            v_hat = v_new / (1.0 - self.beta2 ** t)
            new_moments.append((m_new, v_new))
            new_values.append(p - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon))

        if not all(np.all(np.isfinite(value)) for value in new_values):
            raise FloatingPointError("Adam update produced non-finite parameters")

        for p, value, m, v, (m_new, v_new) in zip(self.parameters, new_values, self.first_moments,
                                                   self.second_moments, new_moments):
            np.copyto(p, value)
            np.copyto(m, m_new)
            np.copyto(v, v_new)
        self.step_count = t


def save_network(network: QNetwork, path) -> Path:
    """Write architecture and parameters to a ``.npz`` checkpoint."""
    path = Path(path)
    arrays = {f"param_{i}": p for i, p in enumerate(network.parameters())}
    np.savez(
        path,
        format_version=np.array(CHECKPOINT_FORMAT_VERSION),
        architecture=np.array(network.architecture.to_json()),
        **arrays,
    )
    logging.getLogger(__name__).debug(f"[Neural] Saved network: {path}")
    return path


def load_network(path, seed: Optional[int] = None) -> QNetwork:
    """Rebuild a network from a ``.npz`` checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"Unsupported network checkpoint version {version}")
        architecture = Architecture.from_json(str(data["architecture"]))
        network = QNetwork(
            input_dim=architecture.input_dim,
            n_actions=architecture.n_actions,
            hidden_layers=architecture.hidden_layers,
            dueling=architecture.dueling,
            noisy=architecture.noisy,
            sigma_init=architecture.sigma_init,
            seed=seed,
        )
        for i, p in enumerate(network.parameters()):
            stored = data[f"param_{i}"]
            if stored.shape != p.shape:
                raise ValueError(f"Parameter {i} shape {stored.shape} does not match {p.shape}")
            np.copyto(p, stored)
    return network
