# igdf/nn/__init__.py

"""
Module: nn

Dense networks with hand-written reverse mode, unit-sphere normalization,
an Adam optimizer and a central finite-difference gradient checker.

Parameters are exposed as ordered dicts of numpy arrays named
"layers.<i>.weight" / "layers.<i>.bias". Weights have shape (fan_in, fan_out)
so a layer computes x @ W + b. Everything runs in float64.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable, Literal, Optional, Sequence, Union

import numpy as np

from igdf.errors import DatasetFormatError, NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)

NET_TAG = "igdf-net v1"
SPHERE_EPS = 1e-8
Activation = Literal["relu", "tanh"]
Params = dict[str, np.ndarray]


@dataclass
class MlpCache:
    layer_dims: tuple[int, ...]
    inputs: list[np.ndarray]  # input of every layer
    hidden: list[np.ndarray]  # post-activation of every hidden layer
    output_shape: tuple[int, ...]


class Mlp:
    """
    Multilayer perceptron: activation on hidden layers, identity on the output.
    """

    def __init__(
        self,
        layer_dims: Sequence[int],
        weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
        activation: Activation = "relu",
    ):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ShapeError(f"layer_dims needs at least two positive sizes, got {self.layer_dims}")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"Unsupported activation: {activation}")
        self.activation = activation
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            if self.weights[i].shape != (fan_in, fan_out) or self.biases[i].shape != (fan_out,):
                raise ShapeError(f"Layer {i} parameters do not match layer_dims {self.layer_dims}")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ShapeError("One weight matrix per layer is required.")

    @classmethod
    def init(
        cls,
        layer_dims: Sequence[int],
        rng: np.random.Generator,
        activation: Activation = "relu",
    ) -> "Mlp":
        """Scaled-uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(layer_dims, weights, biases, activation)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], activation: Activation = "relu") -> "Mlp":
        weights = [np.zeros((i, o)) for i, o in zip(layer_dims[:-1], layer_dims[1:])]
        biases = [np.zeros(o) for o in layer_dims[1:]]
        return cls(layer_dims, weights, biases, activation)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> Params:
        params: Params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"layers.{i}.weight"] = w
            params[f"layers.{i}.bias"] = b
        return params

    def copy(self) -> "Mlp":
        return Mlp(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters().values()])

    def assign_flat(self, values: np.ndarray) -> None:
        offset = 0
        for param in self.parameters().values():
            param[...] = values[offset:offset + param.size].reshape(param.shape)
            offset += param.size
        if offset != len(values):
            raise ShapeError(f"Expected {offset} parameters, got {len(values)}")

    def _activate(self, pre: np.ndarray) -> np.ndarray:
        return np.maximum(pre, 0.0) if self.activation == "relu" else np.tanh(pre)

    def _activation_grad(self, post: np.ndarray) -> np.ndarray:
        # relu subgradient at exactly 0 is 0
        return (post > 0.0).astype(np.float64) if self.activation == "relu" else 1.0 - post ** 2

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise ShapeError(f"Expected input of width {self.layer_dims[0]}, got shape {x.shape}")
        inputs, hidden = [], []
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w + b
            if i < self.n_layers - 1:
                h = self._activate(h)
                hidden.append(h)
        return h, MlpCache(self.layer_dims, inputs, hidden, h.shape)

    def backward(self, cache: MlpCache, grad_out: np.ndarray) -> tuple[Params, np.ndarray]:
        """Exact reverse-mode gradients; returns (parameter grads, input grad)."""
        if cache.layer_dims != self.layer_dims or grad_out.shape != cache.output_shape:
            raise ShapeError("Cache does not match this network or the output gradient shape.")
        grads: Params = {}
        delta = grad_out
        for i in reversed(range(self.n_layers)):
            grads[f"layers.{i}.weight"] = cache.inputs[i].T @ delta
            grads[f"layers.{i}.bias"] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * self._activation_grad(cache.hidden[i - 1])
        ordered = {name: grads[name] for name in self.parameters()}
        return ordered, delta

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    return mlp.forward(x)


def backward(mlp: Mlp, cache: MlpCache, grad_out: np.ndarray) -> tuple[Params, np.ndarray]:
    return mlp.backward(cache, grad_out)


# ---------------------------------------------------------------- sphere

@dataclass
class SphereCache:
    unit: np.ndarray
    norms: np.ndarray  # stabilized norms actually divided by
    raw_norms: np.ndarray


def normalize_sphere(x: np.ndarray) -> tuple[np.ndarray, SphereCache]:
    """
    Row-wise x / ||x||. Rows with norm below 1e-8 divide by ||x|| + 1e-8 instead.
    """
    x = np.asarray(x, dtype=np.float64)
    raw_norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms = np.where(raw_norms < SPHERE_EPS, raw_norms + SPHERE_EPS, raw_norms)
    unit = x / norms
    return unit, SphereCache(unit=unit, norms=norms, raw_norms=raw_norms)


def normalize_sphere_backward(cache: SphereCache, grad_unit: np.ndarray) -> np.ndarray:
    """
    Exact gradient of x / n(x) with n the stabilized norm:

        g / n - u (u . g) / ||x||

    which is the tangent-space projection (g - u (u . g)) / ||x|| whenever
    no stabilizer was added. Zero rows have no radial term.
    """
    u = cache.unit
    radial = u * np.sum(u * grad_unit, axis=1, keepdims=True)
    scale = np.divide(cache.norms, cache.raw_norms, out=np.zeros_like(cache.norms), where=cache.raw_norms > 0)
    return (grad_unit - scale * radial) / cache.norms


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, learning_rate: float = 3e-4, **kwargs) -> "OptimizerState":
        return cls(
            learning_rate=learning_rate,
            first_moment={name: np.zeros_like(p) for name, p in params.items()},
            second_moment={name: np.zeros_like(p) for name, p in params.items()},
            **kwargs,
        )


def adam_step(state: OptimizerState, params: Params, grads: Params) -> tuple[Params, OptimizerState]:
    """
    One bias-corrected Adam update, applied to ``params`` in place.

    Raises:
    - NonFiniteGradientError naming the first parameter with a NaN/inf gradient.
    - ShapeError when a gradient or moment does not match its parameter.
    """
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape or state.first_moment[name].shape != param.shape:
            raise ShapeError(f"Gradient/moment shape mismatch for parameter '{name}'")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad ** 2
        param -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


# ---------------------------------------------------------------- gradient check

def gradient_check(
    loss_fn: Callable[[], float],
    params: Params,
    analytic: Params,
    step: float = 1e-6,
) -> dict[str, float]:
    """
    Central finite differences of ``loss_fn`` w.r.t. every entry of ``params``.

    ``loss_fn`` must read the arrays in ``params`` (they are perturbed in
    place and restored). Returns the norm-wise relative error per parameter:
    ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-12).
    """
    errors = {}
    for name, param in params.items():
        numeric = np.zeros_like(param)
        flat = param.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            upper = loss_fn()
            flat[i] = original - step
            lower = loss_fn()
            flat[i] = original
            numeric_flat[i] = (upper - lower) / (2.0 * step)
        diff = np.linalg.norm(analytic[name] - numeric)
        scale = max(np.linalg.norm(analytic[name]) + np.linalg.norm(numeric), 1e-12)
        errors[name] = float(diff / scale)
    return errors


# ---------------------------------------------------------------- checkpoints

def parse_header_fields(line: str, tag: str) -> dict[str, str]:
    parts = [p.strip() for p in line.strip().split(";")]
    if parts[0] != tag:
        raise DatasetFormatError(f"Expected a '{tag}' header, got {line.strip()!r}")
    fields = {}
    for part in parts[1:]:
        key, _, value = part.partition("=")
        fields[key.strip()] = value.strip()
    return fields


def write_net(handle: BinaryIO, mlp: Mlp, seed: int = 0, binary: bool = False) -> None:
    """Append one net block (header line plus flat parameters) to ``handle``."""
    dims = ",".join(str(d) for d in mlp.layer_dims)
    encoding = "binary" if binary else "text"
    header = f"{NET_TAG}; dims={dims}; seed={seed}; activation={mlp.activation}; encoding={encoding}\n"
    handle.write(header.encode("ascii"))
    values = mlp.flat()
    if binary:
        handle.write(values.astype("<f8").tobytes())
    else:
        handle.write(("\n".join("%.17g" % v for v in values) + "\n").encode("ascii"))


def read_net(handle: BinaryIO) -> tuple[Mlp, int]:
    """Read one net block written by ``write_net``; returns (mlp, seed)."""
    fields = parse_header_fields(handle.readline().decode("ascii"), NET_TAG)
    dims = [int(d) for d in fields["dims"].split(",")]
    activation = fields.get("activation", "relu")
    mlp = Mlp.zeros(dims, activation=activation)
    n_params = sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))
    if fields.get("encoding", "text") == "binary":
        raw = handle.read(8 * n_params)
        if len(raw) != 8 * n_params:
            raise DatasetFormatError("Truncated binary net block.")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    else:
        try:
            values = np.array([float(handle.readline()) for _ in range(n_params)])
        except ValueError as e:
            raise DatasetFormatError(f"Malformed net parameter line: {e}") from e
    mlp.assign_flat(values)
    return mlp, int(fields.get("seed", 0))


def save_mlp(mlp: Mlp, path: Union[str, Path], seed: int = 0, binary: Optional[bool] = None) -> Path:
    """Save a checkpoint; ``binary`` defaults to True for a .bin suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    binary = path.suffix == ".bin" if binary is None else binary
    with open(path, "wb") as handle:
        write_net(handle, mlp, seed=seed, binary=binary)
    return path


def load_mlp(path: Union[str, Path]) -> tuple[Mlp, int]:
    with open(path, "rb") as handle:
        return read_net(handle)


__all__ = [
    "Mlp",
    "MlpCache",
    "OptimizerState",
    "SphereCache",
    "adam_step",
    "backward",
    "forward",
    "gradient_check",
    "parse_header_fields",
    "load_mlp",
    "normalize_sphere",
    "normalize_sphere_backward",
    "read_net",
    "save_mlp",
    "write_net",
]
