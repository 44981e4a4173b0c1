"""
C-output scorers f = (f_1, ..., f_C): a linear model when `hidden_layers` is
empty, otherwise a rectified-linear MLP. Gradients are computed in reverse
mode by `backward()`; all arithmetic is double precision.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from esa_mpu.exceptions import ConfigError, ShapeError
from esa_mpu.typing import ArrayLike, FloatArray

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ScorerSpec:
    input_dim: int
    class_count: int
    hidden_layers: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError(f"Hidden layer sizes must be positive, got {self.hidden_layers}")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.class_count)

    @property
    def is_linear(self) -> bool:
        return not self.hidden_layers


def binary_spec(input_dim: int, hidden_layers: Sequence[int] = ()) -> ScorerSpec:
    """Two-output scorer for the binary (UPU/nnPU) reduction, g = f_1 - f_2."""
    return ScorerSpec(input_dim=input_dim, class_count=2, hidden_layers=tuple(hidden_layers))


@dataclass
class Layer:
    weight: FloatArray
    bias: FloatArray


@dataclass
class ScorerParams:
    """
    Parameters of a scorer, one `Layer` per affine map. Gradients and
    optimizer accumulators use the same container.
    """
    spec: ScorerSpec
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.layers) != len(sizes) - 1:
            raise ShapeError(f"Expected {len(sizes) - 1} layers, got {len(self.layers)}")
        for idx, layer in enumerate(self.layers):
            expected = (sizes[idx + 1], sizes[idx])
            if layer.weight.shape != expected or layer.bias.shape != (sizes[idx + 1],):
                raise ShapeError(
                    f"Layer {idx}: expected weight {expected} and bias ({sizes[idx + 1]},), "
                    f"got {layer.weight.shape} and {layer.bias.shape}"
                )

    def arrays(self) -> Iterator[FloatArray]:
        for layer in self.layers:
            yield layer.weight
            yield layer.bias

    @property
    def size(self) -> int:
        return sum(arr.size for arr in self.arrays())

    def copy(self) -> "ScorerParams":
        return ScorerParams(
            spec=self.spec,
            layers=[Layer(layer.weight.copy(), layer.bias.copy()) for layer in self.layers],
        )

    def zeros_like(self) -> "ScorerParams":
        return ScorerParams(
            spec=self.spec,
            layers=[Layer(np.zeros_like(layer.weight), np.zeros_like(layer.bias)) for layer in self.layers],
        )

    def map(self, func) -> "ScorerParams":
        """New params with `func` applied to every weight and bias array."""
        return ScorerParams(
            spec=self.spec,
            layers=[Layer(func(layer.weight), func(layer.bias)) for layer in self.layers],
        )

    def flatten(self) -> FloatArray:
        return np.concatenate([arr.ravel() for arr in self.arrays()])

    def unflatten(self, vector: ArrayLike) -> "ScorerParams":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise ShapeError(f"Expected a vector of {self.size} entries, got {vector.shape}")
        layers = []
        offset = 0
        for layer in self.layers:
            w_end = offset + layer.weight.size
            b_end = w_end + layer.bias.size
            layers.append(Layer(
                vector[offset:w_end].reshape(layer.weight.shape).copy(),
                vector[w_end:b_end].copy(),
            ))
            offset = b_end
        return ScorerParams(spec=self.spec, layers=layers)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for arr in self.arrays())


def init_params(spec: ScorerSpec, seed: int) -> ScorerParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(
            weight=rng.uniform(-limit, limit, size=(fan_out, fan_in)),
            bias=np.zeros(fan_out),
        ))
    return ScorerParams(spec=spec, layers=layers)


def _as_batch(params: ScorerParams, X: ArrayLike) -> FloatArray:
    batch = np.asarray(X, dtype=np.float64)
    if batch.ndim == 1 and batch.shape[0] == 0:
        batch = batch.reshape(0, params.spec.input_dim)
    if batch.ndim != 2 or batch.shape[1] != params.spec.input_dim:
        raise ShapeError(f"Expected a (n, {params.spec.input_dim}) batch, got {batch.shape}")
    return batch


def _forward_cache(params: ScorerParams, X: FloatArray) -> list[FloatArray]:
    """Pre-activations of every layer; the last entry holds the scores."""
    pre_activations = []
    hidden = X
    for idx, layer in enumerate(params.layers):
        pre = hidden @ layer.weight.T + layer.bias
        pre_activations.append(pre)
        if idx < len(params.layers) - 1:
            hidden = np.maximum(pre, 0.0)
    return pre_activations


def forward_batch(params: ScorerParams, X: ArrayLike) -> FloatArray:
    batch = _as_batch(params, X)
    return _forward_cache(params, batch)[-1]


def forward(params: ScorerParams, x: ArrayLike) -> FloatArray:
    vector = np.asarray(x, dtype=np.float64)
    if vector.shape != (params.spec.input_dim,):
        raise ShapeError(f"Expected a feature vector of length {params.spec.input_dim}, got {vector.shape}")
    return forward_batch(params, vector[None, :])[0]


def backward(params: ScorerParams, X: ArrayLike, dL_dscores: ArrayLike) -> ScorerParams:
    """
    Gradient w.r.t. the parameters of sum_n <dL_dscores[n], f(X[n])>, i.e. of
    any batch scalar whose score-gradient is `dL_dscores`.
    """
    batch = _as_batch(params, X)
    upstream = np.asarray(dL_dscores, dtype=np.float64)
    if upstream.shape != (batch.shape[0], params.spec.class_count):
        raise ShapeError(
            f"Expected score gradients of shape ({batch.shape[0]}, {params.spec.class_count}), got {upstream.shape}"
        )
    pre_activations = _forward_cache(params, batch)
    grads: list[Layer] = []
    delta = upstream
    for idx in range(len(params.layers) - 1, -1, -1):
        inputs = batch if idx == 0 else np.maximum(pre_activations[idx - 1], 0.0)
        grads.append(Layer(weight=delta.T @ inputs, bias=delta.sum(axis=0)))
        if idx > 0:
            # ReLU subgradient at 0 is 0
            delta = (delta @ params.layers[idx].weight) * (pre_activations[idx - 1] > 0.0)
    grads.reverse()
    return ScorerParams(spec=params.spec, layers=grads)


def save_params(params: ScorerParams, path: str | Path):
    arrays: dict[str, np.ndarray] = {
        "version": np.array([CHECKPOINT_VERSION], dtype=np.int64),
        "spec": np.array(params.spec.layer_sizes, dtype=np.int64),
    }
    for idx, layer in enumerate(params.layers):
        arrays[f"weight_{idx}"] = layer.weight
        arrays[f"bias_{idx}"] = layer.bias
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.debug("Saved scorer checkpoint", extra={"path": str(path), "layer_sizes": params.spec.layer_sizes})


def load_params(path: str | Path) -> ScorerParams:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        sizes = [int(s) for s in data["spec"]]
        spec = ScorerSpec(input_dim=sizes[0], class_count=sizes[-1], hidden_layers=tuple(sizes[1:-1]))
        layers = [
            Layer(weight=np.array(data[f"weight_{idx}"]), bias=np.array(data[f"bias_{idx}"]))
            for idx in range(len(sizes) - 1)
        ]
    return ScorerParams(spec=spec, layers=layers)
