from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from esa_mpu.exceptions import ConfigError, DivergenceError, InvalidInputError
from esa_mpu.scorers import ScorerParams


class OptimizerMethod(Enum):
    SGD = "sgd"
    ADADELTA = "adadelta"

    @classmethod
    def parse(cls, value: "str | OptimizerMethod") -> "OptimizerMethod":
        if isinstance(value, OptimizerMethod):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError as e:
            raise InvalidInputError(f'Unknown optimizer "{value}" (choose from sgd, adadelta)') from e


@dataclass(frozen=True)
class OptimizerSettings:
    method: OptimizerMethod = OptimizerMethod.ADADELTA
    learning_rate: float = 0.08
    momentum: float = 0.0
    rho: float = 0.95
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be a nonnegative number, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class OptimizerState:
    """
    SGD keeps one velocity buffer; Adadelta keeps running averages of squared
    gradients and squared updates. Buffers are shaped like the parameters.
    """
    settings: OptimizerSettings
    buffers: dict[str, ScorerParams] = field(default_factory=dict)

    @classmethod
    def create(cls, settings: OptimizerSettings, params: ScorerParams) -> "OptimizerState":
        if settings.method is OptimizerMethod.SGD:
            names = ["velocity"]
        else:
            names = ["mean_sq_grad", "mean_sq_delta"]
        return cls(settings=settings, buffers={name: params.zeros_like() for name in names})


def _check_finite(grads: ScorerParams):
    for idx, layer in enumerate(grads.layers):
        if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
            raise DivergenceError(f"Non-finite gradient in layer {idx}", layer=idx)


def optimizer_step(
    state: OptimizerState,
    params: ScorerParams,
    grads: ScorerParams,
) -> tuple[ScorerParams, OptimizerState]:
    _check_finite(grads)
    settings = state.settings
    lr = settings.learning_rate
    new_params = params.copy()

    if settings.method is OptimizerMethod.SGD:
        velocity = state.buffers["velocity"].copy()
        for p_layer, v_layer, g_layer in zip(new_params.layers, velocity.layers, grads.layers):
            for name in ("weight", "bias"):
                v = settings.momentum * getattr(v_layer, name) - lr * getattr(g_layer, name)
                setattr(v_layer, name, v)
                setattr(p_layer, name, getattr(p_layer, name) + v)
        return new_params, OptimizerState(settings=settings, buffers={"velocity": velocity})

    rho, eps = settings.rho, settings.epsilon
    mean_sq_grad = state.buffers["mean_sq_grad"].copy()
    mean_sq_delta = state.buffers["mean_sq_delta"].copy()
    for p_layer, sg_layer, sd_layer, g_layer in zip(
        new_params.layers, mean_sq_grad.layers, mean_sq_delta.layers, grads.layers
    ):
        for name in ("weight", "bias"):
            g = getattr(g_layer, name)
            sq_grad = rho * getattr(sg_layer, name) + (1.0 - rho) * g ** 2
            delta = -(np.sqrt(getattr(sd_layer, name) + eps) / np.sqrt(sq_grad + eps)) * g
            setattr(sg_layer, name, sq_grad)
            setattr(sd_layer, name, rho * getattr(sd_layer, name) + (1.0 - rho) * delta ** 2)
            setattr(p_layer, name, getattr(p_layer, name) + lr * delta)
    return new_params, OptimizerState(
        settings=settings,
        buffers={"mean_sq_grad": mean_sq_grad, "mean_sq_delta": mean_sq_delta},
    )
