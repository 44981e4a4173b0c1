"""
Binary surrogate losses, the one-versus-rest (OVR) multiclass loss built on
them, and the two certain losses used for sieving.

Every function accepts either a single score vector of length C or a batch
of shape (n, C); class labels are 1-based (1..C), the negative class being C.
For batches, `y` may be a scalar (same label for every row) or one label per
row.
"""
from enum import Enum

import numpy as np

from esa_mpu.exceptions import InvalidInputError, InvalidLabelError
from esa_mpu.typing import ArrayLike, FloatArray


class LossKind(Enum):
    SQUARE_QUARTER = "square_quarter"
    LOGISTIC = "logistic"
    MARGIN_SQUARE = "margin_square"

    @property
    def is_linear_odd(self) -> bool:
        """phi(z) - phi(-z) == -z for all z."""
        return self in (LossKind.SQUARE_QUARTER, LossKind.LOGISTIC)

    @classmethod
    def parse(cls, value: "str | LossKind") -> "LossKind":
        if isinstance(value, LossKind):
            return value
        try:
            return cls(value.strip().lower().replace("-", "_"))
        except ValueError as e:
            choices = ", ".join(kind.value for kind in cls)
            raise InvalidInputError(f'Unknown loss "{value}" (choose from {choices})') from e


def _finite(z: ArrayLike, what: str = "z") -> FloatArray:
    arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} must be finite")
    return arr


def phi(kind: LossKind, z: ArrayLike):
    z = _finite(z)
    if kind is LossKind.SQUARE_QUARTER:
        value = (1.0 - z) ** 2 / 4.0
    elif kind is LossKind.LOGISTIC:
        # log(1 + exp(-z)) without overflow for large |z|
        value = np.log1p(np.exp(-np.abs(z))) + np.maximum(-z, 0.0)
    else:
        value = (1.0 - z) ** 2
    return value if value.ndim else float(value)


def phi_grad(kind: LossKind, z: ArrayLike):
    z = _finite(z)
    if kind is LossKind.SQUARE_QUARTER:
        value = (z - 1.0) / 2.0
    elif kind is LossKind.LOGISTIC:
        # -sigmoid(-z), via tanh to stay finite everywhere
        value = -0.5 * (1.0 - np.tanh(z / 2.0))
    else:
        value = 2.0 * (z - 1.0)
    return value if value.ndim else float(value)


def _scores(scores: ArrayLike) -> FloatArray:
    arr = _finite(scores, "scores")
    if arr.ndim not in (1, 2) or arr.shape[-1] < 2:
        raise InvalidInputError(f"scores must have shape (C,) or (n, C) with C >= 2, got {arr.shape}")
    return arr


def _labels(y: ArrayLike, scores: FloatArray, upper: int) -> np.ndarray:
    labels = np.asarray(y)
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise InvalidLabelError(f"Labels must be integers, got {y!r}")
        labels = labels.astype(np.int64)
    if np.any(labels < 1) or np.any(labels > upper):
        raise InvalidLabelError(f"Label out of range 1..{upper}: {y!r}")
    if scores.ndim == 1:
        if labels.ndim:
            raise InvalidLabelError("A single score vector takes a single label")
        return labels
    if labels.ndim == 0:
        return np.full(scores.shape[0], int(labels), dtype=np.int64)
    if labels.shape != scores.shape[:1]:
        raise InvalidLabelError(f"Got {labels.shape[0]} labels for {scores.shape[0]} score rows")
    return labels.astype(np.int64)


def _pick(values: FloatArray, labels: np.ndarray) -> FloatArray:
    """values[..., y - 1] for each row."""
    if values.ndim == 1:
        return values[int(labels) - 1]
    return np.take_along_axis(values, (labels - 1)[:, None], axis=1)[:, 0]


def _ovr(kind: LossKind, scores: FloatArray, labels: np.ndarray):
    negatives = phi(kind, -scores)
    target = _pick(scores, labels)
    value = np.sum(negatives, axis=-1) + phi(kind, target) - phi(kind, -target)
    return value if np.ndim(value) else float(value)


def ovr_loss(kind: LossKind, scores: ArrayLike, y: ArrayLike):
    """phi(f_y) + sum over y' != y of phi(-f_y')."""
    arr = _scores(scores)
    return _ovr(kind, arr, _labels(y, arr, arr.shape[-1]))


def ovr_loss_grad(kind: LossKind, scores: ArrayLike, y: ArrayLike) -> FloatArray:
    arr = _scores(scores)
    labels = _labels(y, arr, arr.shape[-1])
    grad = -np.asarray(phi_grad(kind, -arr), dtype=np.float64)
    if arr.ndim == 1:
        idx = int(labels) - 1
        grad[idx] = phi_grad(kind, arr[idx])
    else:
        rows = np.arange(arr.shape[0])
        grad[rows, labels - 1] = phi_grad(kind, arr[rows, labels - 1])
    return grad


def certain_loss_labeled(kind: LossKind, scores: ArrayLike, y: ArrayLike):
    """
    CLm = L(f, y) - L(f, C). Only positive-class labels (1..C-1) are
    accepted, since labeled examples never come from the negative class.
    """
    arr = _scores(scores)
    class_count = arr.shape[-1]
    labels = _labels(y, arr, class_count - 1)
    value = _ovr(kind, arr, labels) - _ovr(kind, arr, _labels(class_count, arr, class_count))
    return value


def certain_loss_labeled_grad(kind: LossKind, scores: ArrayLike, y: ArrayLike) -> FloatArray:
    arr = _scores(scores)
    class_count = arr.shape[-1]
    labels = _labels(y, arr, class_count - 1)
    return ovr_loss_grad(kind, arr, labels) - ovr_loss_grad(kind, arr, class_count)


def certain_loss_unlabeled(kind: LossKind, scores: ArrayLike):
    """CLu = L(f, C)."""
    arr = _scores(scores)
    return _ovr(kind, arr, _labels(arr.shape[-1], arr, arr.shape[-1]))
