"""
Empirical risk estimators for multi-positive and unlabeled (MPU) data.

All multiclass estimators are built on the OVR loss: with CLm and CLu the
certain losses of `esa_mpu.losses`,

    MPU  = sum_i pi_i mean_{D_i} CLm + mean_{D_u} CLu
    ESA  = the same, with D_i and D_u replaced by their sieved subsets

since phi(f_i) - phi(f_C) + phi(-f_C) - phi(-f_i) is exactly CLm. The
binary baselines (UPU, nnPU) merge all positive classes and score with
g = f_1 - f_2 of a two-output scorer.
"""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from esa_mpu.datasets import ClassPriors, MpuDataset
from esa_mpu.exceptions import ConfigError, InvalidBatchError, InvalidInputError, UnsupportedLossError
from esa_mpu.losses import (
    LossKind,
    certain_loss_labeled,
    certain_loss_labeled_grad,
    certain_loss_unlabeled,
    ovr_loss_grad,
    phi,
    phi_grad,
)
from esa_mpu.scorers import ScorerParams, backward, forward, forward_batch
from esa_mpu.typing import ArrayLike, FloatArray, IndexSets, IntArray

logger = logging.getLogger(__name__)


class Method(Enum):
    UPU = "upu"
    NNPU = "nnpu"
    MPU = "mpu"
    NMPU = "nmpu"
    ESA = "esa"
    ESA_CONVEX = "esa_convex"

    @property
    def is_binary(self) -> bool:
        return self in (Method.UPU, Method.NNPU)

    @property
    def uses_sieve(self) -> bool:
        return self in (Method.ESA, Method.ESA_CONVEX)

    @classmethod
    def parse(cls, value: "str | Method") -> "Method":
        if isinstance(value, Method):
            return value
        try:
            return cls(value.strip().lower().replace("-", "_"))
        except ValueError as e:
            choices = ", ".join(method.value for method in cls)
            raise InvalidInputError(f'Unknown method "{value}" (choose from {choices})') from e


@dataclass(frozen=True)
class SieveThresholds:
    """Lower bounds on CLm / CLu; -inf disables sieving for that stream."""
    sigma_m: float = 0.0
    sigma_u: float = 0.0

    def __post_init__(self):
        for name in ("sigma_m", "sigma_u"):
            value = float(getattr(self, name))
            if np.isnan(value) or value == np.inf:
                raise ConfigError(f"{name} must be finite or -inf, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def disabled(cls) -> "SieveThresholds":
        return cls(sigma_m=-np.inf, sigma_u=-np.inf)

    @property
    def is_disabled(self) -> bool:
        return self.sigma_m == -np.inf and self.sigma_u == -np.inf


@dataclass(frozen=True)
class SievedIndices:
    labeled_kept: tuple[IntArray, ...]
    unlabeled_kept: IntArray

    @classmethod
    def full(cls, data: MpuDataset) -> "SievedIndices":
        return cls(
            labeled_kept=tuple(np.arange(n) for n in data.labeled_counts),
            unlabeled_kept=np.arange(data.unlabeled_count),
        )

    @property
    def labeled_counts(self) -> tuple[int, ...]:
        return tuple(len(kept) for kept in self.labeled_kept)

    @property
    def unlabeled_count(self) -> int:
        return len(self.unlabeled_kept)


@dataclass(frozen=True)
class BatchIndices:
    """One index sub-batch per labeled class plus one for the unlabeled pool."""
    labeled: tuple[IntArray, ...]
    unlabeled: IntArray


@dataclass
class RiskEvaluation:
    value: float
    gradient: ScorerParams | None = None
    # R_u^- - pi_+ R_p^-, before clamping; binary estimators only
    correction: float | None = None


def _keep(losses: FloatArray, threshold: float) -> IntArray:
    kept = np.flatnonzero(losses >= threshold)
    if kept.size == 0:
        # Never empty a set: retain the example with the largest certain loss
        kept = np.array([int(np.argmax(losses))])
    return kept


def sieve(params: ScorerParams, data: MpuDataset, kind: LossKind, thresholds: SieveThresholds) -> SievedIndices:
    """Certain-loss sieve against the given (frozen) parameters."""
    _check_classes(params, data.class_count, data.priors)
    labeled_kept = []
    for class_no, positive_set in enumerate(data.positive_sets, start=1):
        losses = certain_loss_labeled(kind, forward_batch(params, positive_set), class_no)
        labeled_kept.append(_keep(np.atleast_1d(losses), thresholds.sigma_m))
    unlabeled_losses = certain_loss_unlabeled(kind, forward_batch(params, data.unlabeled))
    sieved = SievedIndices(
        labeled_kept=tuple(labeled_kept),
        unlabeled_kept=_keep(np.atleast_1d(unlabeled_losses), thresholds.sigma_u),
    )
    logger.debug(
        "Sieved training data",
        extra={
            "labeled_kept": sieved.labeled_counts,
            "labeled_total": data.labeled_counts,
            "unlabeled_kept": sieved.unlabeled_count,
            "unlabeled_total": data.unlabeled_count,
        },
    )
    return sieved


def _check_classes(params: ScorerParams, class_count: int, priors: ClassPriors, binary: bool = False):
    if priors.class_count != class_count:
        raise ConfigError(f"{priors.positive_count} class priors given for {class_count - 1} positive classes")
    expected = 2 if binary else class_count
    if params.spec.class_count != expected:
        if binary:
            raise ConfigError(
                "The binary reduction needs a 2-output scorer (score g = f_1 - f_2), "
                f"got {params.spec.class_count} outputs"
            )
        raise ConfigError(f"Scorer has {params.spec.class_count} outputs, data has {class_count} classes")


def _select(
    data: MpuDataset,
    labeled: IndexSets | None,
    unlabeled: IntArray | None,
) -> tuple[list[FloatArray], FloatArray]:
    if labeled is None:
        positive_sets = list(data.positive_sets)
    else:
        if len(labeled) != len(data.positive_sets):
            raise ConfigError(f"Got index sets for {len(labeled)} classes, data has {len(data.positive_sets)}")
        positive_sets = [s[np.asarray(idx, dtype=np.int64)] for s, idx in zip(data.positive_sets, labeled)]
    unlabeled_set = data.unlabeled if unlabeled is None else data.unlabeled[np.asarray(unlabeled, dtype=np.int64)]
    return positive_sets, unlabeled_set


def _evaluate(
    method: Method,
    params: ScorerParams,
    positive_sets: list[FloatArray],
    unlabeled: FloatArray,
    kind: LossKind,
    priors: ClassPriors,
    with_gradient: bool = False,
) -> RiskEvaluation:
    _check_classes(params, len(positive_sets) + 1, priors, binary=method.is_binary)
    if method is Method.ESA_CONVEX and not kind.is_linear_odd:
        raise UnsupportedLossError(
            f'The convex ESA form needs a loss with phi(z) - phi(-z) = -z; "{kind.value}" does not qualify'
        )
    if any(s.shape[0] == 0 for s in positive_sets) or unlabeled.shape[0] == 0:
        raise InvalidBatchError("Every labeled class and the unlabeled pool need at least one example")

    X = np.concatenate([*positive_sets, unlabeled])
    scores = forward_batch(params, X)
    if method.is_binary:
        evaluation, d_scores = _binary_terms(method, scores, sum(s.shape[0] for s in positive_sets), kind, priors)
    else:
        evaluation, d_scores = _multiclass_terms(method, scores, positive_sets, kind, priors)
    if with_gradient:
        evaluation.gradient = backward(params, X, d_scores)
    return evaluation


def _multiclass_terms(
    method: Method,
    scores: FloatArray,
    positive_sets: list[FloatArray],
    kind: LossKind,
    priors: ClassPriors,
) -> tuple[RiskEvaluation, FloatArray]:
    class_count = len(positive_sets) + 1
    neg = class_count - 1
    d_scores = np.zeros_like(scores)
    value = 0.0
    offset = 0
    for class_no, (positive_set, prior) in enumerate(zip(positive_sets, priors.pi), start=1):
        n = positive_set.shape[0]
        rows = slice(offset, offset + n)
        block = scores[rows]
        weight = prior / n
        pos = class_no - 1
        if method is Method.ESA_CONVEX:
            value += weight * float(np.sum(block[:, neg] - block[:, pos]))
            d_scores[rows, neg] += weight
            d_scores[rows, pos] -= weight
        elif method is Method.NMPU:
            # -phi(f_C) -> phi(-f_C) and -phi(-f_i) -> phi(f_i)
            value += weight * float(np.sum(2.0 * phi(kind, block[:, pos]) + 2.0 * phi(kind, -block[:, neg])))
            d_scores[rows, pos] += weight * 2.0 * phi_grad(kind, block[:, pos])
            d_scores[rows, neg] -= weight * 2.0 * phi_grad(kind, -block[:, neg])
        else:
            value += weight * float(np.sum(certain_loss_labeled(kind, block, class_no)))
            d_scores[rows] += weight * certain_loss_labeled_grad(kind, block, class_no)
        offset += n
    unlabeled_scores = scores[offset:]
    n_u = unlabeled_scores.shape[0]
    value += float(np.sum(certain_loss_unlabeled(kind, unlabeled_scores))) / n_u
    d_scores[offset:] += ovr_loss_grad(kind, unlabeled_scores, class_count) / n_u
    return RiskEvaluation(value=value), d_scores


def _binary_terms(
    method: Method,
    scores: FloatArray,
    n_positive: int,
    kind: LossKind,
    priors: ClassPriors,
) -> tuple[RiskEvaluation, FloatArray]:
    g = scores[:, 0] - scores[:, 1]
    g_p, g_u = g[:n_positive], g[n_positive:]
    n_u = g_u.shape[0]
    pi_p = priors.total_positive

    positive_risk = pi_p * float(np.mean(phi(kind, g_p)))
    correction = float(np.mean(phi(kind, -g_u))) - pi_p * float(np.mean(phi(kind, -g_p)))

    d_g = np.zeros_like(g)
    d_g[:n_positive] = pi_p / n_positive * phi_grad(kind, g_p)
    if method is Method.UPU or correction >= 0:
        value = positive_risk + correction
        d_g[:n_positive] += pi_p / n_positive * phi_grad(kind, -g_p)
        d_g[n_positive:] -= phi_grad(kind, -g_u) / n_u
    else:
        value = positive_risk
    d_scores = np.stack([d_g, -d_g], axis=1)
    return RiskEvaluation(value=value, correction=correction), d_scores


def _sieved_sets(data: MpuDataset, sieved: SievedIndices | None) -> tuple[list[FloatArray], FloatArray]:
    if sieved is None:
        return _select(data, None, None)
    return _select(data, sieved.labeled_kept, sieved.unlabeled_kept)


def esa_empirical_risk(
    params: ScorerParams,
    data: MpuDataset,
    kind: LossKind,
    sieved: SievedIndices,
    priors: ClassPriors,
) -> float:
    return _evaluate(Method.ESA, params, *_sieved_sets(data, sieved), kind, priors).value


def esa_empirical_risk_convex(
    params: ScorerParams,
    data: MpuDataset,
    kind: LossKind,
    sieved: SievedIndices,
    priors: ClassPriors,
) -> float:
    """Labeled term reduces to pi_i * mean(f_C - f_i) when phi(z) - phi(-z) = -z."""
    return _evaluate(Method.ESA_CONVEX, params, *_sieved_sets(data, sieved), kind, priors).value


def mpu_empirical_risk(params: ScorerParams, data: MpuDataset, kind: LossKind, priors: ClassPriors) -> float:
    return _evaluate(Method.MPU, params, *_sieved_sets(data, None), kind, priors).value


def nmpu_empirical_risk(params: ScorerParams, data: MpuDataset, kind: LossKind, priors: ClassPriors) -> float:
    return _evaluate(Method.NMPU, params, *_sieved_sets(data, None), kind, priors).value


def upu_empirical_risk(params: ScorerParams, data: MpuDataset, kind: LossKind, priors: ClassPriors) -> float:
    return _evaluate(Method.UPU, params, *_sieved_sets(data, None), kind, priors).value


def nnpu_empirical_risk(params: ScorerParams, data: MpuDataset, kind: LossKind, priors: ClassPriors) -> float:
    return _evaluate(Method.NNPU, params, *_sieved_sets(data, None), kind, priors).value


def nnpu_correction(params: ScorerParams, data: MpuDataset, kind: LossKind, priors: ClassPriors) -> float:
    """R_u^- - pi_+ R_p^- before nnPU clamps it at 0."""
    correction = _evaluate(Method.UPU, params, *_sieved_sets(data, None), kind, priors).correction
    assert correction is not None
    return correction


def risk_value(
    method: Method,
    params: ScorerParams,
    data: MpuDataset,
    kind: LossKind,
    priors: ClassPriors,
    sieved: SievedIndices | None = None,
) -> float:
    """Empirical risk of any estimator; `sieved` only applies to the ESA methods."""
    return _evaluate(method, params, *_sieved_sets(data, sieved if method.uses_sieve else None), kind, priors).value


def risk_and_gradient(
    method: Method,
    params: ScorerParams,
    data: MpuDataset,
    kind: LossKind,
    priors: ClassPriors,
    sieved: SievedIndices | None = None,
    batch: BatchIndices | None = None,
) -> RiskEvaluation:
    """
    Risk and parameter gradient on `batch` when given (indices into the full
    sets, drawn from the sieved ones), otherwise on the sieved/full data.
    Each stream enters through its own batch mean, so the batch gradient is
    an unbiased estimate of the full-data gradient.
    """
    if batch is not None:
        if any(len(idx) == 0 for idx in batch.labeled) or len(batch.unlabeled) == 0:
            raise InvalidBatchError("Every stream of a batch needs at least one index")
        positive_sets, unlabeled = _select(data, batch.labeled, batch.unlabeled)
    else:
        positive_sets, unlabeled = _sieved_sets(data, sieved if method.uses_sieve else None)
    return _evaluate(method, params, positive_sets, unlabeled, kind, priors, with_gradient=True)


def risk_gradient(
    method: Method,
    params: ScorerParams,
    data: MpuDataset,
    kind: LossKind,
    priors: ClassPriors,
    sieved: SievedIndices | None = None,
    batch: BatchIndices | None = None,
) -> ScorerParams:
    gradient = risk_and_gradient(method, params, data, kind, priors, sieved=sieved, batch=batch).gradient
    assert gradient is not None
    return gradient


def predict_batch(params: ScorerParams, X: ArrayLike) -> IntArray:
    """argmax over scores, 1-based; ties go to the smallest class index."""
    return np.argmax(forward_batch(params, X), axis=1).astype(np.int64) + 1


def predict(params: ScorerParams, x: ArrayLike) -> int:
    return int(np.argmax(forward(params, x))) + 1


def binary_predictions_to_classes(predictions: IntArray, class_count: int) -> IntArray:
    """
    Binary reduction: prediction 1 (positive) is credited to class 1,
    prediction 2 (negative) to class C.
    """
    return np.where(np.asarray(predictions) == 2, class_count, 1).astype(np.int64)
