import logging
import math
from dataclasses import dataclass, field

import numpy as np

from esa_mpu.datasets import ClassPriors, LabeledDataset, MpuDataset
from esa_mpu.exceptions import ConfigError
from esa_mpu.losses import LossKind
from esa_mpu.optimizers import OptimizerSettings, OptimizerState, optimizer_step
from esa_mpu.risks import (
    BatchIndices,
    Method,
    SievedIndices,
    SieveThresholds,
    binary_predictions_to_classes,
    predict_batch,
    risk_and_gradient,
    risk_value,
    sieve,
)
from esa_mpu.scorers import ScorerParams, ScorerSpec, init_params
from esa_mpu.typing import IntArray

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    method: Method
    loss: LossKind = LossKind.MARGIN_SQUARE
    epochs: int = 50
    batch_size: int = 128
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    thresholds: SieveThresholds | None = None
    sieve_start_epoch: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.sieve_start_epoch < 0:
            raise ConfigError(f"sieve_start_epoch must be >= 0, got {self.sieve_start_epoch}")
        if self.method.uses_sieve and self.thresholds is None:
            raise ConfigError(f"{self.method.value} needs sieve thresholds")


@dataclass(frozen=True)
class EvaluationMetrics:
    accuracy: float
    negative_accuracy: float
    # Accuracy per class 1..C; nan for classes absent from the test set
    class_accuracies: tuple[float, ...]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_risk: float
    test_accuracy: float
    negative_accuracy: float
    class_accuracies: tuple[float, ...]
    labeled_kept: tuple[int, ...]
    unlabeled_kept: int
    # Smallest clamped nnPU correction seen during the epoch
    min_correction: float | None = None

    @property
    def labeled_kept_total(self) -> int:
        return sum(self.labeled_kept)


@dataclass
class RunRecord:
    method: Method
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]


def evaluate(params: ScorerParams, test: LabeledDataset) -> EvaluationMetrics:
    """
    Overall accuracy, identification accuracy for the negative class C and
    per-class accuracies. A two-output scorer on a C-class test set is read
    as the binary reduction (positive -> class 1, negative -> class C).
    """
    if len(test) == 0:
        raise ConfigError("Cannot evaluate on an empty test set")
    class_count = test.class_count or params.spec.class_count
    predictions = predict_batch(params, test.features)
    if params.spec.class_count == 2 and class_count > 2:
        predictions = binary_predictions_to_classes(predictions, class_count)
    elif params.spec.class_count != class_count:
        raise ConfigError(f"Scorer has {params.spec.class_count} outputs, test set has {class_count} classes")
    correct = predictions == test.labels
    class_accuracies = []
    for class_no in range(1, class_count + 1):
        mask = test.labels == class_no
        class_accuracies.append(float(np.mean(correct[mask])) if mask.any() else math.nan)
    return EvaluationMetrics(
        accuracy=float(np.mean(correct)),
        negative_accuracy=class_accuracies[-1],
        class_accuracies=tuple(class_accuracies),
    )


def _draw(rng: np.random.Generator, kept: IntArray, size: int) -> IntArray:
    return rng.choice(kept, size=min(size, len(kept)), replace=False)


def train(
    config: TrainConfig,
    data: MpuDataset,
    spec: ScorerSpec,
    test: LabeledDataset,
    priors: ClassPriors | None = None,
) -> tuple[ScorerParams, RunRecord]:
    """
    Stratified mini-batch training. ESA methods re-sieve once per epoch
    (from `sieve_start_epoch` on, 0-based) against the parameters frozen at
    the start of that epoch; batches are then drawn from the kept examples.
    `priors` defaults to the dataset's own and is where perturbed priors go.
    """
    priors = priors or data.priors
    if spec.input_dim != data.dim:
        raise ConfigError(f"Scorer expects {spec.input_dim} features, data has {data.dim}")
    if config.method.is_binary and spec.class_count != 2:
        raise ConfigError(f"{config.method.value} trains a 2-output scorer, spec has {spec.class_count} outputs")
    if not config.method.is_binary and spec.class_count != data.class_count:
        raise ConfigError(f"Scorer has {spec.class_count} outputs, data has {data.class_count} classes")

    rng = np.random.default_rng(config.seed)
    params = init_params(spec, config.seed)
    state = OptimizerState.create(config.optimizer, params)
    record = RunRecord(method=config.method, seed=config.seed)
    full = SievedIndices.full(data)

    for epoch in range(config.epochs):
        if config.method.uses_sieve and epoch >= config.sieve_start_epoch:
            assert config.thresholds is not None
            kept = sieve(params, data, config.loss, config.thresholds)
        else:
            kept = full

        steps = math.ceil(kept.unlabeled_count / config.batch_size)
        unlabeled_order = rng.permutation(kept.unlabeled_kept)
        min_correction: float | None = None
        for step in range(steps):
            batch = BatchIndices(
                labeled=tuple(_draw(rng, labeled, config.batch_size) for labeled in kept.labeled_kept),
                unlabeled=unlabeled_order[step * config.batch_size:(step + 1) * config.batch_size],
            )
            evaluation = risk_and_gradient(config.method, params, data, config.loss, priors, batch=batch)
            if config.method is Method.NNPU and evaluation.correction is not None:
                clamped = max(0.0, evaluation.correction)
                min_correction = clamped if min_correction is None else min(min_correction, clamped)
            assert evaluation.gradient is not None
            params, state = optimizer_step(state, params, evaluation.gradient)

        train_risk = risk_value(config.method, params, data, config.loss, priors, sieved=kept)
        metrics = evaluate(params, test)
        record.epochs.append(EpochRecord(
            epoch=epoch + 1,
            train_risk=train_risk,
            test_accuracy=metrics.accuracy,
            negative_accuracy=metrics.negative_accuracy,
            class_accuracies=metrics.class_accuracies,
            labeled_kept=kept.labeled_counts,
            unlabeled_kept=kept.unlabeled_count,
            min_correction=min_correction,
        ))
        logger.info(
            "Finished epoch %d/%d",
            epoch + 1,
            config.epochs,
            extra={
                "method": config.method.value,
                "seed": config.seed,
                "train_risk": train_risk,
                "test_accuracy": metrics.accuracy,
                "negative_accuracy": metrics.negative_accuracy,
                "labeled_kept": kept.labeled_counts,
                "unlabeled_kept": kept.unlabeled_count,
            },
        )
    return params, record
