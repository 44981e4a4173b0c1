"""
Experiment configuration files and the drivers behind the `run`, `sweep`
and `gen_data` management commands.

A configuration file holds one `key = value` pair per line; `#` starts a
comment. Keys left out fall back to the ESA_MPU settings. Example:

    method = esa, mpu, nmpu
    dataset = idx
    images = data/train-images-idx3-ubyte.gz
    labels = data/train-labels-idx1-ubyte.gz
    positive_classes = 1, 2, 3
    negative_class = 0
    n_labeled = 500
    n_unlabeled = 3000
    repeat = 5
"""
import csv
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, TextIO

import numpy as np

from esa_mpu.datasets import (
    LabeledDataset,
    build_mpu_split,
    load_idx,
    perturb_priors,
    select_random_classes,
    shift_test_distribution,
    synth_gaussian,
    write_idx,
)
from esa_mpu.exceptions import CapacityError, ConfigError, ConfigFileError, EsaMpuError
from esa_mpu.losses import LossKind
from esa_mpu.optimizers import OptimizerMethod, OptimizerSettings
from esa_mpu.risks import Method, SieveThresholds
from esa_mpu.scorers import ScorerSpec, binary_spec
from esa_mpu.settings import esa_settings
from esa_mpu.training import RunRecord, TrainConfig, train
from esa_mpu.utils import format_float, natural_or_list

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "method", "dataset", "seed", "epoch", "train_risk", "test_acc", "neg_acc",
    "n_m_s", "n_u_s", "theta", "mu", "sigma_m", "sigma_u",
)

SWEEP_AXES = ("theta", "mu", "sigma_m", "sigma_u")

RANDOM_CLASS = "R"


@dataclass(frozen=True)
class SyntheticSource:
    class_count: int = 4
    dim: int = 2
    separation: float = 3.0
    scale: float = 1.0
    n_per_class: int = 1000

    def means(self, seed: int) -> np.ndarray:
        """Class centres on a sphere of radius `separation`."""
        rng = np.random.default_rng([seed, 7])
        directions = rng.standard_normal((self.class_count, self.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return self.separation * directions


@dataclass(frozen=True)
class ExperimentConfig:
    path: str = "<config>"
    methods: tuple[Method, ...] = (Method.ESA,)
    dataset: str = "synthetic"
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    synthetic: SyntheticSource = field(default_factory=SyntheticSource)
    # None means "pick at random", see select_random_classes()
    positive_classes: tuple[int, ...] | None = None
    negative_class: int | None = None
    n_positive: int | None = None
    n_labeled: int = 100
    n_unlabeled: int = 1000
    n_test: int | None = None
    loss: LossKind = LossKind.MARGIN_SQUARE
    hidden_layers: tuple[int, ...] = (128,)
    epochs: int = 50
    batch_size: int = 128
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    thresholds: SieveThresholds = field(default_factory=SieveThresholds)
    sieve_start_epoch: int = 1
    theta: float = 1.0
    mu: float = 1.0
    seed: int = 0
    repeat: int = 1
    output: str | None = None
    axis: str | None = None
    values: tuple[float, ...] = ()

    @classmethod
    def from_settings(cls, path: str = "<config>") -> "ExperimentConfig":
        training = esa_settings.TRAINING
        return cls(
            path=path,
            loss=LossKind.parse(training.LOSS),
            hidden_layers=tuple(training.HIDDEN_LAYERS),
            epochs=training.EPOCHS,
            batch_size=training.BATCH_SIZE,
            optimizer=OptimizerSettings(
                method=OptimizerMethod.parse(training.OPTIMIZER),
                learning_rate=training.LEARNING_RATE,
                momentum=training.MOMENTUM,
                rho=training.RHO,
                epsilon=training.EPSILON,
            ),
            thresholds=SieveThresholds(sigma_m=training.SIGMA_M, sigma_u=training.SIGMA_U),
            sieve_start_epoch=training.SIEVE_START_EPOCH,
        )

    @property
    def dataset_name(self) -> str:
        if self.dataset == "idx" and self.images:
            name = Path(self.images).name
            return name[:-3] if name.endswith(".gz") else name
        return self.dataset

    def train_config(self, method: Method, seed: int) -> TrainConfig:
        return TrainConfig(
            method=method,
            loss=self.loss,
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            thresholds=self.thresholds if method.uses_sieve else None,
            sieve_start_epoch=self.sieve_start_epoch,
            seed=seed,
        )

    def with_axis_value(self, axis: str, value: float) -> "ExperimentConfig":
        if axis == "theta":
            return dataclasses.replace(self, theta=value)
        if axis == "mu":
            return dataclasses.replace(self, mu=value)
        if axis == "sigma_m":
            return dataclasses.replace(self, thresholds=dataclasses.replace(self.thresholds, sigma_m=value))
        if axis == "sigma_u":
            return dataclasses.replace(self, thresholds=dataclasses.replace(self.thresholds, sigma_u=value))
        raise ConfigError(f'Unknown sweep axis "{axis}" (choose from {natural_or_list(SWEEP_AXES)})')


def _split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise ValueError(f"expected a positive integer, got {number}")
    return number


def _optional_int(value: str) -> int | None:
    return None if value.lower() in ("", "none", "all") else _positive_int(value)


def _hidden(value: str) -> tuple[int, ...]:
    if value.lower() in ("", "none", "linear"):
        return ()
    return tuple(_positive_int(v) for v in _split_list(value))


def _classes(value: str) -> tuple[int, ...] | int:
    """Class list, or the number of random classes for an all-"R" list."""
    items = _split_list(value)
    if not items:
        raise ValueError("expected at least one class")
    if all(item.upper() == RANDOM_CLASS for item in items):
        return len(items)
    if any(item.upper() == RANDOM_CLASS for item in items):
        raise ValueError(f'mix of "{RANDOM_CLASS}" and fixed classes is not supported')
    return tuple(int(item) for item in items)


def _negative_class(value: str) -> int | None:
    return None if value.strip().upper() == RANDOM_CLASS else int(value)


def _dataset(value: str) -> str:
    if value not in ("idx", "synthetic"):
        raise ValueError('expected "idx" or "synthetic"')
    return value


def _axis(value: str) -> str:
    if value not in SWEEP_AXES:
        raise ValueError(f"expected {natural_or_list(SWEEP_AXES)}")
    return value


# key -> (parser, setter taking (config kwargs, parsed value))
Setter = Callable[[dict[str, Any], Any], None]


def _set(name: str) -> Setter:
    def setter(kwargs: dict[str, Any], value: Any):
        kwargs[name] = value
    return setter


def _set_nested(outer: str, name: str) -> Setter:
    def setter(kwargs: dict[str, Any], value: Any):
        kwargs.setdefault(f"_{outer}", {})[name] = value
    return setter


def _set_classes(kwargs: dict[str, Any], value: tuple[int, ...] | int):
    if isinstance(value, int):
        kwargs["positive_classes"] = None
        kwargs["n_positive"] = value
    else:
        kwargs["positive_classes"] = value
        kwargs["n_positive"] = len(value)


CONFIG_KEYS: dict[str, tuple[Callable[[str], Any], Setter]] = {
    "method": (lambda v: tuple(Method.parse(m) for m in _split_list(v)), _set("methods")),
    "dataset": (_dataset, _set("dataset")),
    "images": (str, _set("images")),
    "labels": (str, _set("labels")),
    "test_images": (str, _set("test_images")),
    "test_labels": (str, _set("test_labels")),
    "synthetic_classes": (_positive_int, _set_nested("synthetic", "class_count")),
    "synthetic_dim": (_positive_int, _set_nested("synthetic", "dim")),
    "synthetic_separation": (float, _set_nested("synthetic", "separation")),
    "synthetic_scale": (float, _set_nested("synthetic", "scale")),
    "synthetic_per_class": (_positive_int, _set_nested("synthetic", "n_per_class")),
    "positive_classes": (_classes, _set_classes),
    "negative_class": (_negative_class, _set("negative_class")),
    "n_labeled": (_positive_int, _set("n_labeled")),
    "n_unlabeled": (_positive_int, _set("n_unlabeled")),
    "n_test": (_optional_int, _set("n_test")),
    "loss": (LossKind.parse, _set("loss")),
    "hidden": (_hidden, _set("hidden_layers")),
    "epochs": (_positive_int, _set("epochs")),
    "batch_size": (_positive_int, _set("batch_size")),
    "optimizer": (OptimizerMethod.parse, _set_nested("optimizer", "method")),
    "learning_rate": (float, _set_nested("optimizer", "learning_rate")),
    "momentum": (float, _set_nested("optimizer", "momentum")),
    "rho": (float, _set_nested("optimizer", "rho")),
    "epsilon": (float, _set_nested("optimizer", "epsilon")),
    "sigma_m": (float, _set_nested("thresholds", "sigma_m")),
    "sigma_u": (float, _set_nested("thresholds", "sigma_u")),
    "sieve_start_epoch": (int, _set("sieve_start_epoch")),
    "theta": (float, _set("theta")),
    "mu": (float, _set("mu")),
    "seed": (int, _set("seed")),
    "repeat": (_positive_int, _set("repeat")),
    "output": (str, _set("output")),
    "axis": (_axis, _set("axis")),
    "values": (lambda v: tuple(float(x) for x in _split_list(v)), _set("values")),
}


def parse_experiment_config(text: str, path: str = "<config>") -> ExperimentConfig:
    base = ExperimentConfig.from_settings(path)
    kwargs: dict[str, Any] = {}
    seen: dict[str, int] = {}

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(path, f'expected "key = value", got "{line}"', line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in CONFIG_KEYS:
            raise ConfigFileError(path, f'unknown key "{key}"', line_no)
        if key in seen:
            raise ConfigFileError(path, f'duplicate key "{key}" (first set on line {seen[key]})', line_no)
        seen[key] = line_no
        parser, setter = CONFIG_KEYS[key]
        try:
            setter(kwargs, parser(value))
        except (ValueError, EsaMpuError) as e:
            raise ConfigFileError(path, f'bad value for "{key}": {e}', line_no) from e

    try:
        for nested in ("synthetic", "optimizer", "thresholds"):
            overrides = kwargs.pop(f"_{nested}", None)
            if overrides:
                kwargs[nested] = dataclasses.replace(getattr(base, nested), **overrides)
        config = dataclasses.replace(base, **kwargs)
    except (ValueError, EsaMpuError) as e:
        raise ConfigFileError(path, str(e)) from e
    _validate(config)
    return config


def _validate(config: ExperimentConfig):
    def fail(message: str):
        raise ConfigFileError(config.path, message)

    fixed_classes = config.positive_classes is not None
    random_classes = not fixed_classes and config.n_positive is not None
    if fixed_classes and config.negative_class is None:
        fail('fixed "positive_classes" need a fixed "negative_class"')
    if random_classes and config.negative_class is not None:
        fail('random ("R") classes must be used for both "positive_classes" and "negative_class"')
    if not fixed_classes and not random_classes and config.negative_class is not None:
        fail('"negative_class" needs "positive_classes"')
    if config.dataset == "idx":
        if not config.images or not config.labels:
            fail('dataset "idx" needs both "images" and "labels"')
        if bool(config.test_images) != bool(config.test_labels):
            fail('"test_images" and "test_labels" must be given together')
        if not fixed_classes and not random_classes:
            fail('dataset "idx" needs "positive_classes" (use "R" entries for random classes)')
    if config.output:
        parent = Path(config.output).resolve().parent
        if not parent.is_dir():
            fail(f'output directory "{parent}" does not exist')


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_experiment_config(text, str(path))


@dataclass(frozen=True)
class ResultRow:
    method: str
    dataset: str
    seed: int | str
    epoch: int | None
    train_risk: float | None
    test_acc: float | None
    neg_acc: float | None
    n_m_s: float | None
    n_u_s: float | None
    theta: float
    mu: float
    sigma_m: float
    sigma_u: float

    def as_csv(self, float_format: str = "%.10g") -> list[str]:
        values = dataclasses.astuple(self)
        return [value if isinstance(value, str) else format_float(value, float_format) for value in values]


@dataclass
class ExperimentResult:
    rows: list[ResultRow] = field(default_factory=list)
    records: dict[Method, list[RunRecord]] = field(default_factory=dict)
    skipped: list[float] = field(default_factory=list)


def _row_tags(config: ExperimentConfig) -> dict[str, float]:
    return {
        "theta": config.theta,
        "mu": config.mu,
        "sigma_m": config.thresholds.sigma_m,
        "sigma_u": config.thresholds.sigma_u,
    }


def run_rows(config: ExperimentConfig, record: RunRecord) -> list[ResultRow]:
    return [
        ResultRow(
            method=record.method.value,
            dataset=config.dataset_name,
            seed=record.seed,
            epoch=epoch.epoch,
            train_risk=epoch.train_risk,
            test_acc=epoch.test_accuracy,
            neg_acc=epoch.negative_accuracy,
            n_m_s=epoch.labeled_kept_total,
            n_u_s=epoch.unlabeled_kept,
            **_row_tags(config),
        )
        for epoch in record.epochs
    ]


def summary_rows(config: ExperimentConfig, method: Method, records: list[RunRecord]) -> list[ResultRow]:
    """Mean and standard deviation of the final-epoch values over all seeds."""
    finals = [record.final for record in records]
    ddof = 1 if len(finals) > 1 else 0

    def column(getter: Callable) -> np.ndarray:
        return np.array([getter(final) for final in finals], dtype=np.float64)

    columns = {
        "train_risk": column(lambda e: e.train_risk),
        "test_acc": column(lambda e: e.test_accuracy),
        "neg_acc": column(lambda e: e.negative_accuracy),
        "n_m_s": column(lambda e: e.labeled_kept_total),
        "n_u_s": column(lambda e: e.unlabeled_kept),
    }
    rows = []
    for name, reduce in (("mean", np.mean), ("std", lambda a: np.std(a, ddof=ddof))):
        rows.append(ResultRow(
            method=method.value,
            dataset=config.dataset_name,
            seed=name,
            epoch=finals[0].epoch,
            **{key: float(reduce(values)) for key, values in columns.items()},
            **_row_tags(config),
        ))
    return rows


def load_sources(config: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset | None]:
    """Training source and, when configured, a separate test source."""
    if config.dataset == "synthetic":
        synthetic = config.synthetic
        source = synth_gaussian(
            class_count=synthetic.class_count,
            dim=synthetic.dim,
            means=synthetic.means(config.seed),
            scale=synthetic.scale,
            n_per_class=synthetic.n_per_class,
            seed=config.seed,
        )
        return source, None
    assert config.images and config.labels
    source = load_idx(config.images, config.labels)
    test_source = None
    if config.test_images and config.test_labels:
        test_source = load_idx(config.test_images, config.test_labels)
    return source, test_source


def _resolve_classes(config: ExperimentConfig, source: LabeledDataset, seed: int) -> tuple[list[int], int]:
    if config.positive_classes is not None:
        assert config.negative_class is not None
        return list(config.positive_classes), config.negative_class
    if config.n_positive is not None:
        return select_random_classes(source.labels, config.n_positive, seed)
    # Synthetic default: classes 1..C-1 positive, C negative
    class_count = config.synthetic.class_count
    return list(range(1, class_count)), class_count


def select_test(
    test_source: LabeledDataset,
    classes: list[int],
    n_test: int | None,
    seed: int,
) -> LabeledDataset:
    """Restrict a separate test source to the selected classes, relabeled 1..C."""
    mask = np.isin(test_source.labels, classes)
    indices = np.random.default_rng([seed, 11]).permutation(np.flatnonzero(mask))
    if n_test is not None:
        indices = indices[:n_test]
    if len(indices) == 0:
        raise CapacityError("The test source holds none of the selected classes")
    lookup = {source_class: class_no for class_no, source_class in enumerate(classes, start=1)}
    labels = np.array([lookup[int(label)] for label in test_source.labels[indices]], dtype=np.int64)
    return LabeledDataset(features=test_source.features[indices], labels=labels, class_count=len(classes))


def run_single(
    config: ExperimentConfig,
    source: LabeledDataset,
    test_source: LabeledDataset | None,
    method: Method,
    seed: int,
) -> RunRecord:
    positives, negative = _resolve_classes(config, source, seed)
    data, test = build_mpu_split(
        source, positives, negative, config.n_labeled, config.n_unlabeled, seed, n_test=config.n_test
    )
    if test_source is not None:
        test = select_test(test_source, [*positives, negative], config.n_test, seed)
    priors = data.priors if config.theta == 1.0 else perturb_priors(data.priors, config.theta)
    if config.mu != 1.0:
        test = shift_test_distribution(test, config.mu, seed)
    if method.is_binary:
        spec = binary_spec(data.dim, config.hidden_layers)
    else:
        spec = ScorerSpec(data.dim, data.class_count, config.hidden_layers)
    _, record = train(config.train_config(method, seed), data, spec, test, priors)
    logger.info(
        "Finished run",
        extra={
            "method": method.value,
            "seed": seed,
            "classes": [*positives, negative],
            "test_accuracy": record.final.test_accuracy,
        },
    )
    return record


def _map(func: Callable, tasks: list, jobs: int) -> list:
    """Ordered map, on a thread pool when jobs > 1."""
    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(func, tasks))
    return [func(task) for task in tasks]


def run_experiment(config: ExperimentConfig, jobs: int = 1, sources=None) -> ExperimentResult:
    """
    `repeat` seeded runs per method with seeds seed, seed + 1, ...; rows come
    out in (method, seed, epoch) order followed by each method's mean and
    std summary rows.
    """
    source, test_source = sources or load_sources(config)
    tasks = [(method, config.seed + r) for method in config.methods for r in range(config.repeat)]
    records = _map(lambda task: run_single(config, source, test_source, *task), tasks, jobs)

    result = ExperimentResult()
    for method in config.methods:
        method_records = [record for record in records if record.method is method]
        result.records[method] = method_records
        for record in method_records:
            result.rows.extend(run_rows(config, record))
        result.rows.extend(summary_rows(config, method, method_records))
    return result


def _try_run(point: ExperimentConfig, source, test_source, method: Method, seed: int) -> RunRecord | ConfigError:
    try:
        return run_single(point, source, test_source, method, seed)
    except ConfigError as e:
        return e


def skipped_rows(config: ExperimentConfig, axis: str, value: float) -> list[ResultRow]:
    tags = _row_tags(config)
    tags[axis] = value
    return [
        ResultRow(
            method=method.value,
            dataset=config.dataset_name,
            seed="skipped",
            epoch=None,
            train_risk=None,
            test_acc=None,
            neg_acc=None,
            n_m_s=None,
            n_u_s=None,
            **tags,
        )
        for method in config.methods
    ]


def run_sweep(config: ExperimentConfig, jobs: int = 1, sources=None) -> ExperimentResult:
    """
    run_experiment() once per axis value. Values that are invalid for their
    operation (e.g. a theta pushing the priors' sum to 1) are skipped with a
    warning row.
    """
    if config.axis is None or not config.values:
        raise ConfigFileError(config.path, 'a sweep needs "axis" and a nonempty "values" list')
    source, test_source = sources or load_sources(config)
    axis = config.axis

    points: list[ExperimentConfig | ConfigError] = []
    for value in config.values:
        try:
            points.append(config.with_axis_value(axis, value))
        except ConfigError as e:
            points.append(e)

    tasks = [
        (idx, method, config.seed + r)
        for idx, point in enumerate(points) if isinstance(point, ExperimentConfig)
        for method in config.methods
        for r in range(config.repeat)
    ]
    outcomes = _map(
        lambda task: _try_run(points[task[0]], source, test_source, task[1], task[2]),  # type: ignore
        tasks,
        jobs,
    )
    by_point: dict[int, list] = {}
    for (idx, _, _), outcome in zip(tasks, outcomes):
        by_point.setdefault(idx, []).append(outcome)

    result = ExperimentResult()
    for idx, (value, point) in enumerate(zip(config.values, points)):
        point_outcomes = by_point.get(idx, [])
        error = point if isinstance(point, ConfigError) else next(
            (outcome for outcome in point_outcomes if isinstance(outcome, ConfigError)), None
        )
        if error is not None:
            logger.warning("Skipping %s=%s: %s", axis, value, error, extra={"axis": axis, "value": value})
            result.rows.extend(skipped_rows(config, axis, value))
            result.skipped.append(value)
            continue
        assert isinstance(point, ExperimentConfig)
        for method in config.methods:
            method_records = [record for record in point_outcomes if record.method is method]
            result.records.setdefault(method, []).extend(method_records)
            for record in method_records:
                result.rows.extend(run_rows(point, record))
            result.rows.extend(summary_rows(point, method, method_records))
    return result


def write_csv(rows: Iterable[ResultRow], stream: TextIO, float_format: str = "%.10g"):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.as_csv(float_format))


def generate_dataset(config: ExperimentConfig, prefix: str | Path) -> tuple[Path, Path]:
    """
    Writes the configured synthetic Gaussian source as an IDX pair
    `<prefix>-images-idx3-ubyte` / `<prefix>-labels-idx1-ubyte`. Features
    are min-max scaled into [0, 1] with one common scale.
    """
    source, _ = load_sources(dataclasses.replace(config, dataset="synthetic"))
    low, high = source.features.min(), source.features.max()
    span = high - low if math.isfinite(high - low) and high > low else 1.0
    scaled = LabeledDataset((source.features - low) / span, source.labels, source.class_count)
    images_path = Path(f"{prefix}-images-idx3-ubyte")
    labels_path = Path(f"{prefix}-labels-idx1-ubyte")
    write_idx(scaled, images_path, labels_path)
    logger.info(
        "Wrote synthetic dataset",
        extra={"images": str(images_path), "labels": str(labels_path), "count": len(scaled)},
    )
    return images_path, labels_path
