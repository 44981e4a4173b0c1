"""
Named verification suites run by the `verify` management command. Each
suite returns a SuiteReport of independent checks; a suite passes iff all
of its checks pass.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from esa_mpu.datasets import ClassPriors, MpuDataset
from esa_mpu.domains import DiscreteDomain, random_domain
from esa_mpu.exceptions import InvalidInputError
from esa_mpu.losses import LossKind, certain_loss_labeled, certain_loss_unlabeled, phi
from esa_mpu.risks import (
    Method,
    SieveThresholds,
    esa_empirical_risk,
    esa_empirical_risk_convex,
    mpu_empirical_risk,
    sieve,
)
from esa_mpu.scorers import ScorerParams, ScorerSpec, binary_spec, forward_batch, init_params
from esa_mpu.utils import natural_or_list
from esa_mpu.verification import (
    GradientTarget,
    bias_decay,
    check_zero_one_decomposition,
    concentration_constants,
    exact_mpu_risk,
    exact_supervised_risk,
    expected_bias_bound,
    gradient_check,
    monte_carlo_bias,
)

logger = logging.getLogger(__name__)

SUITES = ("identities", "enumeration", "gradients", "bias", "decay")

IDENTITY_GRID = np.linspace(-10.0, 10.0, 2001)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float | None = None
    limit: float | None = None
    # Reported but never fails the suite
    informational: bool = False
    details: dict[str, Any] = field(default_factory=dict)


@dataclass
class SuiteReport:
    suite: str
    checks: list[CheckResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def failed(self) -> list[CheckResult]:
        return [check for check in self.checks if not check.passed and not check.informational]

    def add(
        self,
        name: str,
        passed: bool,
        value: float | None = None,
        limit: float | None = None,
        informational: bool = False,
        **details,
    ):
        self.checks.append(CheckResult(
            name=name, passed=bool(passed), value=value, limit=limit, informational=informational, details=details
        ))

    def as_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "elapsed": self.elapsed,
            "warnings": self.warnings,
            "checks": [
                {
                    "name": check.name,
                    "passed": check.passed,
                    "value": check.value,
                    "limit": check.limit,
                    "informational": check.informational,
                    **check.details,
                }
                for check in self.checks
            ],
        }

    def as_lines(self, float_format: str = "%.10g") -> list[str]:
        """Line-oriented key=value rendering."""

        def fmt(value: Any) -> str:
            if isinstance(value, float):
                return float_format % value
            return str(value)

        lines = [f"suite={self.suite} passed={self.passed} elapsed={self.elapsed:.3f}"]
        for check in self.checks:
            parts = [f"check={check.name}", f"passed={check.passed}"]
            if check.value is not None:
                parts.append(f"value={fmt(check.value)}")
            if check.limit is not None:
                parts.append(f"limit={fmt(check.limit)}")
            if check.informational:
                parts.append("informational=True")
            parts.extend(f"{key}={fmt(value)}" for key, value in check.details.items())
            lines.append(" ".join(parts))
        lines.extend(f"warning={warning}" for warning in self.warnings)
        return lines


@dataclass(frozen=True)
class SuiteOptions:
    trials: int = 10_000
    seed: int = 0
    decay_sizes: tuple[int, ...] = (10, 100, 1000)
    random_instances: int = 100
    random_domains: int = 50
    jobs: int = 1


def random_mpu_instance(
    rng: np.random.Generator,
    class_count: int,
    dim: int = 3,
    hidden_layers: tuple[int, ...] = (),
    n_labeled: int = 6,
    n_unlabeled: int = 10,
    binary: bool = False,
) -> tuple[ScorerParams, MpuDataset]:
    """Random scorer and Gaussian MPU data with Dirichlet-drawn priors."""
    weights = rng.dirichlet(np.ones(class_count))
    priors = ClassPriors(tuple(weights[:-1]))
    spec = binary_spec(dim, hidden_layers) if binary else ScorerSpec(dim, class_count, hidden_layers)
    params = init_params(spec, int(rng.integers(2 ** 31)))
    # Nonzero biases so that no term sits at a symmetric point
    params = params.map(lambda arr: arr + 0.1 * rng.standard_normal(arr.shape))
    data = MpuDataset(
        positive_sets=tuple(rng.standard_normal((n_labeled, dim)) for _ in range(class_count - 1)),
        unlabeled=rng.standard_normal((n_unlabeled, dim)),
        priors=priors,
    )
    return params, data


def _midpoint_threshold(values: np.ndarray) -> float:
    """A threshold strictly between two support values, so that both sides have mass."""
    levels = np.unique(values)
    if len(levels) < 2:
        raise InvalidInputError("Cannot place a threshold between fewer than two distinct values")
    k = len(levels) // 2
    return float((levels[k - 1] + levels[k]) / 2.0)


def bias_fixture(seed: int) -> tuple[DiscreteDomain, ScorerParams, LossKind, SieveThresholds]:
    """
    Fixed small domain with a linear scorer and thresholds that split the
    certain losses of both streams, so that keeping and dropping both occur.
    """
    rng = np.random.default_rng([seed, 1])
    domain = random_domain(rng, n_points=6, class_count=3, dim=2, min_prior=0.15)
    params = init_params(ScorerSpec(2, 3), seed)
    kind = LossKind.SQUARE_QUARTER
    scores = forward_batch(params, domain.points)
    labeled = np.concatenate([
        np.atleast_1d(certain_loss_labeled(kind, scores, class_no)) for class_no in range(1, domain.class_count)
    ])
    unlabeled = np.atleast_1d(certain_loss_unlabeled(kind, scores))
    thresholds = SieveThresholds(sigma_m=_midpoint_threshold(labeled), sigma_u=_midpoint_threshold(unlabeled))
    return domain, params, kind, thresholds


def _identities(report: SuiteReport, options: SuiteOptions):
    for kind in (LossKind.SQUARE_QUARTER, LossKind.LOGISTIC):
        residual = float(np.max(np.abs(phi(kind, IDENTITY_GRID) - phi(kind, -IDENTITY_GRID) + IDENTITY_GRID)))
        report.add(f"linear_odd_{kind.value}", residual < 1e-12, residual, 1e-12)

    rng = np.random.default_rng([options.seed, 2])
    for kind in (LossKind.SQUARE_QUARTER, LossKind.LOGISTIC):
        worst = 0.0
        for _ in range(options.random_instances):
            params, data = random_mpu_instance(rng, int(rng.integers(2, 6)))
            sieved = sieve(params, data, kind, SieveThresholds())
            worst = max(worst, abs(
                esa_empirical_risk(params, data, kind, sieved, data.priors)
                - esa_empirical_risk_convex(params, data, kind, sieved, data.priors)
            ))
        report.add(f"convex_form_{kind.value}", worst < 1e-9, worst, 1e-9, instances=options.random_instances)

    worst = 0.0
    disabled = SieveThresholds.disabled()
    for _ in range(options.random_instances):
        kind = list(LossKind)[int(rng.integers(len(LossKind)))]
        params, data = random_mpu_instance(rng, int(rng.integers(2, 6)))
        sieved = sieve(params, data, kind, disabled)
        worst = max(worst, abs(
            esa_empirical_risk(params, data, kind, sieved, data.priors)
            - mpu_empirical_risk(params, data, kind, data.priors)
        ))
    report.add("sieve_off_equals_mpu", worst < 1e-10, worst, 1e-10, instances=options.random_instances)


def _enumeration(report: SuiteReport, options: SuiteOptions):
    rng = np.random.default_rng([options.seed, 3])
    worst_decomposition = 0.0
    worst_rewrite = 0.0
    for _ in range(options.random_domains):
        class_count = int(rng.integers(2, 6))
        domain = random_domain(rng, n_points=int(rng.integers(1, 9)), class_count=class_count, dim=2, min_prior=0.02)
        params = init_params(ScorerSpec(2, class_count), int(rng.integers(2 ** 31)))
        kind = list(LossKind)[int(rng.integers(len(LossKind)))]
        worst_decomposition = max(worst_decomposition, check_zero_one_decomposition(domain, params).residual)
        worst_rewrite = max(
            worst_rewrite,
            abs(exact_mpu_risk(domain, params, kind) - exact_supervised_risk(domain, params, kind)),
        )
    report.add("zero_one_decomposition", worst_decomposition < 1e-12, worst_decomposition, 1e-12,
               domains=options.random_domains)
    report.add("mpu_rewrite", worst_rewrite < 1e-12, worst_rewrite, 1e-12, domains=options.random_domains)


def _gradients(report: SuiteReport, options: SuiteOptions):
    rng = np.random.default_rng([options.seed, 4])
    for hidden in ((), (5,)):
        architecture = "mlp" if hidden else "linear"
        for method in Method:
            kind = LossKind.SQUARE_QUARTER if method is Method.ESA_CONVEX else LossKind.LOGISTIC
            params, data = random_mpu_instance(rng, 3, hidden_layers=hidden, binary=method.is_binary)
            sieved = sieve(params, data, kind, SieveThresholds()) if method.uses_sieve else None
            gradient = gradient_check(GradientTarget(method, params, data, kind, data.priors, sieved))
            report.add(
                f"{method.value}_{architecture}",
                gradient.passed,
                gradient.max_relative_error,
                1e-5,
                worst_coordinate=gradient.worst_coordinate,
                coordinates=gradient.coordinates,
            )


def _bias(report: SuiteReport, options: SuiteOptions):
    domain, params, kind, thresholds = bias_fixture(options.seed)
    n = 50
    active = monte_carlo_bias(domain, params, kind, thresholds, n, n, options.trials, options.seed, jobs=options.jobs)
    report.warnings.extend(active.warnings)
    report.add(
        "sieved_bias_positive",
        active.exceeds_zero(),
        active.mean_bias,
        3.0 * active.standard_error,
        exact_bias=active.exact_bias,
        trials=active.trials,
        sigma_m=thresholds.sigma_m,
        sigma_u=thresholds.sigma_u,
    )
    disabled = monte_carlo_bias(
        domain, params, kind, SieveThresholds.disabled(), n, n, options.trials, options.seed, jobs=options.jobs
    )
    report.add(
        "sieve_off_unbiased",
        disabled.consistent_with_zero(),
        disabled.mean_bias,
        3.0 * disabled.standard_error,
        exact_bias=disabled.exact_bias,
        trials=disabled.trials,
    )


def _decay(report: SuiteReport, options: SuiteOptions):
    domain, params, kind, thresholds = bias_fixture(options.seed)
    decay = bias_decay(domain, params, kind, thresholds, options.decay_sizes, options.trials, options.seed,
                       jobs=options.jobs)
    constants = concentration_constants(domain, params, kind, thresholds)
    if not constants.preconditions_hold:
        report.warnings.append(
            "concentration preconditions fail (each threshold must exceed its stream's mean certain loss "
            "and the certain losses must reach a positive maximum); no bias bound reported"
        )
    for bias in decay.reports:
        assert bias.exact_bias is not None
        gap = abs(bias.mean_bias - bias.exact_bias)
        details: dict[str, Any] = {"mean_bias": bias.mean_bias, "standard_error": bias.standard_error}
        bound = expected_bias_bound(domain, params, kind, thresholds, bias.n_m, bias.n_u)
        if bound is not None:
            details["bias_bound"] = bound
        report.add(f"exact_bias_n={bias.n_m}", gap <= 4.0 * bias.standard_error + 1e-12, bias.exact_bias,
                   4.0 * bias.standard_error, **details)
    first, last = decay.reports[0], decay.reports[-1]
    report.add(
        "bias_decays_with_n",
        decay.decays,
        last.mean_bias - first.mean_bias,
        None,
        informational=True,
        smallest_n=first.n_m,
        largest_n=last.n_m,
    )
    if not decay.decays:
        report.warnings.append(
            "mean bias does not shrink with n: with per-example sieving it tends to the gap between the "
            "mean of kept certain losses and the full mean, which is positive whenever the sieve is active"
        )


SUITE_RUNNERS: dict[str, Callable[[SuiteReport, SuiteOptions], None]] = {
    "identities": _identities,
    "enumeration": _enumeration,
    "gradients": _gradients,
    "bias": _bias,
    "decay": _decay,
}


def run_suite(name: str, options: SuiteOptions | None = None) -> SuiteReport:
    if name not in SUITE_RUNNERS:
        raise InvalidInputError(f'Unknown suite "{name}" (choose from {natural_or_list([*SUITES, "all"])})')
    options = options or SuiteOptions()
    report = SuiteReport(suite=name)
    started = time.monotonic()
    SUITE_RUNNERS[name](report, options)
    report.elapsed = time.monotonic() - started
    for check in report.failed:
        logger.warning("Check %s failed", check.name, extra={"suite": name, "value": check.value})
    logger.info("Finished suite %s", name, extra={"passed": report.passed, "elapsed": report.elapsed})
    return report
