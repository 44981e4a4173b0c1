"""
Exact-enumeration and Monte-Carlo oracles for the MPU/ESA risk estimators.

On a `DiscreteDomain` every population quantity (risks, sieve
probabilities, even the expectation of the empirical ESA risk) is a finite
sum, so the estimators can be checked against exact values instead of
against each other.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from esa_mpu.datasets import ClassPriors, MpuDataset, _largest_remainder
from esa_mpu.domains import DiscreteDomain, enumerate_domain
from esa_mpu.exceptions import InvalidInputError
from esa_mpu.losses import LossKind, certain_loss_labeled, certain_loss_unlabeled, ovr_loss
from esa_mpu.risks import (
    Method,
    SievedIndices,
    SieveThresholds,
    esa_empirical_risk,
    predict_batch,
    risk_gradient,
    risk_value,
    sieve,
)
from esa_mpu.scorers import ScorerParams, forward_batch
from esa_mpu.typing import FloatArray

logger = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BiasReport:
    mean_bias: float
    standard_error: float
    trials: int
    n_m: int
    n_u: int
    exact_bias: float | None = None
    warnings: tuple[str, ...] = ()

    def exceeds_zero(self, sigmas: float = 3.0) -> bool:
        return self.mean_bias - sigmas * self.standard_error > 0

    def consistent_with_zero(self, sigmas: float = 3.0) -> bool:
        return abs(self.mean_bias) <= sigmas * self.standard_error


@dataclass(frozen=True)
class DecompositionCheck:
    passed: bool
    residual: float
    decomposed: float
    supervised: float


@dataclass(frozen=True)
class ConcentrationConstants:
    alpha_m: float | None
    alpha_u: float | None
    C_m: float | None
    C_u: float | None

    @property
    def preconditions_hold(self) -> bool:
        return None not in (self.alpha_m, self.alpha_u, self.C_m, self.C_u)


@dataclass(frozen=True)
class GradientTarget:
    method: Method
    params: ScorerParams
    data: MpuDataset
    kind: LossKind
    priors: ClassPriors
    sieved: SievedIndices | None = None


@dataclass(frozen=True)
class GradientReport:
    max_relative_error: float
    max_absolute_error: float
    worst_coordinate: int
    coordinates: int
    passed: bool


def _ovr_table(domain: DiscreteDomain, params: ScorerParams, kind: LossKind) -> FloatArray:
    """L(f(x), y) for every point x (rows) and class y (columns)."""
    scores = forward_batch(params, domain.points)
    return np.stack([ovr_loss(kind, scores, y) for y in range(1, domain.class_count + 1)], axis=1)


def exact_mpu_risk(domain: DiscreteDomain, params: ScorerParams, kind: LossKind) -> float:
    """sum_i pi_i E_i[L(f, i) - L(f, C)] + E_u[L(f, C)], summed over the table."""
    losses = _ovr_table(domain, params, kind)
    joint = domain.joint_pmf
    labeled = np.sum(joint[:, :-1] * (losses[:, :-1] - losses[:, -1:]))
    unlabeled = np.sum(enumerate_domain(domain, "unlabeled") * losses[:, -1])
    return float(labeled + unlabeled)


def exact_supervised_risk(domain: DiscreteDomain, params: ScorerParams, kind: LossKind) -> float:
    """sum over classes y of pi_y E_y[L(f, y)]."""
    return float(np.sum(domain.joint_pmf * _ovr_table(domain, params, kind)))


def check_zero_one_decomposition(domain: DiscreteDomain, params: ScorerParams) -> DecompositionCheck:
    """
    Zero-one MPU decomposition against the plain misclassification rate:
    sum_i pi_i p_i(f != i) + p_u(f != C) - sum_i pi_i p_i(f != C)
    versus sum_y pi_y p_y(f != y).
    """
    predictions = predict_batch(params, domain.points)
    joint = domain.joint_pmf
    C = domain.class_count
    wrong = predictions[:, None] != np.arange(1, C + 1)[None, :]
    not_negative = predictions != C
    decomposed = (
        np.sum(joint[:, :-1] * wrong[:, :-1])
        + np.sum(enumerate_domain(domain, "unlabeled") * not_negative)
        - np.sum(joint[:, :-1] * not_negative[:, None])
    )
    supervised = np.sum(joint * wrong)
    residual = abs(float(decomposed - supervised))
    return DecompositionCheck(
        passed=residual < IDENTITY_TOLERANCE,
        residual=residual,
        decomposed=float(decomposed),
        supervised=float(supervised),
    )


def allocate_labeled_counts(priors: ClassPriors, n_m: int) -> tuple[int, ...]:
    """Split n_m labeled examples over the positive classes in proportion to pi, at least one each."""
    if n_m < priors.positive_count:
        raise InvalidInputError(f"n_m={n_m} cannot cover {priors.positive_count} positive classes")
    return tuple(int(n) for n in _largest_remainder(n_m, priors.as_array(), minimum=1))


def _stream_tables(domain: DiscreteDomain, params: ScorerParams, kind: LossKind):
    """(certain losses, pmf) per labeled class, then for the unlabeled stream."""
    scores = forward_batch(params, domain.points)
    labeled = [
        (np.atleast_1d(certain_loss_labeled(kind, scores, class_no)), enumerate_domain(domain, class_no))
        for class_no in range(1, domain.class_count)
    ]
    unlabeled = (np.atleast_1d(certain_loss_unlabeled(kind, scores)), enumerate_domain(domain, "unlabeled"))
    return labeled, unlabeled


def _expected_kept_mean(values: FloatArray, pmf: FloatArray, threshold: float, n: int) -> float:
    """
    E[mean of the kept sample] for n i.i.d. draws, keeping values >= threshold
    and falling back to the sample maximum when nothing is kept. Given at
    least one kept draw, the kept values are i.i.d. from the law conditioned
    on >= threshold, so only the all-dropped event needs order statistics.
    """
    support = pmf > 0
    values, pmf = values[support], pmf[support]
    kept = values >= threshold
    below_mass = float(pmf[~kept].sum())
    if not np.any(~kept):
        return float(np.sum(pmf * values))
    all_dropped = below_mass ** n
    kept_mean = float(np.sum(pmf[kept] * values[kept]) / pmf[kept].sum()) if np.any(kept) else 0.0
    levels, inverse = np.unique(values[~kept], return_inverse=True)
    cdf = np.cumsum(np.bincount(inverse, weights=pmf[~kept] / below_mass))
    cdf_prev = np.concatenate([[0.0], cdf[:-1]])
    expected_max = float(np.sum(levels * (cdf ** n - cdf_prev ** n)))
    return (1.0 - all_dropped) * kept_mean + all_dropped * expected_max


def expected_esa_risk(
    domain: DiscreteDomain,
    params: ScorerParams,
    kind: LossKind,
    thresholds: SieveThresholds,
    n_m: int,
    n_u: int,
) -> float:
    """Exact E[empirical ESA risk] under the sampling scheme of monte_carlo_bias()."""
    priors = domain.priors
    counts = allocate_labeled_counts(priors, n_m)
    labeled, (u_values, u_pmf) = _stream_tables(domain, params, kind)
    value = sum(
        prior * _expected_kept_mean(values, pmf, thresholds.sigma_m, n)
        for prior, (values, pmf), n in zip(priors.pi, labeled, counts)
    )
    return float(value + _expected_kept_mean(u_values, u_pmf, thresholds.sigma_u, n_u))


def sieve_keep_probabilities(
    domain: DiscreteDomain,
    params: ScorerParams,
    kind: LossKind,
    thresholds: SieveThresholds,
) -> dict[str, float]:
    """Probability that a single draw survives the sieve, per stream."""
    labeled, (u_values, u_pmf) = _stream_tables(domain, params, kind)
    probabilities = {
        f"class_{class_no}": float(np.sum(pmf[values >= thresholds.sigma_m]))
        for class_no, (values, pmf) in enumerate(labeled, start=1)
    }
    probabilities["unlabeled"] = float(np.sum(u_pmf[u_values >= thresholds.sigma_u]))
    return probabilities


def _precondition_warnings(probabilities: dict[str, float]) -> tuple[str, ...]:
    warnings = []
    if all(p >= 1.0 for p in probabilities.values()):
        warnings.append("no example can be sieved out at these thresholds (sieve inactive)")
    never_kept = [name for name, p in probabilities.items() if p <= 0.0]
    if never_kept:
        warnings.append("every draw is sieved out for: %s" % ", ".join(never_kept))
    return tuple(warnings)


def monte_carlo_bias(
    domain: DiscreteDomain,
    params: ScorerParams,
    kind: LossKind,
    thresholds: SieveThresholds,
    n_m: int,
    n_u: int,
    trials: int,
    seed: int,
    jobs: int = 1,
) -> BiasReport:
    """
    Mean and standard error of (empirical ESA risk - exact MPU risk) over
    independent samples. Trial t draws from its own generator seeded by
    (seed, t), so results do not depend on `jobs`.
    """
    if trials < 1:
        raise InvalidInputError(f"trials must be >= 1, got {trials}")
    exact = exact_mpu_risk(domain, params, kind)
    counts = allocate_labeled_counts(domain.priors, n_m)

    def run_trial(trial: int) -> float:
        rng = np.random.default_rng([seed, trial])
        data = domain.sample_mpu(rng, counts, n_u)
        sieved = sieve(params, data, kind, thresholds)
        return esa_empirical_risk(params, data, kind, sieved, data.priors) - exact

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            biases = np.array(list(executor.map(run_trial, range(trials))))
    else:
        biases = np.array([run_trial(trial) for trial in range(trials)])

    warnings = _precondition_warnings(sieve_keep_probabilities(domain, params, kind, thresholds))
    for warning in warnings:
        logger.warning("Monte-Carlo bias precondition: %s", warning, extra={"n_m": n_m, "n_u": n_u})
    standard_error = float(np.std(biases, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return BiasReport(
        mean_bias=float(np.mean(biases)),
        standard_error=standard_error,
        trials=trials,
        n_m=n_m,
        n_u=n_u,
        exact_bias=expected_esa_risk(domain, params, kind, thresholds, n_m, n_u) - exact,
        warnings=warnings,
    )


def concentration_bound(alpha_m: float, alpha_u: float, C_m: float, C_u: float, n_m_s: float, n_u_s: float) -> float:
    """exp(-2 (alpha_m^2 n_m^s C_m^2 + alpha_u^2 n_u^s C_u^2) / (C_m^2 C_u^2))"""
    arguments = {"alpha_m": alpha_m, "alpha_u": alpha_u, "C_m": C_m, "C_u": C_u, "n_m_s": n_m_s, "n_u_s": n_u_s}
    for name, value in arguments.items():
        if not np.isfinite(value) or value <= 0:
            raise InvalidInputError(f"{name} must be positive, got {value}")
    exponent = (alpha_m ** 2 * n_m_s * C_m ** 2 + alpha_u ** 2 * n_u_s * C_u ** 2) / (C_m ** 2 * C_u ** 2)
    return math.exp(-2.0 * exponent)


def concentration_constants(
    domain: DiscreteDomain,
    params: ScorerParams,
    kind: LossKind,
    thresholds: SieveThresholds,
) -> ConcentrationConstants:
    """
    Exact margins alpha = sigma - E[CL] and bounds C = max CL on the
    domain's support. A constant is None when it would not be positive.
    """
    labeled, (u_values, u_pmf) = _stream_tables(domain, params, kind)
    priors = domain.priors.as_array()
    weights = priors / priors.sum()
    expected_m = sum(w * float(np.sum(pmf * values)) for w, (values, pmf) in zip(weights, labeled))
    max_m = max(float(values[pmf > 0].max()) for values, pmf in labeled)
    expected_u = float(np.sum(u_pmf * u_values))
    max_u = float(u_values[u_pmf > 0].max())

    def positive(value: float) -> float | None:
        return value if np.isfinite(value) and value > 0 else None

    return ConcentrationConstants(
        alpha_m=positive(thresholds.sigma_m - expected_m),
        alpha_u=positive(thresholds.sigma_u - expected_u),
        C_m=positive(max_m),
        C_u=positive(max_u),
    )


def sieve_bias_bound(
    priors: ClassPriors,
    labeled_kept: Sequence[float],
    n_u_s: float,
    C_m: float,
    C_u: float,
    delta_f: float,
) -> float:
    """kappa * Delta_f, kappa = (C - 1) max(pi) min(n_i^s) C_m + C_u n_u^s."""
    kappa = priors.positive_count * max(priors.pi) * min(labeled_kept) * C_m + C_u * n_u_s
    return kappa * delta_f


def expected_bias_bound(
    domain: DiscreteDomain,
    params: ScorerParams,
    kind: LossKind,
    thresholds: SieveThresholds,
    n_m: int,
    n_u: int,
) -> float | None:
    """
    sieve_bias_bound() at the expected sieved counts of an (n_m, n_u)
    sample, with Delta_f from concentration_bound(). None when a
    concentration constant is not positive or a stream is expected to keep
    nothing.
    """
    constants = concentration_constants(domain, params, kind, thresholds)
    alpha_m, alpha_u, C_m, C_u = constants.alpha_m, constants.alpha_u, constants.C_m, constants.C_u
    if alpha_m is None or alpha_u is None or C_m is None or C_u is None:
        return None
    keep = sieve_keep_probabilities(domain, params, kind, thresholds)
    counts = allocate_labeled_counts(domain.priors, n_m)
    labeled_kept = [n * keep[f"class_{class_no}"] for class_no, n in enumerate(counts, start=1)]
    n_m_s = sum(labeled_kept)
    n_u_s = n_u * keep["unlabeled"]
    if n_m_s <= 0 or n_u_s <= 0:
        return None
    delta_f = concentration_bound(alpha_m, alpha_u, C_m, C_u, n_m_s, n_u_s)
    return sieve_bias_bound(domain.priors, labeled_kept, n_u_s, C_m, C_u, delta_f)


def deviation_bound(
    priors: ClassPriors,
    labeled_counts: Sequence[int],
    n_u: int,
    C_phi: float,
    delta: float,
) -> float:
    """Concentration term: C_phi (sum_i 2 pi_i sqrt(2 log(2/delta) / n_i) + sqrt(2 log(2/delta) / n_u))."""
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must be in (0, 1), got {delta}")
    log_term = 2.0 * math.log(2.0 / delta)
    labeled = sum(2.0 * p * math.sqrt(log_term / n) for p, n in zip(priors.pi, labeled_counts))
    return C_phi * (labeled + math.sqrt(log_term / n_u))


def gradient_check(
    target: GradientTarget,
    tolerance: float = 1e-5,
    step: float = 1e-5,
    min_magnitude: float = 1e-8,
) -> GradientReport:
    """
    Central finite differences over every parameter. Relative errors only
    count where |analytic| > min_magnitude; the absolute error covers all
    coordinates.
    """
    params = target.params
    sieved = target.sieved

    def risk(vector: FloatArray) -> float:
        return risk_value(target.method, params.unflatten(vector), target.data, target.kind, target.priors, sieved)

    analytic = risk_gradient(target.method, params, target.data, target.kind, target.priors, sieved=sieved).flatten()
    point = params.flatten()
    numeric = np.empty_like(point)
    for idx in range(point.size):
        forward_point = point.copy()
        backward_point = point.copy()
        forward_point[idx] += step
        backward_point[idx] -= step
        numeric[idx] = (risk(forward_point) - risk(backward_point)) / (2.0 * step)

    absolute = np.abs(analytic - numeric)
    counted = np.abs(analytic) > min_magnitude
    relative = np.zeros_like(absolute)
    relative[counted] = absolute[counted] / np.maximum(np.abs(analytic[counted]), np.abs(numeric[counted]))
    worst = int(np.argmax(relative)) if counted.any() else int(np.argmax(absolute))
    max_relative = float(relative.max()) if counted.any() else 0.0
    return GradientReport(
        max_relative_error=max_relative,
        max_absolute_error=float(absolute.max()) if absolute.size else 0.0,
        worst_coordinate=worst,
        coordinates=point.size,
        passed=max_relative < tolerance,
    )


@dataclass
class DecayReport:
    sizes: tuple[int, ...]
    reports: list[BiasReport] = field(default_factory=list)

    @property
    def decays(self) -> bool:
        """Bias at the largest size below the smallest size beyond combined 3-sigma noise."""
        first, last = self.reports[0], self.reports[-1]
        noise = 3.0 * math.hypot(first.standard_error, last.standard_error)
        return last.mean_bias < first.mean_bias - noise


def bias_decay(
    domain: DiscreteDomain,
    params: ScorerParams,
    kind: LossKind,
    thresholds: SieveThresholds,
    sizes: Sequence[int],
    trials: int,
    seed: int,
    jobs: int = 1,
) -> DecayReport:
    """monte_carlo_bias() over a grid of sample sizes with n_m = n_u = n."""
    report = DecayReport(sizes=tuple(sizes))
    for n in sizes:
        report.reports.append(monte_carlo_bias(domain, params, kind, thresholds, n, n, trials, seed, jobs=jobs))
    return report
