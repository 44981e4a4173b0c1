"""
Finite feature domains with an explicit joint probability table p(x, y).
Conditionals, class priors and the unlabeled marginal are exact table
arithmetic, which is what the verification oracles run on.
"""
from dataclasses import dataclass

import numpy as np

from esa_mpu.datasets import ClassPriors, MpuDataset
from esa_mpu.exceptions import DomainError
from esa_mpu.typing import ArrayLike, FloatArray, IntArray

UNLABELED = "unlabeled"

PMF_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DiscreteDomain:
    points: FloatArray
    joint_pmf: FloatArray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        joint = np.asarray(self.joint_pmf, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] == 0:
            raise DomainError(f"Points must be a nonempty (m, d) matrix, got shape {points.shape}")
        if joint.ndim != 2 or joint.shape[0] != points.shape[0] or joint.shape[1] < 2:
            raise DomainError(f"Joint pmf must have shape ({points.shape[0]}, C) with C >= 2, got {joint.shape}")
        if np.any(joint < 0) or abs(joint.sum() - 1.0) > PMF_TOLERANCE:
            raise DomainError("Joint pmf entries must be nonnegative and sum to 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "joint_pmf", joint)

    @property
    def class_count(self) -> int:
        return self.joint_pmf.shape[1]

    @property
    def class_marginals(self) -> FloatArray:
        """pi_1 .. pi_C"""
        return self.joint_pmf.sum(axis=0)

    @property
    def priors(self) -> ClassPriors:
        return ClassPriors(tuple(self.class_marginals[:-1]))

    def conditional(self, class_no: int) -> FloatArray:
        return enumerate_domain(self, class_no)

    def unlabeled_marginal(self) -> FloatArray:
        return enumerate_domain(self, UNLABELED)

    def sample(self, rng: np.random.Generator, n: int, which: int | str) -> IntArray:
        """Indices of `n` points drawn i.i.d. from p(x|y=which) or p_u(x)."""
        return rng.choice(len(self.points), size=n, p=enumerate_domain(self, which))

    def sample_mpu(
        self,
        rng: np.random.Generator,
        labeled_counts: tuple[int, ...],
        n_unlabeled: int,
    ) -> MpuDataset:
        positive_sets = tuple(
            self.points[self.sample(rng, n, class_no)] for class_no, n in enumerate(labeled_counts, start=1)
        )
        return MpuDataset(
            positive_sets=positive_sets,
            unlabeled=self.points[self.sample(rng, n_unlabeled, UNLABELED)],
            priors=self.priors,
        )


def enumerate_domain(domain: DiscreteDomain, which: int | str) -> FloatArray:
    """Exact p(x|y=which) for a class index 1..C, or p_u(x) for "unlabeled"."""
    if which == UNLABELED:
        # p_u(x) = sum_i pi_i p(x|y=i), i.e. the row sums of the joint table
        return domain.joint_pmf.sum(axis=1)
    if isinstance(which, str) or not 1 <= int(which) <= domain.class_count:
        raise DomainError(f'Expected a class index in 1..{domain.class_count} or "{UNLABELED}", got {which!r}')
    column = domain.joint_pmf[:, int(which) - 1]
    marginal = column.sum()
    if marginal <= 0:
        raise DomainError(f"Class {which} has zero probability in this domain")
    return column / marginal


def random_domain(
    rng: np.random.Generator,
    n_points: int,
    class_count: int,
    dim: int = 2,
    min_prior: float = 0.05,
) -> DiscreteDomain:
    """
    Random points and a random joint table in which every class has
    probability at least `min_prior`.
    """
    if min_prior * class_count >= 1.0:
        raise DomainError(f"min_prior={min_prior} is infeasible for {class_count} classes")
    points = rng.standard_normal((n_points, dim))
    joint = rng.random((n_points, class_count)) + 1e-3
    joint /= joint.sum()
    marginals = joint.sum(axis=0)
    # Mix towards a uniform table until every class clears min_prior
    uniform = np.full_like(joint, 1.0 / joint.size)
    weight = 0.0
    if marginals.min() < min_prior:
        weight = (min_prior - marginals.min()) / (1.0 / class_count - marginals.min())
    joint = (1.0 - weight) * joint + weight * uniform
    return DiscreteDomain(points=points, joint_pmf=joint / joint.sum())
