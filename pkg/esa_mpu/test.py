"""
Note: This module does not contain tests, hence its name is 'test' and not
'tests'. It's for extending SimpleTestCase.
"""
import math
from typing import Callable

import numpy as np
from django.test import SimpleTestCase

from esa_mpu.scorers import ScorerParams


class NumericTestCase(SimpleTestCase):
    def assertDictContains(self, actual: dict, expected: dict):
        """Assert `actual` contains all keys and values from `expected`"""
        subset = {k: v for k, v in actual.items() if k in expected}
        self.assertDictEqual(subset, expected)

    def assertListContains(self, actual: list, expected: list):
        """Assert `actual` contains all values from `expected`"""
        sublist = [v for v in actual if v in expected]
        self.assertListEqual(sublist, expected)

    def assertAllClose(self, actual, expected, atol: float = 1e-12, rtol: float = 0.0):
        actual = np.asarray(actual, dtype=np.float64)
        expected = np.asarray(expected, dtype=np.float64)
        self.assertEqual(actual.shape, expected.shape)
        if not np.allclose(actual, expected, atol=atol, rtol=rtol):
            worst = float(np.max(np.abs(actual - expected)))
            self.fail(f"Arrays differ by up to {worst:.3g} (atol={atol}, rtol={rtol})\n{actual}\n!=\n{expected}")

    def assertParamsEqual(self, actual: ScorerParams, expected: ScorerParams, atol: float = 0.0):
        self.assertEqual(actual.spec, expected.spec)
        for a, b in zip(actual.arrays(), expected.arrays()):
            self.assertAllClose(a, b, atol=atol)

    def assertGradientMatches(
        self,
        func: Callable[[np.ndarray], float],
        point: np.ndarray,
        analytic: np.ndarray,
        rtol: float = 1e-5,
        step: float = 1e-5,
    ):
        """
        Central finite differences of `func` at `point` against `analytic`;
        coordinates with |analytic| <= 1e-8 are compared absolutely.
        """
        point = np.asarray(point, dtype=np.float64)
        analytic = np.asarray(analytic, dtype=np.float64).ravel()
        numeric = np.empty_like(analytic)
        for idx in range(point.size):
            shift = np.zeros_like(point).ravel()
            shift[idx] = step
            shift = shift.reshape(point.shape)
            numeric[idx] = (func(point + shift) - func(point - shift)) / (2.0 * step)
        for idx, (a, n) in enumerate(zip(analytic, numeric)):
            if abs(a) > 1e-8:
                self.assertLess(abs(a - n) / max(abs(a), abs(n)), rtol, f"coordinate {idx}: {a} != {n}")
            else:
                self.assertLess(abs(n), 1e-6, f"coordinate {idx}: {a} != {n}")

    def assertWithinStandardErrors(self, value: float, expected: float, standard_error: float, sigmas: float = 3.0):
        """Assert |value - expected| <= sigmas * standard_error"""
        self.assertTrue(
            abs(value - expected) <= sigmas * standard_error,
            f"{value} is more than {sigmas} standard errors ({standard_error:.3g}) from {expected}",
        )

    def assertBinomialRate(self, successes: int, trials: int, rate: float, sigmas: float = 5.0):
        standard_error = math.sqrt(rate * (1.0 - rate) / trials)
        self.assertWithinStandardErrors(successes / trials, rate, standard_error, sigmas)
