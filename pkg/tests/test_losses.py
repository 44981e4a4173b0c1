import math

import numpy as np

from esa_mpu.exceptions import InvalidInputError, InvalidLabelError
from esa_mpu.losses import (
    LossKind,
    certain_loss_labeled,
    certain_loss_labeled_grad,
    certain_loss_unlabeled,
    ovr_loss,
    ovr_loss_grad,
    phi,
    phi_grad,
)
from esa_mpu.test import NumericTestCase


class PhiTest(NumericTestCase):
    def test_values(self):
        self.assertEqual(phi(LossKind.SQUARE_QUARTER, 1.0), 0.0)
        self.assertEqual(phi(LossKind.SQUARE_QUARTER, 0.0), 0.25)
        self.assertAlmostEqual(phi(LossKind.LOGISTIC, 0.0), math.log(2.0), places=15)
        self.assertEqual(phi(LossKind.MARGIN_SQUARE, 3.0), 4.0)

    def test_gradients(self):
        self.assertEqual(phi_grad(LossKind.SQUARE_QUARTER, 1.0), 0.0)
        self.assertEqual(phi_grad(LossKind.MARGIN_SQUARE, 0.0), -2.0)
        rng = np.random.default_rng(0)
        eps = 1e-5
        for z in rng.uniform(-5, 5, size=20):
            numeric = (phi(LossKind.LOGISTIC, z + eps) - phi(LossKind.LOGISTIC, z - eps)) / (2 * eps)
            self.assertLess(abs(phi_grad(LossKind.LOGISTIC, z) - numeric), 1e-6)

    def test_linear_odd_identity(self):
        z = np.linspace(-10, 10, 2001)
        for kind in (LossKind.SQUARE_QUARTER, LossKind.LOGISTIC):
            self.assertTrue(kind.is_linear_odd)
            self.assertLess(np.max(np.abs(phi(kind, z) - phi(kind, -z) + z)), 1e-12)
        self.assertFalse(LossKind.MARGIN_SQUARE.is_linear_odd)

    def test_logistic_is_stable(self):
        self.assertAlmostEqual(phi(LossKind.LOGISTIC, -1000.0), 1000.0)
        self.assertEqual(phi(LossKind.LOGISTIC, 1000.0), 0.0)
        self.assertAlmostEqual(phi_grad(LossKind.LOGISTIC, -1000.0), -1.0)

    def test_rejects_non_finite(self):
        for kind in LossKind:
            with self.assertRaises(InvalidInputError):
                phi(kind, float("nan"))
            with self.assertRaises(InvalidInputError):
                phi_grad(kind, np.array([0.0, float("inf")]))

    def test_parse(self):
        self.assertIs(LossKind.parse("square_quarter"), LossKind.SQUARE_QUARTER)
        self.assertIs(LossKind.parse(" Margin-Square "), LossKind.MARGIN_SQUARE)
        with self.assertRaises(InvalidInputError):
            LossKind.parse("hinge")


class OvrLossTest(NumericTestCase):
    def test_values(self):
        self.assertEqual(ovr_loss(LossKind.SQUARE_QUARTER, [0.0, 0.0, 0.0], 1), 0.75)
        self.assertEqual(ovr_loss(LossKind.SQUARE_QUARTER, [1.0, -1.0, -1.0], 1), 0.0)
        scores = [0.5, -0.2, 0.1]
        expected = (
            phi(LossKind.LOGISTIC, -0.2) + phi(LossKind.LOGISTIC, -0.5) + phi(LossKind.LOGISTIC, -0.1)
        )
        self.assertAlmostEqual(ovr_loss(LossKind.LOGISTIC, scores, 2), expected, places=14)

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal((6, 4))
        labels = rng.integers(1, 5, size=6)
        batch = ovr_loss(LossKind.LOGISTIC, scores, labels)
        self.assertAllClose(batch, [ovr_loss(LossKind.LOGISTIC, s, int(y)) for s, y in zip(scores, labels)])

    def test_gradient(self):
        self.assertAllClose(ovr_loss_grad(LossKind.SQUARE_QUARTER, [1.0, -1.0], 1), [0.0, 0.0])
        self.assertAllClose(ovr_loss_grad(LossKind.MARGIN_SQUARE, [0.0, 0.0], 1), [-2.0, 2.0])
        rng = np.random.default_rng(2)
        for kind in LossKind:
            scores = rng.standard_normal(4)
            self.assertGradientMatches(
                lambda s, kind=kind: ovr_loss(kind, s, 3), scores, ovr_loss_grad(kind, scores, 3), rtol=1e-6
            )

    def test_invalid_labels(self):
        with self.assertRaises(InvalidLabelError):
            ovr_loss(LossKind.LOGISTIC, [0.0, 0.0, 0.0], 0)
        with self.assertRaises(InvalidLabelError):
            ovr_loss(LossKind.LOGISTIC, [0.0, 0.0, 0.0], 4)
        with self.assertRaises(InvalidLabelError):
            ovr_loss(LossKind.LOGISTIC, [0.0, 0.0, 0.0], 1.5)


class CertainLossTest(NumericTestCase):
    def test_labeled(self):
        self.assertEqual(certain_loss_labeled(LossKind.SQUARE_QUARTER, [0.0, 0.0, 0.0], 1), 0.0)
        rng = np.random.default_rng(3)
        for _ in range(10):
            scores = rng.standard_normal(3)
            self.assertAlmostEqual(
                certain_loss_labeled(LossKind.SQUARE_QUARTER, scores, 1), scores[2] - scores[0], places=12
            )
        scores = [1.0, 0.0, -1.0]
        expected = ovr_loss(LossKind.MARGIN_SQUARE, scores, 1) - ovr_loss(LossKind.MARGIN_SQUARE, scores, 3)
        self.assertEqual(certain_loss_labeled(LossKind.MARGIN_SQUARE, scores, 1), expected)

    def test_labeled_rejects_negative_class(self):
        with self.assertRaises(InvalidLabelError):
            certain_loss_labeled(LossKind.LOGISTIC, [0.0, 0.0, 0.0], 3)

    def test_labeled_gradient(self):
        rng = np.random.default_rng(4)
        scores = rng.standard_normal(4)
        for kind in LossKind:
            self.assertGradientMatches(
                lambda s, kind=kind: certain_loss_labeled(kind, s, 2),
                scores,
                certain_loss_labeled_grad(kind, scores, 2),
                rtol=1e-6,
            )

    def test_unlabeled(self):
        self.assertEqual(certain_loss_unlabeled(LossKind.SQUARE_QUARTER, [0.0, 0.0, 0.0]), 0.75)
        self.assertEqual(certain_loss_unlabeled(LossKind.SQUARE_QUARTER, [-1.0, -1.0, 1.0]), 0.0)
        scores = np.random.default_rng(5).standard_normal((5, 3))
        self.assertAllClose(
            certain_loss_unlabeled(LossKind.LOGISTIC, scores), ovr_loss(LossKind.LOGISTIC, scores, 3)
        )
