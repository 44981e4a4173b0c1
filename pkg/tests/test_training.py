import dataclasses
import math

import numpy as np

from esa_mpu.datasets import ClassPriors, LabeledDataset, build_mpu_split, synth_gaussian
from esa_mpu.exceptions import ConfigError
from esa_mpu.losses import LossKind
from esa_mpu.optimizers import OptimizerMethod, OptimizerSettings
from esa_mpu.risks import Method, SieveThresholds
from esa_mpu.scorers import Layer, ScorerParams, ScorerSpec, binary_spec, init_params
from esa_mpu.test import NumericTestCase
from esa_mpu.training import TrainConfig, evaluate, train


def gaussian_split(class_count=3, n_labeled=30, n_unlabeled=200, seed=0, separation=4.0):
    rng = np.random.default_rng([seed, 99])
    means = separation * rng.standard_normal((class_count, 2))
    source = synth_gaussian(class_count, 2, means, 1.0, 300, seed)
    return build_mpu_split(source, list(range(1, class_count)), class_count, n_labeled, n_unlabeled, seed)


class TrainConfigTest(NumericTestCase):
    def test_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig(method=Method.ESA)
        with self.assertRaises(ConfigError):
            TrainConfig(method=Method.MPU, epochs=0)
        with self.assertRaises(ConfigError):
            TrainConfig(method=Method.MPU, batch_size=0)
        TrainConfig(method=Method.ESA, thresholds=SieveThresholds())


class TrainTest(NumericTestCase):
    def test_zero_learning_rate(self):
        data, test = gaussian_split()
        spec = ScorerSpec(2, 3, (4,))
        config = TrainConfig(
            method=Method.MPU,
            epochs=1,
            optimizer=OptimizerSettings(method=OptimizerMethod.SGD, learning_rate=0.0),
            seed=3,
        )
        params, record = train(config, data, spec, test)
        self.assertParamsEqual(params, init_params(spec, 3))
        self.assertEqual(len(record.epochs), 1)
        self.assertEqual(record.final.epoch, 1)
        self.assertTrue(0.0 <= record.final.test_accuracy <= 1.0)

    def test_sieve_off_matches_mpu(self):
        data, test = gaussian_split(seed=1)
        spec = ScorerSpec(2, 3, (5,))
        base = TrainConfig(method=Method.MPU, loss=LossKind.SQUARE_QUARTER, epochs=4, batch_size=32, seed=2)
        _, mpu = train(base, data, spec, test)
        esa_config = dataclasses.replace(base, method=Method.ESA, thresholds=SieveThresholds.disabled())
        _, esa = train(esa_config, data, spec, test)
        for a, b in zip(esa.epochs, mpu.epochs):
            self.assertLess(abs(a.train_risk - b.train_risk), 1e-9)

    def test_deterministic(self):
        data, test = gaussian_split(seed=2)
        spec = ScorerSpec(2, 3)
        config = TrainConfig(method=Method.ESA, epochs=3, batch_size=16, thresholds=SieveThresholds(), seed=5)
        params_a, record_a = train(config, data, spec, test)
        params_b, record_b = train(config, data, spec, test)
        self.assertParamsEqual(params_a, params_b)
        self.assertEqual(record_a, record_b)

    def test_separable_gaussians(self):
        source = synth_gaussian(2, 2, [[-3.0, -3.0], [3.0, 3.0]], 1.0, 1000, 0)
        data, test = build_mpu_split(source, [1], 2, n_labeled=100, n_unlabeled=500, seed=0)
        config = TrainConfig(
            method=Method.MPU,
            loss=LossKind.SQUARE_QUARTER,
            epochs=50,
            batch_size=64,
            optimizer=OptimizerSettings(method=OptimizerMethod.SGD, learning_rate=0.05),
            seed=0,
        )
        _, record = train(config, data, ScorerSpec(2, 2), test)
        self.assertGreater(record.final.test_accuracy, 0.95)

    def test_sieved_counts(self):
        data, test = gaussian_split(seed=3)
        config = TrainConfig(
            method=Method.ESA, epochs=3, batch_size=32, thresholds=SieveThresholds(0.0, 0.0), seed=0
        )
        _, record = train(config, data, ScorerSpec(2, 3), test)
        # No sieving in the first epoch
        self.assertEqual(record.epochs[0].labeled_kept, data.labeled_counts)
        for epoch in record.epochs:
            for kept, total in zip(epoch.labeled_kept, data.labeled_counts):
                self.assertTrue(1 <= kept <= total)
            self.assertTrue(1 <= epoch.unlabeled_kept <= data.unlabeled_count)

    def test_nnpu_correction_recorded(self):
        data, test = gaussian_split(seed=4)
        config = TrainConfig(method=Method.NNPU, loss=LossKind.LOGISTIC, epochs=3, batch_size=32, seed=0)
        _, record = train(config, data, binary_spec(2), test)
        for epoch in record.epochs:
            self.assertIsNotNone(epoch.min_correction)
            self.assertGreaterEqual(epoch.min_correction, 0.0)

    def test_perturbed_priors_are_used(self):
        data, test = gaussian_split(seed=5)
        config = TrainConfig(method=Method.MPU, epochs=1, seed=0)
        _, plain = train(config, data, ScorerSpec(2, 3), test)
        _, scaled = train(config, data, ScorerSpec(2, 3), test, priors=ClassPriors(tuple(0.5 * p for p in data.priors.pi)))
        self.assertNotEqual(plain.final.train_risk, scaled.final.train_risk)

    def test_mismatched_spec(self):
        data, test = gaussian_split()
        with self.assertRaises(ConfigError):
            train(TrainConfig(method=Method.MPU, epochs=1), data, ScorerSpec(2, 4), test)
        with self.assertRaises(ConfigError):
            train(TrainConfig(method=Method.UPU, epochs=1), data, ScorerSpec(2, 3), test)
        with self.assertRaises(ConfigError):
            train(TrainConfig(method=Method.MPU, epochs=1), data, ScorerSpec(3, 3), test)


class EvaluateTest(NumericTestCase):
    def test_perfect_scorer(self):
        # Scores (-x, x): class 1 for x < 0, class 2 for x > 0
        params = ScorerParams(ScorerSpec(1, 2), [Layer(np.array([[-1.0], [1.0]]), np.zeros(2))])
        test = LabeledDataset(np.array([[-2.0], [-1.0], [1.0], [3.0]]), np.array([1, 1, 2, 2]), class_count=2)
        metrics = evaluate(params, test)
        self.assertEqual(metrics.accuracy, 1.0)
        self.assertEqual(metrics.negative_accuracy, 1.0)
        self.assertEqual(metrics.class_accuracies, (1.0, 1.0))

    def test_constant_negative(self):
        params = ScorerParams(ScorerSpec(1, 3), [Layer(np.zeros((3, 1)), np.array([0.0, 0.0, 1.0]))])
        labels = np.array([1, 2, 3, 3, 3, 2, 1, 3])
        test = LabeledDataset(np.zeros((8, 1)), labels, class_count=3)
        metrics = evaluate(params, test)
        self.assertEqual(metrics.accuracy, 0.5)
        self.assertEqual(metrics.negative_accuracy, 1.0)
        self.assertEqual(metrics.class_accuracies[:2], (0.0, 0.0))

    def test_random_predictions(self):
        rng = np.random.default_rng(0)
        n = 20_000
        # Random linear scorer on random inputs gives predictions independent of the random labels
        params = ScorerParams(ScorerSpec(4, 4), [Layer(np.eye(4), np.zeros(4))])
        test = LabeledDataset(rng.standard_normal((n, 4)), rng.integers(1, 5, size=n), class_count=4)
        metrics = evaluate(params, test)
        self.assertBinomialRate(int(round(metrics.accuracy * n)), n, 0.25)

    def test_absent_class(self):
        params = ScorerParams(ScorerSpec(1, 3), [Layer(np.zeros((3, 1)), np.array([1.0, 0.0, 0.0]))])
        test = LabeledDataset(np.zeros((2, 1)), np.array([1, 3]), class_count=3)
        metrics = evaluate(params, test)
        self.assertTrue(math.isnan(metrics.class_accuracies[1]))

    def test_binary_scorer_on_multiclass_test(self):
        params = ScorerParams(binary_spec(1), [Layer(np.zeros((2, 1)), np.array([1.0, 0.0]))])
        test = LabeledDataset(np.zeros((4, 1)), np.array([1, 2, 3, 1]), class_count=3)
        self.assertEqual(evaluate(params, test).accuracy, 0.5)

    def test_empty(self):
        params = init_params(ScorerSpec(1, 2), 0)
        with self.assertRaises(ConfigError):
            evaluate(params, LabeledDataset(np.zeros((0, 1)), np.zeros(0, dtype=np.int64), class_count=2))
