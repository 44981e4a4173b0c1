import csv
import dataclasses
import io
import json
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from django.core.management import CommandError, call_command

from esa_mpu.datasets import build_mpu_split, load_idx
from esa_mpu.experiments import (
    CSV_HEADER,
    ExperimentConfig,
    load_sources,
    parse_experiment_config,
    run_experiment,
    run_sweep,
)
from esa_mpu.losses import certain_loss_unlabeled
from esa_mpu.risks import Method
from esa_mpu.scorers import ScorerSpec, forward_batch
from esa_mpu.test import NumericTestCase
from esa_mpu.training import train

SYNTHETIC_CONFIG = """\
# Small synthetic run
method = mpu, esa
dataset = synthetic
synthetic_classes = 3
synthetic_per_class = 200
n_labeled = 20
n_unlabeled = 200
hidden = linear
epochs = 2
batch_size = 64
repeat = 3
"""

MNIST_DIR = os.environ.get("ESA_MPU_MNIST_DIR")


class CommandTestCase(NumericTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, text: str, name: str = "experiment.cfg") -> str:
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    def call(self, *args, **options) -> tuple[str, str]:
        stdout, stderr = io.StringIO(), io.StringIO()
        call_command(*args, stdout=stdout, stderr=stderr, quiet=True, **options)
        return stdout.getvalue(), stderr.getvalue()

    def read_csv(self, text: str) -> list[dict[str, str]]:
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        self.assertListEqual(header, list(CSV_HEADER))
        return [dict(zip(header, row)) for row in reader]


class RunCommandTest(CommandTestCase):
    def test_csv_and_summary(self):
        stdout, stderr = self.call("run", self.write_config(SYNTHETIC_CONFIG))
        rows = self.read_csv(stdout)
        # 2 methods x (3 seeds x 2 epochs + mean + std)
        self.assertEqual(len(rows), 16)
        self.assertListEqual([row["seed"] for row in rows[:8]], ["0", "0", "1", "1", "2", "2", "mean", "std"])
        self.assertEqual({row["method"] for row in rows}, {"mpu", "esa"})
        self.assertEqual({row["dataset"] for row in rows}, {"synthetic"})

        for method in ("mpu", "esa"):
            method_rows = [row for row in rows if row["method"] == method]
            finals = [float(row["test_acc"]) for row in method_rows if row["epoch"] == "2" and row["seed"].isdigit()]
            summary = {row["seed"]: row for row in method_rows if not row["seed"].isdigit()}
            self.assertAlmostEqual(float(summary["mean"]["test_acc"]), float(np.mean(finals)), places=8)
            self.assertAlmostEqual(float(summary["std"]["test_acc"]), float(np.std(finals, ddof=1)), places=8)

        self.assertIn("mpu theta=1 mu=1", stderr)
        self.assertIn("esa theta=1 mu=1", stderr)

    def test_output_file(self):
        output = self.dir / "results.csv"
        stdout, _ = self.call("run", self.write_config(SYNTHETIC_CONFIG), output=str(output))
        self.assertEqual(len(self.read_csv(output.read_text(encoding="utf-8"))), 16)
        self.assertIn(f"Wrote 16 rows to {output}", stdout)

    def test_identity_perturbations(self):
        plain, _ = self.call("run", self.write_config(SYNTHETIC_CONFIG))
        explicit, _ = self.call("run", self.write_config(SYNTHETIC_CONFIG + "theta = 1\nmu = 1.0\n", "identity.cfg"))
        self.assertEqual(plain, explicit)

    def test_deterministic_across_jobs(self):
        serial, _ = self.call("run", self.write_config(SYNTHETIC_CONFIG))
        threaded, _ = self.call("run", self.write_config(SYNTHETIC_CONFIG), jobs=3)
        self.assertEqual(serial, threaded)

    def test_missing_idx_file(self):
        missing = self.dir / "missing-images-idx3-ubyte"
        config = self.write_config(
            f"dataset = idx\nimages = {missing}\nlabels = {self.dir / 'missing-labels'}\n"
            "positive_classes = 1, 2\nnegative_class = 0\n"
        )
        with self.assertRaises(CommandError) as cm:
            self.call("run", config)
        self.assertEqual(cm.exception.returncode, 2)
        self.assertIn(str(missing), str(cm.exception))

    def test_config_errors(self):
        config = self.write_config("method = esa\nepochs = 2\nbogus = 1\n")
        with self.assertRaises(CommandError) as cm:
            self.call("run", config)
        self.assertEqual(cm.exception.returncode, 2)
        self.assertIn("line 3", str(cm.exception))
        self.assertIn('unknown key "bogus"', str(cm.exception))

        config = self.write_config("epochs = many\n", "bad.cfg")
        with self.assertRaises(CommandError) as cm:
            self.call("run", config)
        self.assertIn("line 1", str(cm.exception))

    def test_missing_config(self):
        with self.assertRaises(CommandError) as cm:
            self.call("run", str(self.dir / "nope.cfg"))
        self.assertEqual(cm.exception.returncode, 2)

    def test_invalid_jobs(self):
        with self.assertRaises(CommandError) as cm:
            self.call("run", self.write_config(SYNTHETIC_CONFIG), jobs=0)
        self.assertEqual(cm.exception.returncode, 2)


class ConfigParsingTest(NumericTestCase):
    def test_values(self):
        config = parse_experiment_config(
            "method = ESA, nnpu\nhidden = 64, 32\nsigma_u = 0.5\nlearning_rate = 0.5\n"
            "positive_classes = R, R\nnegative_class = R\ndataset = idx\nimages = a\nlabels = b\n"
        )
        self.assertEqual(config.methods, (Method.ESA, Method.NNPU))
        self.assertEqual(config.hidden_layers, (64, 32))
        self.assertEqual(config.thresholds.sigma_u, 0.5)
        self.assertEqual(config.thresholds.sigma_m, 0.0)
        self.assertEqual(config.optimizer.learning_rate, 0.5)
        self.assertIsNone(config.positive_classes)
        self.assertEqual(config.n_positive, 2)
        self.assertEqual(config.dataset_name, "a")

    def test_errors(self):
        cases = {
            "seed = 1\nseed = 2\n": 'duplicate key "seed" (first set on line 1)',
            "no equals sign\n": 'expected "key = value"',
            "method = adam\n": 'bad value for "method"',
            "positive_classes = 1, 2\n": '"negative_class"',
            "dataset = idx\n": '"images" and "labels"',
        }
        for text, message in cases.items():
            with self.subTest(text=text):
                with self.assertRaisesMessage(Exception, message):
                    parse_experiment_config(text, "test.cfg")


class SweepCommandTest(CommandTestCase):
    def test_single_value_matches_run(self):
        run_output, _ = self.call("run", self.write_config(SYNTHETIC_CONFIG))
        sweep_output, _ = self.call(
            "sweep", self.write_config(SYNTHETIC_CONFIG + "axis = theta\nvalues = 1\n", "sweep.cfg")
        )
        self.assertEqual(run_output, sweep_output)

    def test_invalid_value_is_skipped(self):
        stdout, stderr = self.call(
            "sweep", self.write_config(SYNTHETIC_CONFIG + "axis = theta\nvalues = 1, 50\n", "sweep.cfg")
        )
        rows = self.read_csv(stdout)
        skipped = [row for row in rows if row["seed"] == "skipped"]
        self.assertEqual(len(skipped), 2)
        self.assertEqual({row["theta"] for row in skipped}, {"50"})
        self.assertEqual({row["test_acc"] for row in skipped}, {""})
        self.assertEqual(len(rows), 16 + 2)
        self.assertIn("Skipped values: 50", stderr)

    def test_sigma_axis(self):
        stdout, _ = self.call(
            "sweep",
            self.write_config(SYNTHETIC_CONFIG + "axis = sigma_u\nvalues = -inf, 0\n", "sweep.cfg"),
        )
        rows = self.read_csv(stdout)
        self.assertEqual([row["sigma_u"] for row in rows if row["seed"] == "mean"], ["-inf", "-inf", "0", "0"])

    def test_missing_axis(self):
        with self.assertRaises(CommandError) as cm:
            self.call("sweep", self.write_config(SYNTHETIC_CONFIG))
        self.assertEqual(cm.exception.returncode, 2)


class VerifyCommandTest(CommandTestCase):
    def test_identities(self):
        stdout, _ = self.call("verify", "identities")
        self.assertTrue(stdout.startswith("suite=identities passed=True"))

    def test_json(self):
        output = self.dir / "report.json"
        self.call("verify", "enumeration", format="json", output=str(output))
        reports = json.loads(output.read_text(encoding="utf-8"))
        self.assertEqual(len(reports), 1)
        self.assertDictContains(reports[0], {"suite": "enumeration", "passed": True})

    def test_too_few_trials(self):
        with self.assertRaises(CommandError) as cm:
            self.call("verify", "bias", trials=1)
        self.assertEqual(cm.exception.returncode, 2)


class GenDataCommandTest(CommandTestCase):
    def test_writes_idx_pair(self):
        config = self.write_config("synthetic_classes = 3\nsynthetic_per_class = 10\nsynthetic_dim = 4\n")
        prefix = self.dir / "toy"
        stdout, _ = self.call("gen_data", config, output=str(prefix))
        self.assertIn("toy-images-idx3-ubyte", stdout)
        dataset = load_idx(f"{prefix}-images-idx3-ubyte", f"{prefix}-labels-idx1-ubyte")
        self.assertEqual(dataset.features.shape, (30, 4))
        self.assertListEqual(sorted(set(dataset.labels.tolist())), [1, 2, 3])
        self.assertGreaterEqual(dataset.features.min(), 0.0)
        self.assertLessEqual(dataset.features.max(), 1.0)


@unittest.skipUnless(MNIST_DIR, "Set ESA_MPU_MNIST_DIR to the MNIST IDX files to run")
class MnistTrendTest(NumericTestCase):
    def mnist_config(self, extra: str = "") -> ExperimentConfig:
        directory = Path(MNIST_DIR or "")
        return parse_experiment_config(
            "dataset = idx\n"
            f"images = {directory / 'train-images-idx3-ubyte.gz'}\n"
            f"labels = {directory / 'train-labels-idx1-ubyte.gz'}\n"
            "positive_classes = 1, 2, 3\n"
            "negative_class = 0\n"
            "n_labeled = 500\n"
            "n_unlabeled = 3000\n"
            "hidden = 128\n"
            "epochs = 50\n"
            "repeat = 5\n" + extra
        )

    @staticmethod
    def mean_accuracies(result, axis: str) -> dict[float, float]:
        return {
            getattr(row, axis): row.test_acc
            for row in result.rows
            if row.seed == "mean" and row.method == Method.ESA.value
        }

    def test_method_ordering(self):
        result = run_experiment(self.mnist_config("method = esa, nmpu, mpu\n"), jobs=os.cpu_count() or 1)
        accuracy = {
            method: float(np.mean([record.final.test_accuracy for record in records]))
            for method, records in result.records.items()
        }
        self.assertGreaterEqual(accuracy[Method.ESA], accuracy[Method.NMPU])
        self.assertGreaterEqual(accuracy[Method.NMPU], accuracy[Method.MPU])
        self.assertGreaterEqual(accuracy[Method.ESA] - accuracy[Method.MPU], 0.005)

    def test_prior_misspecification(self):
        config = self.mnist_config("method = esa\naxis = theta\nvalues = 1, 0.75, 1.5, 2.0\n")
        result = run_sweep(config, jobs=os.cpu_count() or 1)
        self.assertListEqual(result.skipped, [])
        accuracy = self.mean_accuracies(result, "theta")
        for theta in (0.75, 1.5, 2.0):
            with self.subTest(theta=theta):
                self.assertLessEqual(abs(accuracy[theta] - accuracy[1.0]), 0.03)

    def test_extreme_unlabeled_threshold(self):
        config = self.mnist_config("method = esa\n")
        sources = load_sources(config)
        data, test = build_mpu_split(
            sources[0], [1, 2, 3], 0, config.n_labeled, config.n_unlabeled, config.seed
        )
        spec = ScorerSpec(data.dim, data.class_count, config.hidden_layers)
        params, _ = train(config.train_config(Method.ESA, config.seed), data, spec, test)
        unlabeled_losses = certain_loss_unlabeled(config.loss, forward_batch(params, data.unlabeled))
        extreme = float(np.percentile(unlabeled_losses, 99)) + 1e-3

        sweep = dataclasses.replace(config, axis="sigma_u", values=(0.0, extreme))
        accuracy = self.mean_accuracies(run_sweep(sweep, jobs=os.cpu_count() or 1, sources=sources), "sigma_u")
        self.assertLess(accuracy[extreme], accuracy[0.0])
