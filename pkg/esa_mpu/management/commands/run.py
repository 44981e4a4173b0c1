from django.core.management.base import CommandParser

from esa_mpu.experiments import ExperimentResult, load_experiment_config, run_experiment, write_csv
from esa_mpu.management.base import BaseCommand
from esa_mpu.settings import esa_settings
from esa_mpu.utils import format_float


class Command(BaseCommand):
    help = "Trains the configured methods over `repeat` seeds and writes per-epoch CSV rows plus summaries."

    def add_arguments(self, parser: CommandParser):
        super().add_arguments(parser)
        parser.add_argument("config", help="Path to a key = value experiment configuration file.")
        self.add_output_arguments(parser)

    def handle(self, *args, **options):
        config = load_experiment_config(options["config"])
        result = run_experiment(config, jobs=options["jobs"])
        self.write_result(result, options["output"] or config.output)

    def write_result(self, result: ExperimentResult, output: str | None):
        """
        CSV goes to `output`, or to stdout when there is none; the summary
        goes to stdout, or to stderr when stdout already carries the CSV.
        """
        float_format = esa_settings.OUTPUT.FLOAT_FORMAT
        if output:
            with open(output, "w", encoding="utf-8", newline="") as f:
                write_csv(result.rows, f, float_format)
            summary = self.stdout
        else:
            write_csv(result.rows, self.stdout, float_format)
            summary = self.stderr

        # Summary rows always come as a (mean, std) pair
        for mean, std in zip(result.rows, result.rows[1:]):
            if mean.seed != "mean":
                continue
            summary.write(
                f"{mean.method} theta={format_float(mean.theta)} mu={format_float(mean.mu)} "
                f"sigma_m={format_float(mean.sigma_m)} sigma_u={format_float(mean.sigma_u)}: "
                f"test accuracy {format_float(mean.test_acc, '%.4f')} +/- {format_float(std.test_acc, '%.4f')}, "
                f"negative class {format_float(mean.neg_acc, '%.4f')} (epoch {mean.epoch})"
            )
        if result.skipped:
            summary.write("Skipped values: %s" % ", ".join(format_float(v) for v in result.skipped))
        if output:
            summary.write(f"Wrote {len(result.rows)} rows to {output}")
