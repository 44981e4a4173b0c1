import json

from django.core.management.base import CommandError, CommandParser

from esa_mpu.management.base import EXIT_FAILURE, EXIT_USAGE, BaseCommand
from esa_mpu.settings import esa_settings
from esa_mpu.suites import SUITES, SuiteOptions, SuiteReport, run_suite
from esa_mpu.utils import ReportJSONEncoder


class Command(BaseCommand):
    help = "Runs a verification suite; exits with status 1 if any non-informational check fails."

    def add_arguments(self, parser: CommandParser):
        super().add_arguments(parser)
        parser.add_argument("suite", choices=[*SUITES, "all"], help="Suite to run.")
        parser.add_argument("--format", choices=["text", "json"], default=None, help="Report format.")
        parser.add_argument("--trials", type=int, default=None, help="Monte-Carlo trials (bias and decay).")
        parser.add_argument("--seed", type=int, default=None)
        self.add_output_arguments(parser)

    def handle(self, *args, **options):
        verify = esa_settings.VERIFY
        trials = options["trials"] if options["trials"] is not None else verify.TRIALS
        if trials < 2:
            raise CommandError(f"--trials must be >= 2, got {trials}", returncode=EXIT_USAGE)
        suite_options = SuiteOptions(
            trials=trials,
            seed=options["seed"] if options["seed"] is not None else verify.SEED,
            decay_sizes=tuple(verify.DECAY_SIZES),
            random_instances=verify.RANDOM_INSTANCES,
            random_domains=verify.RANDOM_DOMAINS,
            jobs=options["jobs"],
        )
        names = SUITES if options["suite"] == "all" else (options["suite"],)
        reports = [run_suite(name, suite_options) for name in names]
        self.write_reports(reports, options["format"] or esa_settings.OUTPUT.REPORT_FORMAT, options["output"])

        failed = [report.suite for report in reports if not report.passed]
        if failed:
            raise CommandError("Verification failed: %s" % ", ".join(failed), returncode=EXIT_FAILURE)

    def write_reports(self, reports: list[SuiteReport], report_format: str, output: str | None):
        if report_format == "json":
            content = json.dumps([report.as_dict() for report in reports], cls=ReportJSONEncoder, indent=2)
        else:
            float_format = esa_settings.OUTPUT.FLOAT_FORMAT
            content = "\n".join(line for report in reports for line in report.as_lines(float_format))
        if output:
            with open(output, "w", encoding="utf-8") as f:
                f.write(content + "\n")
        else:
            self.stdout.write(content)
