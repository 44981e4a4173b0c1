from esa_mpu.experiments import load_experiment_config, run_sweep
from esa_mpu.management.commands.run import Command as RunCommand


class Command(RunCommand):
    help = (
        "Repeats `run` for every value in `values` along `axis` (theta, mu, sigma_m or sigma_u). "
        "Invalid values are skipped with a warning row."
    )

    def handle(self, *args, **options):
        config = load_experiment_config(options["config"])
        result = run_sweep(config, jobs=options["jobs"])
        self.write_result(result, options["output"] or config.output)
