from django.core.management.base import CommandParser

from esa_mpu.experiments import generate_dataset, load_experiment_config
from esa_mpu.management.base import BaseCommand


class Command(BaseCommand):
    help = (
        "Writes the synthetic Gaussian dataset described by the config's synthetic_* keys as an IDX pair "
        "named <output>-images-idx3-ubyte and <output>-labels-idx1-ubyte."
    )

    def add_arguments(self, parser: CommandParser):
        super().add_arguments(parser)
        parser.add_argument("config", help="Path to a key = value experiment configuration file.")
        self.add_output_arguments(parser, jobs=False)

    def handle(self, *args, **options):
        config = load_experiment_config(options["config"])
        prefix = options["output"] or config.output or "synthetic"
        images_path, labels_path = generate_dataset(config, prefix)
        self.stdout.write(f"Wrote {images_path} and {labels_path}")
