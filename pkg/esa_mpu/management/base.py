import logging
import time

from django.core.management.base import BaseCommand as DjangoBaseCommand, CommandError, CommandParser

from esa_mpu.exceptions import EsaMpuError
from esa_mpu.utils import timedelta_formatter

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_USAGE = 2


class BaseCommand(DjangoBaseCommand):
    """
    Subclasses implement `handle()` as usual. Library errors and missing
    files become CommandError with exit status 2; a subclass signals a
    failed verification by raising CommandError with returncode 1 itself.
    """
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        setattr(self, "_handle", self.handle)
        setattr(self, "handle", self.real_handle)

    def add_arguments(self, parser: CommandParser):
        super().add_arguments(parser)
        parser.add_argument(
            "--ipdb",
            action="store_true",
            help="Drop into IPDB shell at the start of execution.",
        )
        parser.add_argument(
            "--quiet",
            action="store_true",
            help="Only log errors.",
        )

    def add_output_arguments(self, parser: CommandParser, jobs: bool = True):
        parser.add_argument("--output", help="Write results to this file instead of standard output.")
        if jobs:
            parser.add_argument(
                "--jobs",
                type=int,
                default=1,
                help="Number of worker threads for independent runs.",
            )

    def real_handle(self, *args, **options):
        package_logger = logging.getLogger("esa_mpu")
        previous_level = package_logger.level
        if options.get("quiet"):
            package_logger.setLevel(logging.ERROR)
        if options.get("jobs") is not None and options["jobs"] < 1:
            raise CommandError(f"--jobs must be >= 1, got {options['jobs']}", returncode=EXIT_USAGE)
        started = time.monotonic()
        try:
            if options["ipdb"]:
                try:
                    import ipdb
                except ImportError as e:
                    raise CommandError("--ipdb flag set, but ipdb could not be imported. Exiting!") from e
                return ipdb.runcall(self._handle, *args, **options)
            return self._handle(*args, **options)
        except EsaMpuError as e:
            raise CommandError(str(e), returncode=EXIT_USAGE) from e
        except FileNotFoundError as e:
            raise CommandError(f"No such file: {e.filename}", returncode=EXIT_USAGE) from e
        except OSError as e:
            raise CommandError(f"{e.filename or 'I/O error'}: {e.strerror or e}", returncode=EXIT_USAGE) from e
        finally:
            package_logger.setLevel(previous_level)
            logger.debug("Command finished in %s", timedelta_formatter(time.monotonic() - started))

    def _handle(self, *args, **options):
        raise NotImplementedError("Default _handle() should have been overwritten by now?!")
