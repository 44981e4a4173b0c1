"""
Console entry point: `esa-mpu run experiment.cfg`, `esa-mpu verify all`, ...

Uses the project's Django settings when DJANGO_SETTINGS_MODULE is set, and
a minimal settings object otherwise.
"""
import os
import sys

import django
from django.conf import settings
from django.core.management import execute_from_command_line

COMMAND_ALIASES = {"gen-data": "gen_data"}

DEFAULT_LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain", "stream": "ext://sys.stderr"},
    },
    "loggers": {
        "esa_mpu": {"handlers": ["console"], "level": "INFO", "propagate": False},
    },
}


def configure():
    if not settings.configured and not os.environ.get("DJANGO_SETTINGS_MODULE"):
        settings.configure(
            INSTALLED_APPS=["esa_mpu"],
            LOGGING=DEFAULT_LOGGING,
            USE_TZ=True,
        )
    django.setup()


def main(argv: list[str] | None = None):
    argv = list(sys.argv if argv is None else argv)
    if len(argv) > 1:
        argv[1] = COMMAND_ALIASES.get(argv[1], argv[1])
    argv[0] = "esa-mpu"
    configure()
    execute_from_command_line(argv)


if __name__ == "__main__":
    main()
