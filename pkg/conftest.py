"""Pytest wiring: use the same settings as `django-admin test --settings=tests.settings`."""
import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "tests.settings")
django.setup()
