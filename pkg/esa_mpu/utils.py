import math
from datetime import timedelta
from typing import Any, Iterable

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder


class ReportJSONEncoder(DjangoJSONEncoder):
    """
    DjangoJSONEncoder that also understands numpy scalars and arrays, and
    writes non-finite floats as the strings "nan", "inf" and "-inf" so the
    output stays valid JSON.
    """
    def default(self, o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return finite_or_str(float(o))
        if isinstance(o, np.ndarray):
            return [self.default(v) if isinstance(v, np.generic) else v for v in o.tolist()]
        if isinstance(o, tuple):
            return list(o)
        try:
            return super().default(o)
        except TypeError:
            return str(o)

    def iterencode(self, o, _one_shot=False):
        return super().iterencode(sanitize_floats(o), _one_shot)


def finite_or_str(value: float) -> float | str:
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def sanitize_floats(obj: Any) -> Any:
    if isinstance(obj, float):
        return finite_or_str(obj)
    if isinstance(obj, dict):
        return {k: sanitize_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize_floats(v) for v in obj]
    return obj


def format_float(value: float | int | None, float_format: str = "%.10g") -> str:
    """CSV/report rendering: empty for None, nan/inf/-inf spelled out."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return float_format % value


def natural_list(items: Iterable, or_separated=False) -> str:
    """
    Turns `items` into a natural-language string with the Oxford comma:
    natural_list(["a", "b", "c"], or_separated=True) == "a, b, or c"
    """
    item_list = [str(item) for item in items]
    conjunction = "or" if or_separated else "and"
    if len(item_list) <= 1:
        return "".join(item_list)
    if len(item_list) == 2:
        return f"{item_list[0]} {conjunction} {item_list[1]}"
    return "%s, %s %s" % (", ".join(item_list[:-1]), conjunction, item_list[-1])


def natural_or_list(items: Iterable) -> str:
    return natural_list(items, or_separated=True)


def timedelta_formatter(value: timedelta | float | int) -> str:
    """Short format, e.g. "1h2m3s"; floats and ints are seconds."""
    if isinstance(value, (int, float)):
        seconds = int(value)
    else:
        seconds = int(value.total_seconds())
    hours, seconds = divmod(seconds, 3600)
    minutes, seconds = divmod(seconds, 60)
    time_str = ""
    if hours:
        time_str += "{}h".format(hours)
    if minutes:
        time_str += "{}m".format(minutes)
    if seconds:
        time_str += "{}s".format(seconds)
    return time_str or "0s"
