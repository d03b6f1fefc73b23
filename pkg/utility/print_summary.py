import numpy as np


def _format_value(value):
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return f"{int(value):,}" if value >= 1000 else str(int(value))
    if isinstance(value, (list, tuple)):
        # (low, high) pairs read as ranges
        if len(value) == 2 and all(isinstance(x, (int, float, np.number)) for x in value):
            return f"{_format_value(value[0])} - {_format_value(value[1])}"
        if len(value) > 12:
            shown = ", ".join(_format_value(v) for v in value[:12])
            return f"[{shown}, ... ({len(value)} items)]"
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k}: {_format_value(v)}" for k, v in value.items()) + "}"
    return str(value)


def format_summary(summary, title="Summary"):
    """
    Render a summary dictionary as aligned "Key: value" lines

    Parameters:
    summary (dict): Summary dictionary returned by a pipeline step
    title (str): Title for the summary output

    Returns:
    str: The rendered block, title underlined with '='
    """
    lines = [title, "=" * len(title)]
    if not summary:
        return "\n".join(lines)

    keys = [key.replace('_', ' ').title() for key in summary]
    width = max(len(k) for k in keys)
    for formatted_key, value in zip(keys, summary.values()):
        lines.append(f"{formatted_key.ljust(width)} : {_format_value(value)}")
    return "\n".join(lines)


def print_summary(summary, title="Summary", stream=None):
    """
    Print all key-value pairs from a summary dictionary

    Parameters:
    summary (dict): Summary dictionary from training, evaluation or generation steps
    title (str): Title for the summary output
    stream (file): Destination, stdout by default
    """
    print(format_summary(summary, title), file=stream)
    print(file=stream)
