"""
JSON helpers shared by the reports, logs and ablation tables.
"""

import json
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np


class NumpyEncoder(json.JSONEncoder):
    """JSON encoder that understands NumPy scalars, arrays and sets"""
    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.bool_):
            return bool(obj)
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, (set, frozenset)):
            return sorted(obj)
        elif hasattr(obj, 'item'):  # Handle other numpy scalar types
            return obj.item()
        return super(NumpyEncoder, self).default(obj)


def dumps(data: Any, **kwargs) -> str:
    """
    Serialize data to a JSON string with stable defaults

    Args:
        data: Any JSON-serializable object (NumPy types allowed)
        **kwargs: Additional parameters for json.dumps() (e.g., indent)

    Returns:
        str: JSON text
    """
    json_params = {
        'indent': 2,
        'ensure_ascii': False,
        'cls': NumpyEncoder,
    }
    json_params.update(kwargs)
    return json.dumps(data, **json_params)


def write_json(data: Any, path: Optional[str], **kwargs) -> str:
    """
    Write one JSON document to path, or return it when path is None

    Args:
        data: Object to serialize
        path: Destination file; None means the caller prints the text
        **kwargs: Additional parameters for json.dumps()

    Returns:
        str: The JSON text that was written
    """
    text = dumps(data, **kwargs) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding='utf-8')
    return text


def write_jsonl(records: Iterable[Any], path: Optional[str]) -> str:
    """Write one compact JSON object per line (JSON-lines)"""
    text = "".join(dumps(record, indent=None) + "\n" for record in records)
    if path is not None:
        Path(path).write_text(text, encoding='utf-8')
    return text


def read_jsonl(path: str) -> list:
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]
