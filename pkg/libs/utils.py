"""UTILS
General purpose functions

License: MIT
"""
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Union

import numpy as np


def md5sum(file: Union[str, Path]) -> str:
    """
    Create a strings with the md5 of a given file
    :param file: filename of the file whose md5 is computed for
    :return: md5 string
    """
    md5_hash = hashlib.md5()

    with open(file, "rb") as file:
        content = file.read()

    md5_hash.update(content)

    return md5_hash.hexdigest()


def round_significant(x: float, digits: int = 9) -> float:
    """
    Round to a number of significant digits, non-finite values untouched
    """
    if x == 0 or not math.isfinite(x):
        return x
    return float(f'{x:.{digits}g}')


def to_jsonable(value: Any, digits: int = 9) -> Any:
    """
    Recursively convert numpy scalars, tuples and sets into plain JSON types
    with floats rounded to the given significant digits
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v, digits) for v in value]
    if isinstance(value, (set, frozenset)):
        return [to_jsonable(v, digits) for v in sorted(value)]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return round_significant(value, digits) if math.isfinite(value) \
            else str(value)
    return value


def write_jsonl(records: Iterable[dict], path: Union[str, Path]):
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(to_jsonable(record), sort_keys=True) + '\n')


def read_jsonl(path: Union[str, Path]) -> list:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
