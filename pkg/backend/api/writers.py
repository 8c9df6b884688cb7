"""
CSV and JSON emission shared by the CLI and the reproduction runner
"""

import json
import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence, TextIO

import jsonschema
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_DIR = Path(__file__).resolve().parents[2] / 'schemas'
FLOAT_FORMAT = '%.17g'


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'"""
    if hasattr(value, 'to_dict'):
        return to_jsonable(value.to_dict())
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    if hasattr(value, 'value') and isinstance(getattr(value, 'value'), str):
        return value.value
    return value


def dumps_json(value: Any) -> str:
    return json.dumps(to_jsonable(value), indent=2, sort_keys=True) + '\n'


def write_json(value: Any, stream: TextIO):
    stream.write(dumps_json(value))


def frame(rows: Iterable[Sequence], columns: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=list(columns))


def write_csv(df: pd.DataFrame, stream: TextIO):
    """Header row, 17 significant digits, 'nan' for missing values"""
    stream.write(df.to_csv(index=False, float_format=FLOAT_FORMAT, na_rep='nan', lineterminator='\n'))


@lru_cache(maxsize=None)
def load_schema(name: str) -> Dict:
    path = SCHEMA_DIR / f'{name}.schema.json'
    with open(path, 'r') as f:
        return json.load(f)


def validate_json(document: Any, name: str):
    """Raise jsonschema.ValidationError when ``document`` does not match schemas/<name>.schema.json"""
    jsonschema.validate(instance=document, schema=load_schema(name))
