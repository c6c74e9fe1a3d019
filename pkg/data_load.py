# data_load.py
# ---------------------------------------------------------
# PURPOSE:
#   ✔ Read a model dataset from CSV or Excel
#   ✔ Standardize column names
#   ✔ Check columns against the model schema (real / int)
#   ✔ Return {column: numpy array}
# ---------------------------------------------------------

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from errors import DatasetSchemaError

logger = logging.getLogger(__name__)


def read_table(path):
    path = Path(path)
    if not path.exists():
        raise DatasetSchemaError(f"dataset not found: {path}")
    if path.suffix.lower() in (".xlsx", ".xls"):
        return pd.read_excel(path)
    return pd.read_csv(path)


def normalize_columns(df):
    # case is kept: schemas use names like "K"
    df.columns = (
        df.columns.astype(str)
        .str.strip()
        .str.replace(" ", "_")
        .str.replace("-", "_")
    )
    return df


def _typed(series, kind, column):
    values = pd.to_numeric(series, errors="coerce")
    if values.isna().any():
        row = int(values.isna().to_numpy().argmax())
        raise DatasetSchemaError(f"column {column!r} has a missing or non-numeric value at row {row + 1}", column)
    arr = values.to_numpy(dtype=float)
    if kind == "int":
        if not np.all(np.floor(arr) == arr):
            raise DatasetSchemaError(f"column {column!r} must hold integers", column)
        return arr.astype(int)
    return arr


def load_dataset(path, schema=None):
    """Columns of a dataset file typed per ``schema`` ({column: "real" | "int"}).

    Without a schema every column is read as real. Missing columns raise
    DatasetSchemaError naming the column; extra columns are dropped with
    a warning.
    """
    df = normalize_columns(read_table(path))
    if schema is None:
        schema = {c: "real" for c in df.columns}
    for column in schema:
        if column not in df.columns:
            raise DatasetSchemaError(f"{Path(path).name}: missing column {column!r}", column)
    extra = [c for c in df.columns if c not in schema]
    if extra:
        logger.warning("%s: ignoring extra columns %s", Path(path).name, extra)
    return {c: _typed(df[c], kind, c) for c, kind in schema.items()}
