import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kpidiag.ingest import LogTable
from kpidiag.model import ColumnKind, ColumnRole, ColumnSpec


def make_table(columns: dict[str, tuple[str, list]], kpi: str | None = None) -> LogTable:
    """Build a LogTable from {name: (kind, values)}; kind is "cat" or "cont".

    None entries are missing. The named column, if any, gets the KPI role.
    """
    schema = []
    data = {}
    for name, (kind, values) in columns.items():
        col_kind = ColumnKind.CATEGORICAL if kind == "cat" else ColumnKind.CONTINUOUS
        role = ColumnRole.KPI if name == kpi else ColumnRole.FEATURE
        schema.append(ColumnSpec(name, col_kind, role))
        data[name] = values
    return LogTable.from_columns(schema, data)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
