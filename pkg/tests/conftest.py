import os

os.environ.setdefault("QUERYSYNTH_COUNT_WITH_TIKTOKEN", "false")

from datetime import date
from decimal import Decimal
from pathlib import Path

import pytest

from querysynth.models.catalog import Catalog, TableSchema
from querysynth.storage.datagen import generate_tables, tpch_catalog
from querysynth.storage.persist import save_table
from querysynth.storage.table import encode_table

QUERIES_DIR = Path(__file__).resolve().parent.parent / "queries" / "tpch"
TINY_SCALE = 0.001


def make_table(name: str, columns: list, rows: list, block_size: int = 2048):
    """Table from (column name, type string[, nullable]) tuples and row tuples."""
    schema = TableSchema.model_validate({
        "name": name,
        "columns": [{"name": c[0], "type": c[1], "nullable": len(c) > 2 and c[2]} for c in columns],
    })
    values = {spec.name: [row[i] for row in rows] for i, spec in enumerate(schema.columns)}
    return encode_table(name, schema, values, block_size=block_size)


@pytest.fixture
def sales_tables():
    """Two small relations joined on region id, with a nullable decimal."""
    regions = make_table("regions", [("r_id", "int"), ("r_name", "varchar(10)")],
                         [(1, "north"), (2, "south"), (3, "east")])
    sales = make_table(
        "sales",
        [("s_id", "int"), ("s_region", "int"), ("s_amount", "decimal(10,2)", True),
         ("s_day", "date"), ("s_kind", "varchar(8)")],
        [
            (1, 1, Decimal("10.50"), date(1995, 1, 3), "retail"),
            (2, 1, Decimal("4.25"), date(1995, 2, 1), "online"),
            (3, 2, None, date(1995, 2, 7), "retail"),
            (4, 2, Decimal("7.00"), date(1996, 3, 9), "retail"),
            (5, 3, Decimal("1.75"), date(1996, 5, 1), "online"),
            (6, 1, Decimal("2.00"), date(1996, 6, 2), "retail"),
        ],
    )
    return {"regions": regions, "sales": sales}


@pytest.fixture
def sales_catalog(sales_tables) -> Catalog:
    return Catalog(tables={n: t.schema for n, t in sales_tables.items()})


@pytest.fixture(scope="session")
def tpch_tables():
    return generate_tables(scale=TINY_SCALE, seed=0)


@pytest.fixture(scope="session")
def tpch_schema() -> Catalog:
    return tpch_catalog()


@pytest.fixture
def data_dir(tmp_path, tpch_tables) -> Path:
    """Stored tiny TPC-H tables, as `ingest`/`generate` would leave them."""
    root = tmp_path / "data"
    for table in tpch_tables.values():
        save_table(table, root)
    return root
