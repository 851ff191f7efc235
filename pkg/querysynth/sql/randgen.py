"""
Random SELECT statements inside the supported grammar, for differential testing
of compiled plans against the reference interpreter.

Constants are sampled from the stored data so filters are neither always-true
nor always-empty.
"""
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from querysynth.models.catalog import ColumnSpec, TypeKind
from querysynth.storage.encoding import decode_value
from querysynth.storage.table import ColumnarTable

NUMERIC = (TypeKind.INT64, TypeKind.DECIMAL, TypeKind.DOUBLE)

# (left table, left column, right table, right column)
TPCH_JOINS: Tuple[Tuple[str, str, str, str], ...] = (
    ("orders", "o_custkey", "customer", "c_custkey"),
    ("lineitem", "l_orderkey", "orders", "o_orderkey"),
    ("lineitem", "l_partkey", "part", "p_partkey"),
    ("lineitem", "l_suppkey", "supplier", "s_suppkey"),
    ("customer", "c_nationkey", "nation", "n_nationkey"),
    ("supplier", "s_nationkey", "nation", "n_nationkey"),
    ("nation", "n_regionkey", "region", "r_regionkey"),
    ("partsupp", "ps_partkey", "part", "p_partkey"),
)


@dataclass
class RandomQuery:
    sql: str
    tables: List[str]
    aggregate: bool


def _literal(value) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, date):
        return f"date '{value.isoformat()}'"
    if isinstance(value, Decimal):
        return format(value, "f")
    return repr(value) if isinstance(value, float) else str(value)


class QueryGenerator:
    def __init__(self, tables: Mapping[str, ColumnarTable], rng: np.random.Generator,
                 joins: Sequence[Tuple[str, str, str, str]] = TPCH_JOINS):
        self.tables = tables
        self.rng = rng
        self.joins = [j for j in joins if j[0] in tables and j[2] in tables]

    def _choice(self, items):
        return items[int(self.rng.integers(len(items)))]

    def _sample(self, table: str, column: str):
        t = self.tables[table]
        if t.row_count == 0:
            return None
        return decode_value(t.column(column), int(self.rng.integers(t.row_count)))

    def _columns(self, table: str, kinds: Optional[Sequence[TypeKind]] = None) -> List[ColumnSpec]:
        cols = self.tables[table].schema.columns
        return [c for c in cols if kinds is None or c.type in kinds]

    def _table_set(self) -> Tuple[List[str], List[str]]:
        names = sorted(self.tables)
        if not self.joins or self.rng.random() < 0.4:
            return [self._choice(names)], []
        chosen = [self._choice(self.joins)]
        if self.rng.random() < 0.5:
            touching = [j for j in self.joins if j is not chosen[0] and
                        ({j[0], j[2]} & {chosen[0][0], chosen[0][2]}) and
                        not {j[0], j[2]} <= {chosen[0][0], chosen[0][2]}]
            if touching:
                chosen.append(self._choice(touching))
        tables: List[str] = []
        for lt, _, rt, _ in chosen:
            for t in (lt, rt):
                if t not in tables:
                    tables.append(t)
        conditions = [f"{lt}.{lc} = {rt}.{rc}" for lt, lc, rt, rc in chosen]
        return tables, conditions

    def _filter(self, table: str) -> Optional[str]:
        col = self._choice(self._columns(table))
        ref = f"{table}.{col.name}"
        value = self._sample(table, col.name)
        if value is None:
            return f"{ref} is null"
        if col.type in (TypeKind.VARCHAR, TypeKind.CHAR):
            if self.rng.random() < 0.5 and value:
                return f"{ref} like {_literal(value[: max(1, len(value) // 2)] + '%')}"
            other = self._sample(table, col.name)
            if other is not None and other != value and self.rng.random() < 0.5:
                return f"{ref} in ({_literal(value)}, {_literal(other)})"
            return f"{ref} = {_literal(value)}"
        if col.type == TypeKind.BOOL:
            return f"{ref} = {'true' if value else 'false'}"
        op = self._choice(["<", "<=", ">", ">=", "=", "<>"])
        if self.rng.random() < 0.2:
            other = self._sample(table, col.name)
            if other is not None:
                lo, hi = sorted([value, other])
                return f"{ref} between {_literal(lo)} and {_literal(hi)}"
        return f"{ref} {op} {_literal(value)}"

    def generate(self) -> RandomQuery:
        tables, conditions = self._table_set()
        filters = [f for f in (self._filter(self._choice(tables))
                               for _ in range(int(self.rng.integers(0, 3)))) if f]
        where = conditions + filters
        aggregate = bool(self.rng.random() < 0.6)

        if aggregate:
            keys = []
            for _ in range(int(self.rng.integers(0, 3))):
                t = self._choice(tables)
                key = f"{t}.{self._choice(self._columns(t)).name}"
                if key not in keys:
                    keys.append(key)
            aggs = ["count(*)"]
            for _ in range(int(self.rng.integers(1, 4))):
                t = self._choice(tables)
                numeric = self._columns(t, NUMERIC)
                func = self._choice(["sum", "avg", "min", "max", "count"])
                if func in ("sum", "avg") and not numeric:
                    func = "count"
                col = self._choice(numeric) if func in ("sum", "avg") else self._choice(self._columns(t))
                aggs.append(f"{func}({t}.{col.name})")
            items = keys + [f"{a} as agg{i}" for i, a in enumerate(aggs)]
            sql = f"select {', '.join(items)} from {', '.join(tables)}"
            if where:
                sql += " where " + " and ".join(where)
            if keys:
                sql += " group by " + ", ".join(keys)
                if self.rng.random() < 0.3:
                    sql += " having count(*) > 1"
                sql += " order by " + ", ".join(f"{k} {self._choice(['asc', 'desc'])}" for k in keys)
        else:
            cols = []
            for t in tables:
                picked = self._columns(t)
                for i in self.rng.permutation(len(picked))[: int(self.rng.integers(1, 3))]:
                    cols.append(f"{t}.{picked[int(i)].name}")
            sql = f"select {', '.join(cols)} from {', '.join(tables)}"
            if where:
                sql += " where " + " and ".join(where)
            if self.rng.random() < 0.5:
                sql += " order by " + ", ".join(cols)
        if self.rng.random() < 0.3:
            sql += f" limit {int(self.rng.integers(1, 50))}"
        return RandomQuery(sql=sql, tables=tables, aggregate=aggregate)


def random_queries(tables: Mapping[str, ColumnarTable], count: int, seed: int = 0) -> List[RandomQuery]:
    gen = QueryGenerator(tables, np.random.default_rng(seed))
    return [gen.generate() for _ in range(count)]
