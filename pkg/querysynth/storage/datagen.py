"""
Deterministic TPC-H-shaped data at a fractional scale factor.

Row counts, key relationships and value domains follow the benchmark's rules
closely enough for its queries to be selective in the usual places (market
segments, ship-date windows, colour words in part names, per-order quantity
sums); text columns are short seeded word salads.
"""
import logging
from datetime import date, timedelta
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from querysynth import jsonio
from querysynth.models.catalog import Catalog, TableSchema, dump_catalog
from querysynth.storage.table import ColumnarTable, encode_table
from querysynth.storage.zonemap import DEFAULT_BLOCK_SIZE

logger = logging.getLogger(__name__)

START_DATE = date(1992, 1, 1)
CURRENT_DATE = date(1995, 6, 17)
LAST_ORDER_DATE = date(1998, 8, 2)

REGIONS = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"]
NATIONS = [
    ("ALGERIA", 0), ("ARGENTINA", 1), ("BRAZIL", 1), ("CANADA", 1), ("EGYPT", 4), ("ETHIOPIA", 0),
    ("FRANCE", 3), ("GERMANY", 3), ("INDIA", 2), ("INDONESIA", 2), ("IRAN", 4), ("IRAQ", 4),
    ("JAPAN", 2), ("JORDAN", 4), ("KENYA", 0), ("MOROCCO", 0), ("MOZAMBIQUE", 0), ("PERU", 1),
    ("CHINA", 2), ("ROMANIA", 3), ("SAUDI ARABIA", 4), ("VIETNAM", 2), ("RUSSIA", 3),
    ("UNITED KINGDOM", 3), ("UNITED STATES", 1),
]
SEGMENTS = ["AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"]
PRIORITIES = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"]
SHIP_MODES = ["REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB"]
INSTRUCTIONS = ["DELIVER IN PERSON", "COLLECT COD", "NONE", "TAKE BACK RETURN"]
COLORS = [
    "almond", "antique", "aquamarine", "azure", "beige", "bisque", "black", "blanched", "blue",
    "blush", "brown", "burlywood", "burnished", "chartreuse", "chiffon", "chocolate", "coral",
    "cornflower", "cornsilk", "cream", "cyan", "dark", "deep", "dim", "dodger", "drab", "firebrick",
    "floral", "forest", "frosted", "gainsboro", "ghost", "goldenrod", "green", "grey", "honeydew",
    "hot", "indian", "ivory", "khaki", "lace", "lavender", "lawn", "lemon", "light", "lime", "linen",
    "magenta", "maroon", "medium", "metallic", "midnight", "mint", "misty", "moccasin", "navajo",
    "navy", "olive", "orange", "orchid", "pale", "papaya", "peach", "peru", "pink", "plum", "powder",
    "puff", "purple", "red", "rose", "rosy", "royal", "saddle", "salmon", "sandy", "seashell",
    "sienna", "sky", "slate", "smoke", "snow", "spring", "steel", "tan", "thistle", "tomato",
    "turquoise", "violet", "wheat", "white", "yellow",
]
TYPE_SYLLABLES = (["STANDARD", "SMALL", "MEDIUM", "LARGE", "ECONOMY", "PROMO"],
                  ["ANODIZED", "BURNISHED", "PLATED", "POLISHED", "BRUSHED"],
                  ["TIN", "NICKEL", "BRASS", "STEEL", "COPPER"])
CONTAINERS = (["SM", "LG", "MED", "JUMBO", "WRAP"],
              ["CASE", "BOX", "BAG", "JAR", "PKG", "PACK", "CAN", "DRUM"])
WORDS = ["furiously", "quickly", "carefully", "blithely", "slyly", "final", "regular", "special",
         "pending", "ironic", "express", "bold", "even", "silent", "deposits", "requests", "packages",
         "accounts", "instructions", "theodolites", "pinto", "beans", "foxes", "ideas", "asymptotes"]


def _schema(name: str, columns: List[tuple]) -> TableSchema:
    return TableSchema.model_validate({"name": name, "columns": [{"name": c, "type": t} for c, t in columns]})


def tpch_catalog() -> Catalog:
    tables = [
        _schema("region", [("r_regionkey", "int64"), ("r_name", "char(25)"), ("r_comment", "varchar(152)")]),
        _schema("nation", [("n_nationkey", "int64"), ("n_name", "char(25)"), ("n_regionkey", "int64"),
                           ("n_comment", "varchar(152)")]),
        _schema("supplier", [("s_suppkey", "int64"), ("s_name", "char(25)"), ("s_address", "varchar(40)"),
                             ("s_nationkey", "int64"), ("s_phone", "char(15)"), ("s_acctbal", "decimal(15,2)"),
                             ("s_comment", "varchar(101)")]),
        _schema("customer", [("c_custkey", "int64"), ("c_name", "varchar(25)"), ("c_address", "varchar(40)"),
                             ("c_nationkey", "int64"), ("c_phone", "char(15)"), ("c_acctbal", "decimal(15,2)"),
                             ("c_mktsegment", "char(10)"), ("c_comment", "varchar(117)")]),
        _schema("part", [("p_partkey", "int64"), ("p_name", "varchar(55)"), ("p_mfgr", "char(25)"),
                         ("p_brand", "char(10)"), ("p_type", "varchar(25)"), ("p_size", "int64"),
                         ("p_container", "char(10)"), ("p_retailprice", "decimal(15,2)"),
                         ("p_comment", "varchar(23)")]),
        _schema("partsupp", [("ps_partkey", "int64"), ("ps_suppkey", "int64"), ("ps_availqty", "int64"),
                             ("ps_supplycost", "decimal(15,2)"), ("ps_comment", "varchar(199)")]),
        _schema("orders", [("o_orderkey", "int64"), ("o_custkey", "int64"), ("o_orderstatus", "char(1)"),
                           ("o_totalprice", "decimal(15,2)"), ("o_orderdate", "date"),
                           ("o_orderpriority", "char(15)"), ("o_clerk", "char(15)"),
                           ("o_shippriority", "int64"), ("o_comment", "varchar(79)")]),
        _schema("lineitem", [("l_orderkey", "int64"), ("l_partkey", "int64"), ("l_suppkey", "int64"),
                             ("l_linenumber", "int64"), ("l_quantity", "decimal(15,2)"),
                             ("l_extendedprice", "decimal(15,2)"), ("l_discount", "decimal(15,2)"),
                             ("l_tax", "decimal(15,2)"), ("l_returnflag", "char(1)"),
                             ("l_linestatus", "char(1)"), ("l_shipdate", "date"), ("l_commitdate", "date"),
                             ("l_receiptdate", "date"), ("l_shipinstruct", "char(25)"),
                             ("l_shipmode", "char(10)"), ("l_comment", "varchar(44)")]),
    ]
    return Catalog(tables={t.name: t for t in tables})


def row_counts(scale: float) -> Dict[str, int]:
    def scaled(base: int) -> int:
        return max(1, int(round(base * scale)))

    return {"region": 5, "nation": 25, "supplier": scaled(10_000), "customer": scaled(150_000),
            "part": scaled(200_000), "orders": scaled(1_500_000)}


class _Gen:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def pick(self, choices: List[str], n: int) -> List[str]:
        return [choices[i] for i in self.rng.integers(0, len(choices), n)]

    def text(self, n: int, words: int = 4, width: Optional[int] = None) -> List[str]:
        idx = self.rng.integers(0, len(WORDS), (n, words))
        return [" ".join(WORDS[i] for i in row)[:width].rstrip() for row in idx]

    def money(self, cents: np.ndarray) -> List[Decimal]:
        return [Decimal(int(c)).scaleb(-2) for c in cents]

    def phones(self, nations: np.ndarray) -> List[str]:
        parts = self.rng.integers(100, 1000, (len(nations), 3))
        return [f"{10 + int(k)}-{a}-{b}-{c}{int(c) % 10}" for k, (a, b, c) in zip(nations, parts)]


def _dates(days: np.ndarray) -> List[date]:
    return [START_DATE + timedelta(days=int(d)) for d in days]


def order_key(i: np.ndarray) -> np.ndarray:
    """Sparse order keys: 8 used out of every 32."""
    return (i // 8) * 32 + i % 8 + 1


def retail_cents(partkey: np.ndarray) -> np.ndarray:
    return 90_000 + (partkey // 10) % 20_001 + 100 * (partkey % 1000)


def part_supplier(partkey: np.ndarray, i: int, suppliers: int) -> np.ndarray:
    """The i-th (0..3) supplier of a part; partsupp and lineitem agree on it."""
    return (partkey + i * (suppliers // 4 + (partkey - 1) // suppliers)) % suppliers + 1


def generate_tpch(scale: float = 0.01, seed: int = 0) -> Dict[str, Dict[str, List]]:
    """table -> column -> values, ready for encode_table or the .tbl writer."""
    counts = row_counts(scale)
    g = _Gen(seed)
    out: Dict[str, Dict[str, List]] = {}

    out["region"] = {"r_regionkey": list(range(5)), "r_name": list(REGIONS), "r_comment": g.text(5)}
    out["nation"] = {
        "n_nationkey": list(range(25)), "n_name": [n for n, _ in NATIONS],
        "n_regionkey": [r for _, r in NATIONS], "n_comment": g.text(25),
    }

    s = counts["supplier"]
    s_keys = np.arange(1, s + 1)
    s_nation = g.rng.integers(0, 25, s)
    out["supplier"] = {
        "s_suppkey": s_keys.tolist(), "s_name": [f"Supplier#{k:09d}" for k in s_keys],
        "s_address": g.text(s, 2), "s_nationkey": s_nation.tolist(), "s_phone": g.phones(s_nation),
        "s_acctbal": g.money(g.rng.integers(-99_999, 999_999, s)), "s_comment": g.text(s),
    }

    c = counts["customer"]
    c_keys = np.arange(1, c + 1)
    c_nation = g.rng.integers(0, 25, c)
    out["customer"] = {
        "c_custkey": c_keys.tolist(), "c_name": [f"Customer#{k:09d}" for k in c_keys],
        "c_address": g.text(c, 2), "c_nationkey": c_nation.tolist(), "c_phone": g.phones(c_nation),
        "c_acctbal": g.money(g.rng.integers(-99_999, 999_999, c)), "c_mktsegment": g.pick(SEGMENTS, c),
        "c_comment": g.text(c),
    }

    p = counts["part"]
    p_keys = np.arange(1, p + 1)
    name_idx = np.argsort(g.rng.random((p, len(COLORS))), axis=1)[:, :5]
    mfgr = g.rng.integers(1, 6, p)
    out["part"] = {
        "p_partkey": p_keys.tolist(),
        "p_name": [" ".join(COLORS[i] for i in row) for row in name_idx],
        "p_mfgr": [f"Manufacturer#{m}" for m in mfgr],
        "p_brand": [f"Brand#{m}{b}" for m, b in zip(mfgr, g.rng.integers(1, 6, p))],
        "p_type": [" ".join(t) for t in zip(*(g.pick(list(s_), p) for s_ in TYPE_SYLLABLES))],
        "p_size": g.rng.integers(1, 51, p).tolist(),
        "p_container": [" ".join(t) for t in zip(*(g.pick(list(s_), p) for s_ in CONTAINERS))],
        "p_retailprice": g.money(retail_cents(p_keys)),
        "p_comment": g.text(p, 2, width=23),
    }

    ps_part = np.repeat(p_keys, 4)
    ps_supp = np.concatenate([part_supplier(p_keys, i, s) for i in range(4)]).reshape(4, p).T.reshape(-1)
    out["partsupp"] = {
        "ps_partkey": ps_part.tolist(), "ps_suppkey": ps_supp.tolist(),
        "ps_availqty": g.rng.integers(1, 10_000, 4 * p).tolist(),
        "ps_supplycost": g.money(g.rng.integers(100, 100_001, 4 * p)), "ps_comment": g.text(4 * p),
    }

    o = counts["orders"]
    o_keys = order_key(np.arange(o))
    # two thirds of customers place orders
    active = c_keys[c_keys % 3 != 0] if c >= 3 else c_keys
    o_cust = active[g.rng.integers(0, len(active), o)]
    o_days = g.rng.integers(0, (LAST_ORDER_DATE - START_DATE).days - 151 + 1, o)

    lines = g.rng.integers(1, 8, o)
    total = int(lines.sum())
    l_order_idx = np.repeat(np.arange(o), lines)
    l_number = np.arange(total) - np.repeat(np.cumsum(lines) - lines, lines) + 1
    l_part = g.rng.integers(1, p + 1, total)
    l_supp = np.empty(total, dtype=np.int64)
    which = g.rng.integers(0, 4, total)
    for i in range(4):
        sel = which == i
        l_supp[sel] = part_supplier(l_part[sel], i, s)
    qty = g.rng.integers(1, 51, total)
    ext_cents = qty * retail_cents(l_part)
    disc = g.rng.integers(0, 11, total)          # hundredths
    tax = g.rng.integers(0, 9, total)
    ship_days = o_days[l_order_idx] + g.rng.integers(1, 122, total)
    commit_days = o_days[l_order_idx] + g.rng.integers(30, 91, total)
    receipt_days = ship_days + g.rng.integers(1, 31, total)
    current = (CURRENT_DATE - START_DATE).days
    returned = receipt_days <= current
    flags = np.where(returned, np.where(g.rng.random(total) < 0.5, "R", "A"), "N")
    status = np.where(ship_days > current, "O", "F")

    # o_totalprice = sum(ext * (1 + tax) * (1 - disc)), rounded to cents
    charge = ext_cents * (100 + tax) * (100 - disc)
    o_total = np.zeros(o, dtype=np.int64)
    np.add.at(o_total, l_order_idx, charge)
    o_total = (o_total + 5_000) // 10_000
    open_lines = np.zeros(o, dtype=np.int64)
    np.add.at(open_lines, l_order_idx, (status == "O").astype(np.int64))
    o_status = np.where(open_lines == lines, "O", np.where(open_lines == 0, "F", "P"))

    clerks = max(1, int(round(1000 * scale)))
    out["orders"] = {
        "o_orderkey": o_keys.tolist(), "o_custkey": o_cust.tolist(), "o_orderstatus": o_status.tolist(),
        "o_totalprice": g.money(o_total), "o_orderdate": _dates(o_days),
        "o_orderpriority": g.pick(PRIORITIES, o),
        "o_clerk": [f"Clerk#{k:09d}" for k in g.rng.integers(1, clerks + 1, o)],
        "o_shippriority": [0] * o, "o_comment": g.text(o),
    }
    out["lineitem"] = {
        "l_orderkey": o_keys[l_order_idx].tolist(), "l_partkey": l_part.tolist(), "l_suppkey": l_supp.tolist(),
        "l_linenumber": l_number.tolist(), "l_quantity": [Decimal(int(q)) for q in qty],
        "l_extendedprice": g.money(ext_cents), "l_discount": g.money(disc), "l_tax": g.money(tax),
        "l_returnflag": flags.tolist(), "l_linestatus": status.tolist(),
        "l_shipdate": _dates(ship_days), "l_commitdate": _dates(commit_days),
        "l_receiptdate": _dates(receipt_days), "l_shipinstruct": g.pick(INSTRUCTIONS, total),
        "l_shipmode": g.pick(SHIP_MODES, total), "l_comment": g.text(total, 3),
    }
    return out


def generate_tables(scale: float = 0.01, seed: int = 0,
                    block_size: int = DEFAULT_BLOCK_SIZE) -> Dict[str, ColumnarTable]:
    catalog = tpch_catalog()
    values = generate_tpch(scale, seed)
    return {name: encode_table(name, catalog.table(name), cols, block_size=block_size)
            for name, cols in values.items()}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Decimal):
        return format(value, "f")
    return str(value)


def write_dataset(out_dir: Path, scale: float = 0.01, seed: int = 0, delimiter: str = "|") -> Dict[str, Path]:
    """Write <table>.tbl files and schema.json; returns table -> file path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    catalog = tpch_catalog()
    paths = {}
    for name, cols in generate_tpch(scale, seed).items():
        schema = catalog.table(name)
        path = out_dir / f"{name}.tbl"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for row in zip(*(cols[c] for c in schema.column_names)):
                fh.write(delimiter.join(_cell(v) for v in row) + delimiter + "\n")
        paths[name] = path
        logger.info("generated %s: %d rows", name, len(cols[schema.column_names[0]]))
    jsonio.write_json(out_dir / "schema.json", dump_catalog(catalog))
    return paths
