"""
On-disk layout:

    <root>/<table>/meta.json      schema, encodings, scale factors, zone-map params, version
    <root>/<table>/<column>.bin   data section followed by the packed null bitmap

Fixed-width sections can be memory-mapped on load; bit-packed sections are always
unpacked eagerly. Either way the loaded table is identical.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

from querysynth import jsonio
from querysynth.errors import StorageFormatError
from querysynth.models.catalog import ColumnSpec, TableSchema
from querysynth.storage.encoding import (
    ColumnVector, EncodingDecision, EncodingKind, from_encoded, pack_bits, unpack_bits,
)
from querysynth.storage.index import IndexKind
from querysynth.storage.table import ColumnarTable, build_table

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_FILE = "meta.json"


def _data_bytes(vec: ColumnVector) -> tuple[bytes, dict]:
    kind = vec.decision.kind
    if kind in (EncodingKind.DICTIONARY, EncodingKind.BIT_PACKED):
        return pack_bits(vec.data, vec.decision.bit_width or 64), {"layout": "packed"}
    if vec.data.dtype == object:
        encoded = [s.encode("utf-8") for s in vec.data.tolist()]
        lengths = np.fromiter((len(b) for b in encoded), dtype=np.int64, count=len(encoded))
        return lengths.tobytes() + b"".join(encoded), {"layout": "strings"}
    arr = np.ascontiguousarray(vec.data)
    return arr.tobytes(), {"layout": "fixed", "dtype": arr.dtype.str}


def save_table(table: ColumnarTable, root: Path) -> Path:
    out_dir = Path(root) / table.name
    out_dir.mkdir(parents=True, exist_ok=True)
    columns_meta = []
    for spec in table.schema.columns:
        vec = table.columns[spec.name]
        data, layout = _data_bytes(vec)
        nulls = np.packbits(vec.nulls, bitorder="little").tobytes() if vec.nulls is not None else b""
        (out_dir / f"{spec.name}.bin").write_bytes(data + nulls)
        entry = {
            "name": spec.name,
            "type": spec.type_string(),
            "nullable": spec.nullable,
            "encoding": vec.decision.to_json(),
            "data_bytes": len(data),
            "nulls_bytes": len(nulls),
            **layout,
        }
        if vec.dictionary is not None:
            entry["dictionary"] = vec.dictionary.tolist()
        columns_meta.append(entry)

    meta = {
        "format_version": FORMAT_VERSION,
        "table": table.name,
        "row_count": table.row_count,
        "zone_maps": {"block_size": table.block_size, "columns": sorted(table.zone_maps)},
        "indexes": [{"column": idx.column, "kind": idx.kind.value} for idx in table.indexes.values()],
        "columns": columns_meta,
    }
    jsonio.write_json(out_dir / META_FILE, meta)
    logger.info("saved %s (%d rows) to %s", table.name, table.row_count, out_dir)
    return out_dir


def _read_data(path: Path, entry: dict, rows: int, use_mmap: bool) -> np.ndarray:
    layout = entry["layout"]
    if layout == "fixed":
        dtype = np.dtype(entry["dtype"])
        if use_mmap and rows:
            return np.memmap(path, dtype=dtype, mode="r", offset=0, shape=(rows,))
        return np.fromfile(path, dtype=dtype, count=rows)
    raw = path.read_bytes()[: entry["data_bytes"]]
    if layout == "packed":
        return unpack_bits(raw, entry["encoding"].get("bit_width") or 64, rows)
    if layout == "strings":
        lengths = np.frombuffer(raw[: rows * 8], dtype=np.int64)
        out = np.empty(rows, dtype=object)
        pos = rows * 8
        for i, n in enumerate(lengths.tolist()):
            out[i] = raw[pos:pos + n].decode("utf-8")
            pos += n
        return out
    raise StorageFormatError(f"{path}: unknown layout '{layout}'")


def load_table(root: Path, name: str, use_mmap: bool = False) -> ColumnarTable:
    table_dir = Path(root) / name
    meta_path = table_dir / META_FILE
    if not meta_path.exists():
        raise StorageFormatError(f"no storage for table '{name}' under {root}")
    meta = jsonio.read_json(meta_path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise StorageFormatError(
            f"{meta_path}: format version {meta.get('format_version')} != {FORMAT_VERSION}"
        )
    rows = int(meta["row_count"])
    specs = []
    columns: Dict[str, ColumnVector] = {}
    for entry in meta["columns"]:
        spec = ColumnSpec.model_validate(
            {"name": entry["name"], "type": entry["type"], "nullable": entry["nullable"]}
        )
        specs.append(spec)
        path = table_dir / f"{spec.name}.bin"
        data = _read_data(path, entry, rows, use_mmap)
        nulls: Optional[np.ndarray] = None
        if entry["nulls_bytes"]:
            blob = path.read_bytes()[entry["data_bytes"]:]
            nulls = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="little",
                                  count=rows).astype(bool)
        columns[spec.name] = from_encoded(
            spec, EncodingDecision.from_json(entry["encoding"]), data, nulls, entry.get("dictionary"),
        )
    schema = TableSchema(name=meta["table"], columns=specs)
    zm = meta.get("zone_maps", {})
    table = build_table(name, schema, columns, block_size=int(zm.get("block_size", 2048)),
                        zone_maps=bool(zm.get("columns")))
    for idx in meta.get("indexes", []):
        table.ensure_index(idx["column"], IndexKind(idx["kind"]))
    return table


def load_tables(root: Path, names: Iterable[str], use_mmap: bool = False) -> Dict[str, ColumnarTable]:
    return {name: load_table(root, name, use_mmap) for name in names}


def stored_table_names(root: Path) -> list[str]:
    return sorted(p.parent.name for p in Path(root).glob(f"*/{META_FILE}"))
