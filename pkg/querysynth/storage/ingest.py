"""
Delimited-file ingest (TPC-H `.tbl` style by default).
"""
import csv
import logging
import re
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, BinaryIO, Callable, Dict, Iterator, List

from querysynth.errors import IngestError
from querysynth.models.catalog import ColumnSpec, TableSchema, TypeKind
from querysynth.storage.table import ColumnarTable, encode_table
from querysynth.storage.zonemap import DEFAULT_BLOCK_SIZE

logger = logging.getLogger(__name__)

_INT_RE = re.compile(r"^[+-]?\d+$")
_TRUE = {"true", "t", "1", "yes", "y"}
_FALSE = {"false", "f", "0", "no", "n"}


@dataclass(frozen=True)
class Dialect:
    delimiter: str = "|"
    header: bool = False
    null_token: str = ""


def _parse_int(text: str) -> int:
    if not _INT_RE.match(text.strip()):
        raise ValueError(f"'{text}' is not an integer")
    return int(text)


def _decimal_parser(spec: ColumnSpec) -> Callable[[str], Decimal]:
    scale = spec.scale or 0
    precision = spec.precision or 18

    def parse(text: str) -> Decimal:
        try:
            value = Decimal(text.strip())
        except InvalidOperation:
            raise ValueError(f"'{text}' is not a decimal") from None
        if not value.is_finite():
            raise ValueError(f"'{text}' is not a finite decimal")
        if -value.as_tuple().exponent > scale:
            raise ValueError(f"'{text}' has more than {scale} decimal places")
        if value and value.adjusted() + 1 > precision - scale:
            raise ValueError(f"'{text}' does not fit decimal({precision},{scale})")
        return value.quantize(Decimal(1).scaleb(-scale))

    return parse


def _string_parser(spec: ColumnSpec) -> Callable[[str], str]:
    if spec.length is None:
        return str

    def parse(text: str) -> str:
        if len(text) > spec.length:
            raise ValueError(f"{len(text)} characters, longer than {spec.length}")
        return text

    return parse


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"'{text}' is not a boolean")


def field_parser(spec: ColumnSpec) -> Callable[[str], Any]:
    if spec.type == TypeKind.INT64:
        return _parse_int
    if spec.type == TypeKind.DOUBLE:
        return float
    if spec.type == TypeKind.DECIMAL:
        return _decimal_parser(spec)
    if spec.type == TypeKind.DATE:
        return lambda text: date.fromisoformat(text.strip())
    if spec.type == TypeKind.BOOL:
        return _parse_bool
    return _string_parser(spec)


def _decoded_lines(fh: BinaryIO, schema: TableSchema, delimiter: str) -> Iterator[str]:
    sep = delimiter.encode("utf-8")
    for line_no, raw in enumerate(fh, start=1):
        try:
            yield raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            field = raw[:exc.start].count(sep)
            column = schema.columns[field].name if field < len(schema.columns) else None
            raise IngestError(f"invalid UTF-8 at byte {exc.start}", line_no, column) from None


def read_delimited(path: Path, schema: TableSchema, dialect: Dialect = Dialect()) -> Dict[str, List]:
    """Parse a delimited file into per-column lists of scalars (None for NULL)."""
    parsers = [field_parser(spec) for spec in schema.columns]
    columns: Dict[str, List] = {spec.name: [] for spec in schema.columns}
    sinks = [columns[spec.name] for spec in schema.columns]
    width = len(schema.columns)

    with open(path, "rb") as fh:
        lines = _decoded_lines(fh, schema, dialect.delimiter)
        reader = csv.reader(lines, delimiter=dialect.delimiter, quoting=csv.QUOTE_NONE)
        for line_no, fields in enumerate(reader, start=1):
            if line_no == 1 and dialect.header:
                continue
            if not fields:
                continue
            if len(fields) == width + 1 and fields[-1] == "":
                fields = fields[:-1]
            if len(fields) != width:
                raise IngestError(f"expected {width} fields, found {len(fields)}", line_no)
            for spec, parse, sink, text in zip(schema.columns, parsers, sinks, fields):
                if text == dialect.null_token:
                    if not spec.nullable:
                        raise IngestError("NULL in non-nullable column", line_no, spec.name)
                    sink.append(None)
                    continue
                try:
                    sink.append(parse(text))
                except ValueError as exc:
                    raise IngestError(f"{spec.type_string()}: {exc}", line_no, spec.name) from None
    return columns


def ingest_delimited(path: Path, schema: TableSchema, dialect: Dialect = Dialect(),
                     block_size: int = DEFAULT_BLOCK_SIZE) -> ColumnarTable:
    """One row per record, values parsed per logical type, encodings chosen from stats."""
    values = read_delimited(Path(path), schema, dialect)
    table = encode_table(schema.name, schema, values, block_size=block_size)
    logger.info("ingested %s: %d rows from %s", schema.name, table.row_count, path)
    return table
