"""
orjson helpers. All JSON artifacts go through here so bytes are deterministic.
"""
from decimal import Decimal
from pathlib import Path
from typing import Any

import numpy as np
import orjson

_OPTS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def _default(obj: Any) -> Any:
    if isinstance(obj, Decimal):
        return str(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "model_dump"):
        return obj.model_dump(mode="json")
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj: Any, pretty: bool = False) -> bytes:
    opts = _OPTS | (orjson.OPT_INDENT_2 if pretty else 0)
    return orjson.dumps(obj, default=_default, option=opts)


def dumps_str(obj: Any, pretty: bool = False) -> str:
    return dumps(obj, pretty=pretty).decode("utf-8")


def loads(data: bytes | str) -> Any:
    return orjson.loads(data)


def write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(obj, pretty=True) + b"\n")


def read_json(path: Path) -> Any:
    return orjson.loads(Path(path).read_bytes())


def append_jsonl(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "ab") as fh:
        fh.write(dumps(obj) + b"\n")
