"""
Logical AST for the supported analytical SQL subset.

Nodes are frozen dataclasses, so two ASTs are structurally identical iff they
compare equal. `type` is None until the binder fills it in.
"""
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterator, Optional, Tuple

from querysynth.sql.types import SqlType


class Expr:
    type: Optional[SqlType]

    def children(self) -> Tuple["Expr", ...]:
        out = []
        for f in fields(self):
            if f.name == "type":
                continue
            value = getattr(self, f.name)
            if isinstance(value, Expr):
                out.append(value)
            elif isinstance(value, tuple):
                for item in value:
                    if isinstance(item, Expr):
                        out.append(item)
                    elif isinstance(item, tuple):
                        out.extend(x for x in item if isinstance(x, Expr))
        return tuple(out)

    def walk(self) -> Iterator["Expr"]:
        """Pre-order traversal; does not descend into IN-subquery bodies."""
        yield self
        for child in self.children():
            yield from child.walk()

    def with_type(self, type_: SqlType) -> "Expr":
        return replace(self, type=type_)


@dataclass(frozen=True)
class Literal(Expr):
    value: Any  # int | Decimal | float | str | bool | date | None
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class ColumnRef(Expr):
    name: str
    table: Optional[str] = None  # qualifier as written; the FROM alias after binding
    type: Optional[SqlType] = None

    @property
    def qualified(self) -> str:
        return f"{self.table}.{self.name}" if self.table else self.name


@dataclass(frozen=True)
class Star(Expr):
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Arith(Expr):
    op: str  # + - * /
    left: Expr
    right: Expr
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Compare(Expr):
    op: str  # < <= = >= > <>
    left: Expr
    right: Expr
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Between(Expr):
    operand: Expr
    low: Expr
    high: Expr
    negated: bool = False
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class InList(Expr):
    operand: Expr
    items: Tuple[Expr, ...]
    negated: bool = False
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class InSubquery(Expr):
    operand: Expr
    query: "LogicalQuery"
    negated: bool = False
    ordinal: int = -1  # position among the statement's subqueries, set by the binder
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Like(Expr):
    operand: Expr
    pattern: str
    negated: bool = False
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class IsNull(Expr):
    operand: Expr
    negated: bool = False
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class And(Expr):
    items: Tuple[Expr, ...]
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Or(Expr):
    items: Tuple[Expr, ...]
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Case(Expr):
    whens: Tuple[Tuple[Expr, Expr], ...]
    default: Optional[Expr] = None
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Extract(Expr):
    part: str  # year | month | day
    operand: Expr
    type: Optional[SqlType] = None


@dataclass(frozen=True)
class Cast(Expr):
    operand: Expr
    target: SqlType
    type: Optional[SqlType] = None


AGGREGATE_FUNCTIONS = ("sum", "count", "avg", "min", "max")


@dataclass(frozen=True)
class AggCall(Expr):
    func: str
    arg: Optional[Expr] = None  # None for COUNT(*)
    type: Optional[SqlType] = None

    @property
    def star(self) -> bool:
        return self.arg is None


# ===================================================================
# QUERY
# ===================================================================

@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None

    @property
    def binding(self) -> str:
        return self.alias or self.name


@dataclass(frozen=True)
class FromItem:
    table: TableRef
    on: Optional[Expr] = None  # explicit JOIN ... ON condition


@dataclass(frozen=True)
class SelectItem:
    expr: Expr
    alias: Optional[str] = None


@dataclass(frozen=True)
class OrderItem:
    expr: Expr
    desc: bool = False


@dataclass(frozen=True)
class LogicalQuery:
    select: Tuple[SelectItem, ...]
    from_: Tuple[FromItem, ...]
    where: Optional[Expr] = None
    group_by: Tuple[Expr, ...] = ()
    having: Optional[Expr] = None
    order_by: Tuple[OrderItem, ...] = ()
    limit: Optional[int] = None
    source: str = field(default="", compare=False)


# ===================================================================
# HELPERS
# ===================================================================

def conjuncts(expr: Optional[Expr]) -> list:
    if expr is None:
        return []
    if isinstance(expr, And):
        out = []
        for item in expr.items:
            out.extend(conjuncts(item))
        return out
    return [expr]


def contains_aggregate(expr: Expr) -> bool:
    return any(isinstance(node, AggCall) for node in expr.walk())


def column_refs(expr: Expr) -> list:
    return [node for node in expr.walk() if isinstance(node, ColumnRef)]


def referenced_tables(expr: Expr) -> set:
    return {ref.table for ref in column_refs(expr)}


def transform(expr: Expr, fn) -> Expr:
    """Bottom-up rebuild: fn(node_with_rebuilt_children) -> node."""
    changes = {}
    for f in fields(expr):
        if f.name == "type":
            continue
        value = getattr(expr, f.name)
        if isinstance(value, Expr):
            changes[f.name] = transform(value, fn)
        elif isinstance(value, tuple) and value and isinstance(value[0], Expr):
            changes[f.name] = tuple(transform(v, fn) for v in value)
        elif isinstance(value, tuple) and value and isinstance(value[0], tuple):
            changes[f.name] = tuple(tuple(transform(x, fn) for x in pair) for pair in value)
    rebuilt = replace(expr, **changes) if changes else expr
    return fn(rebuilt)
