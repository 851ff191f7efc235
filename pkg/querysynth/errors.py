"""
Exception hierarchy shared by every layer.
"""
from typing import List, Optional


class QuerySynthError(Exception):
    """Base class for all querysynth errors."""


class ConfigError(QuerySynthError):
    pass


# ===================================================================
# STORAGE
# ===================================================================

class IngestError(QuerySynthError):
    def __init__(self, message: str, line: int, column: Optional[str] = None):
        where = f"line {line}" + (f", column '{column}'" if column else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


class EncodingError(QuerySynthError):
    pass


class StorageFormatError(QuerySynthError):
    pass


# ===================================================================
# SQL FRONTEND
# ===================================================================

class SqlSyntaxError(QuerySynthError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"syntax error at line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnsupportedConstructError(QuerySynthError):
    def __init__(self, construct: str):
        super().__init__(f"unsupported: {construct}")
        self.construct = construct


class BindingError(QuerySynthError):
    def __init__(self, message: str, name: Optional[str] = None):
        super().__init__(message)
        self.name = name


# ===================================================================
# EXECUTION
# ===================================================================

class ArithmeticOverflowError(QuerySynthError):
    pass


class KernelContractError(QuerySynthError):
    """A kernel was called outside its preconditions (caller bug)."""


class QueryTimeout(QuerySynthError):
    def __init__(self, limit_s: float, elapsed_s: float):
        super().__init__(f"query exceeded {limit_s:.3f}s (aborted after {elapsed_s:.3f}s)")
        self.limit_s = limit_s
        self.elapsed_s = elapsed_s


class DecisionRejected(QuerySynthError):
    def __init__(self, diagnostics: List["object"]):
        codes = ", ".join(getattr(d, "code", str(d)) for d in diagnostics)
        super().__init__(f"plan decisions rejected: {codes}")
        self.diagnostics = diagnostics


# ===================================================================
# AGENTS
# ===================================================================

class SchemaViolation(QuerySynthError):
    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = errors or []


class AgentTimeout(QuerySynthError):
    pass


class TranscriptExhausted(QuerySynthError):
    pass


class BackendTransportError(QuerySynthError):
    pass


class BudgetExceeded(QuerySynthError):
    pass


class FatalBaselineMismatch(QuerySynthError):
    """The default plan disagrees with the oracle: an internal defect, never swallowed."""


class QueueShutdown(QuerySynthError):
    pass
