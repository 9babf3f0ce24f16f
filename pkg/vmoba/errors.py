from typing import Optional


class VMoBAError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(VMoBAError, ValueError):
    def __init__(self, operation: str, *shapes, detail: str = ""):
        dims = " vs ".join(str(tuple(s)) for s in shapes)
        message = f"{operation}: incompatible shapes {dims}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
        self.operation = operation
        self.shapes = shapes


class EmptyInputError(VMoBAError, ValueError):
    pass


class EmptyAttentionError(VMoBAError, ValueError):
    """A query has no selected key block, so its softmax is undefined."""

    def __init__(self, queries):
        queries = list(queries)
        preview = ", ".join(str(q) for q in queries[:8])
        more = "" if len(queries) <= 8 else f" (+{len(queries) - 8} more)"
        super().__init__(f"queries with zero attended keys: {preview}{more}")
        self.queries = queries


# ============================================================================
# TENSOR FILE FORMAT
# ============================================================================

class TensorFormatError(VMoBAError, ValueError):
    pass


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class ExtentOverflowError(TensorFormatError):
    pass


# ============================================================================
# RUNTIME
# ============================================================================

class ConfigError(VMoBAError, ValueError):
    pass


class DivergenceError(VMoBAError, RuntimeError):
    """Training produced a non-finite loss; `trace` holds everything recorded before the abort."""

    def __init__(self, message: str, trace: Optional[object] = None):
        super().__init__(message)
        self.trace = trace
