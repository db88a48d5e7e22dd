class CrowdlocError(Exception):
    pass


class InvalidParameterError(CrowdlocError, ValueError):
    pass


class ValidationError(CrowdlocError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ShapeError(CrowdlocError, ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FormatError(CrowdlocError, ValueError):
    """Malformed DMF1 payload. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BoundsError(CrowdlocError, ValueError):
    pass


class InfeasibleKError(CrowdlocError, ValueError):
    def __init__(self, k, n_distinct):
        super().__init__(f"cannot place {k} centers on {n_distinct} distinct points")
        self.k = k
        self.n_distinct = n_distinct
