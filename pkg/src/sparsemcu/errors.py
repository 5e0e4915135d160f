"""Exception and warning types shared across the toolkit."""


class SparseMcuError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(SparseMcuError, ValueError):
    pass


class UnalignedSparsity(SparseMcuError, ValueError):
    """A tensor was not pruned on block boundaries."""


class CorruptStream(SparseMcuError, ValueError):
    pass


class BadMagic(SparseMcuError, ValueError):
    pass


class BadPackage(SparseMcuError, ValueError):
    pass


class BudgetExceeded(SparseMcuError):
    def __init__(self, report):
        self.report = report
        super().__init__(
            f"model exceeds budget: storage {report.storage_bytes} B "
            f"(limit {report.storage_limit}), memory {report.peak_memory_bytes} B "
            f"(limit {report.memory_limit})"
        )


class ModelFormatError(SparseMcuError, ValueError):
    """Malformed model or config document. ``where`` names the line or field."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


class NoFeasibleSample(SparseMcuError):
    pass


class NoFeasibleSupernet(SparseMcuError):
    pass


class NoFeasibleModel(SparseMcuError):
    pass


class DegenerateRange(UserWarning):
    pass


class OutOfWindow(UserWarning):
    pass
