"""
Exception hierarchy shared by every app.

Management commands map these onto process exit codes (see flows.cli).
"""


class CometError(Exception):
    """Base class for every error raised by the cometflows services."""


# ============================================
# ARGUMENT ERRORS
# ============================================

class ParameterError(CometError, ValueError):
    """A distribution, layer or training parameter is out of range."""


class DomainError(CometError, ValueError):
    """An argument lies outside the domain of the function."""


class ShapeError(CometError, ValueError):
    """Array dimensions do not compose, or a cache no longer matches its parameters."""


# ============================================
# DATA ERRORS
# ============================================

class DataError(CometError, ValueError):
    """Input data cannot support the requested fit or transform."""


class InsufficientDataError(DataError):
    """Too few observations for a fit."""


class InsufficientTailDataError(InsufficientDataError):
    """Too few observations beyond a tail threshold."""

    def __init__(self, tail, count, required, column=None):
        self.tail = tail
        self.count = count
        self.required = required
        self.column = column
        where = f" in column '{column}'" if column else ""
        super().__init__(
            f"{tail} tail{where} has {count} points beyond its threshold, "
            f"at least {required} required; widen the tail quantile"
        )


class DegenerateDataError(DataError):
    """Constant input or zero variance."""

    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)


class CsvFormatError(DataError):
    """Ragged rows or non-numeric cells in a CSV file."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        super().__init__(message)


class MarginalFitError(CometError):
    """A per-column marginal fit failed; carries the column name."""

    def __init__(self, column, cause):
        self.column = column
        self.cause = cause
        super().__init__(f"marginal fit failed for column '{column}': {cause}")


# ============================================
# NUMERICAL ERRORS
# ============================================

class NumericalError(CometError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class FlowNumericalError(NumericalError):
    """A coupling layer produced a non-finite conditioner output."""

    def __init__(self, layer, detail="non-finite conditioner output"):
        self.layer = layer
        super().__init__(f"coupling layer {layer}: {detail}")


class TrainingDivergedError(NumericalError):
    """The training loss became non-finite."""

    def __init__(self, epoch, batch, layer=None, detail="non-finite loss"):
        self.epoch = epoch
        self.batch = batch
        self.layer = layer
        where = f", layer {layer}" if layer is not None else ""
        super().__init__(f"{detail} at epoch {epoch}, batch {batch}{where}")


class UndefinedCoefficientError(CometError, ValueError):
    """The conditioning event of a tail-dependence estimate is empty."""


# ============================================
# MODEL FILE ERRORS
# ============================================

class ModelFileError(CometError):
    """A model file cannot be read back."""


class CorruptModelError(ModelFileError):
    """Unparseable document, missing fields or checksum mismatch."""


class ModelVersionError(ModelFileError):
    """The document carries an unsupported version tag."""
