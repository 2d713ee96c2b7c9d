"""
Exception and warning types raised across plansieve.

Each error also derives from the closest builtin, so callers that only know
about ``ValueError`` or ``KeyError`` keep working.
"""


class PlanSieveError(Exception):
    """Base class for all plansieve errors."""


class SchemaValidationError(PlanSieveError, ValueError):
    """A schema spec violates one of its invariants."""


class UnknownReferenceError(PlanSieveError, KeyError):
    """A table or column is not part of the catalog."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class StructuralError(PlanSieveError, ValueError):
    """The join graph of a query is disconnected (cross products are unsupported)."""


class IncompleteAssignmentError(PlanSieveError, KeyError):
    """A cardinality assignment lacks a subplan that an operation needs."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class MissingContextError(PlanSieveError, ValueError):
    """An estimator needs query context that was not supplied."""


class CapacityError(PlanSieveError, ValueError):
    """A token sequence does not fit into the configured length."""

    def __init__(self, required, available):
        super().__init__(
            "sequence needs {} tokens but max_len is {}".format(required, available)
        )
        self.required = required
        self.available = available


class UnsupportedSchemaError(PlanSieveError, ValueError):
    """The schema has too many tables for the subset vocabulary."""


class ConfigError(PlanSieveError, ValueError):
    """A configuration object is internally inconsistent."""


class InputError(PlanSieveError, ValueError):
    """Model input does not match the model configuration."""


class TrainingError(PlanSieveError, RuntimeError):
    """Training cannot start on the given data."""


class SingleClassWarning(UserWarning):
    """Training or evaluation data contains a single class."""


class BudgetWarning(UserWarning):
    """Workload generation stopped at the retry budget with a partial result."""


class DegenerateCostError(PlanSieveError, ZeroDivisionError):
    """The optimal plan costs nothing while the chosen plan does not."""
