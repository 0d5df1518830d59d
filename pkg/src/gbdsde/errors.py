"""Error types shared across the package.

Every error carries a stable ``code`` string so the command line front end can
emit a single machine-parsable line.
"""


class LabError(Exception):
    code = "ERROR"

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


class NearSingularMomentMatrix(LabError, ValueError):
    code = "NEAR_SINGULAR_MOMENT_MATRIX"


class NonmonotoneA(LabError, ValueError):
    code = "NONMONOTONE_A"


class BudgetExceeded(LabError, ValueError):
    code = "BUDGET_EXCEEDED"

    def __init__(self, leaf_count, budget):
        super().__init__(f"tree needs {leaf_count} leaves, budget is {budget}")
        self.leaf_count = leaf_count
        self.budget = budget


class EmptyGrid(LabError, ValueError):
    code = "EMPTY_GRID"


class RegressionRankDeficient(LabError, ArithmeticError):
    code = "REGRESSION_RANK_DEFICIENT"


class NonfiniteValue(LabError, ArithmeticError):
    code = "NONFINITE_VALUE"


class PreconditionDominanceFailed(LabError, ValueError):
    code = "PRECONDITION_DOMINANCE_FAILED"

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConfigInvalid(LabError, ValueError):
    code = "CONFIG_INVALID"


class CatalogMiss(LabError, KeyError):
    code = "CATALOG_MISS"

    def __str__(self):
        return LabError.__str__(self)


class PicardBudgetWarning(UserWarning):
    """Raised as a warning when the Picard loop hits its iteration budget."""

    code = "PICARD_BUDGET_EXHAUSTED"
