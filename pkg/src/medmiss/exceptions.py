"""Error types raised across the package.

Every failure mode that callers are expected to branch on gets its own
class so the command line tool can map them to distinct exit codes.
"""


class MedmissError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(MedmissError):
    """Invalid option combination or malformed configuration value."""


class RankDeficiencyError(MedmissError):
    """Design matrix (or weighted information) is singular.

    Carries the names of the aliased columns in ``columns``.
    """

    def __init__(self, columns):
        self.columns = tuple(columns)
        super().__init__(
            "rank-deficient design: aliased column(s) %s" % (", ".join(self.columns),)
        )


class EvaluationError(MedmissError):
    """A likelihood or density evaluation produced a non-finite value."""


class DegenerateSubjectError(MedmissError):
    """A subject's latent-class mixture has zero total mass.

    Carries the offending 0-based row index in ``row``.
    """

    def __init__(self, row):
        self.row = int(row)
        super().__init__(
            "zero posterior mass for subject at row %d; no latent class explains "
            "the observed record under the current parameters" % self.row
        )


class UnidentifiableFitError(MedmissError):
    """Average sensitivity + specificity equals 1 exactly; labels undetermined."""


class CorrectionInfeasibleError(MedmissError):
    """Corrected second-moment matrix is not positive definite.

    Carries the offending (smallest) eigenvalue in ``eigenvalue``.
    """

    def __init__(self, eigenvalue):
        self.eigenvalue = float(eigenvalue)
        super().__init__(
            "corrected moment matrix is not positive definite "
            "(smallest eigenvalue %.6g)" % self.eigenvalue
        )


class UnsupportedFamilyError(MedmissError):
    """Requested method or effect scale does not support the outcome family."""


class MissingColumnError(MedmissError):
    """A required column role is absent from the input file."""


class MediatorCodingError(MedmissError):
    """Observed mediator column contains codes outside {0, 1, 2}."""


class MalformedRowError(MedmissError):
    """A CSV data row failed to parse.

    Carries the 1-based data row number in ``row``.
    """

    def __init__(self, row, detail):
        self.row = int(row)
        super().__init__("malformed CSV data row %d: %s" % (self.row, detail))


class OutputError(MedmissError):
    """An output artifact could not be written."""


class SeparationWarning(UserWarning):
    """Logistic fit shows signs of separation (coefficients beyond bound)."""
