"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`OvkernError`
and carries a short machine-readable ``code``. The command-line front end maps
the two families below onto exit codes: validation problems (bad shapes, bad
files, bad parameters) exit with 3, numerical failures exit with 4.
"""


class OvkernError(Exception):
    code = "E_OVKERN"


# -- validation family ------------------------------------------------------

class ValidationError(OvkernError, ValueError):
    code = "E_VALIDATION"


class DimensionError(ValidationError):
    code = "E_DIMENSION"


class RangeError(ValidationError):
    code = "E_RANGE"


class ParameterError(ValidationError):
    code = "E_PARAMETER"


class PreconditionError(ParameterError):
    code = "E_PRECONDITION"


class SizeError(ValidationError):
    code = "E_SIZE"


class DataFormatError(ValidationError):
    code = "E_DATA_FORMAT"


class UnsupportedKernelError(ValidationError):
    code = "E_UNSUPPORTED_KERNEL"


class CombinatorError(ValidationError):
    code = "E_COMBINATOR"


# -- numerical family -------------------------------------------------------

class NumericalError(OvkernError, ArithmeticError):
    code = "E_NUMERICAL"


class RootFindingError(NumericalError):
    code = "E_ROOT"


class KernelValidityError(NumericalError):
    code = "E_KERNEL_VALIDITY"


class ConditioningError(NumericalError):
    code = "E_CONDITIONING"

    def __init__(self, message, rcond=None):
        super().__init__(message)
        self.rcond = rcond


class OperatorError(NumericalError):
    code = "E_OPERATOR"
