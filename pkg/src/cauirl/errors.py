"""Exception types shared across the package.

Configuration and input problems derive from :class:`InputError` (CLI exit
code 2); numerical failures derive from :class:`NumericError` (exit code 3).
"""


class CauirlError(Exception):
    pass


class InputError(CauirlError):
    pass


class FormatError(InputError):
    pass


class CorruptRecordError(FormatError):
    pass


class ConsistencyError(InputError):
    pass


class CapacityError(InputError):
    pass


class ParameterError(InputError, ValueError):
    pass


class DegenerateClassError(ParameterError):
    pass


class CoverageError(InputError):
    pass


class ArchitectureError(InputError):
    pass


class NumericError(CauirlError, ArithmeticError):
    pass


class DecompositionError(NumericError):
    pass
