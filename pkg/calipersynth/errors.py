"""Error taxonomy shared by the library and the command line."""


class CSMError(Exception):
    """Base class for every error raised by calipersynth."""
    exit_code = 1


class CSMInputError(CSMError):
    """Invalid input, configuration or request; the run cannot proceed."""
    exit_code = 2


class SolverFailure(CSMError):
    """An optimization routine failed on a problem it should always solve."""
    exit_code = 3


class ConfigError(CSMInputError):
    pass


class MissingColumn(CSMInputError):
    pass


class NonBinaryTreatment(CSMInputError):
    pass


class NonFiniteValue(CSMInputError):
    pass


class NoTreatedUnits(CSMInputError):
    pass


class NoControlUnits(CSMInputError):
    pass


class DuplicateId(CSMInputError):
    pass


class ConstantNonBinaryColumn(CSMInputError):
    pass


class InvalidCaliperSpec(CSMInputError):
    pass


class DimensionMismatch(CSMInputError):
    pass


class EmptyControlPool(CSMInputError):
    pass


class EmptySubset(CSMInputError):
    pass


class AllZeroWeights(CSMInputError):
    pass


class NoMultiUnitClusters(CSMInputError):
    """No matched set has two or more controls, so S^2 cannot be pooled."""


class InsufficientControls(CSMInputError):
    pass


class SizeLimitExceeded(CSMInputError):
    pass


class LengthMismatch(CSMInputError):
    pass
